// Times the OpenMP matmul kernels against their serial references and checks
// the results stay bit-identical (same per-row routine, same accumulation
// order, so any thread count must reproduce the serial bytes exactly).

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "cfp/kernels.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace {

using cfp::Tensor;

Tensor random_matrix(int rows, int cols, cfp::Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (auto& v : t.data) v = rng.gaussian();
    return t;
}

double time_best_of(const std::function<Tensor()>& fn, int reps, Tensor* result) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor out = fn();
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (dt < best) best = dt;
        *result = std::move(out);
    }
    return best;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
    int size = 384;
    int reps = 5;
    if (argc > 1) size = std::atoi(argv[1]);
    if (argc > 2) reps = std::atoi(argv[2]);
    if (size < 1 || reps < 1) {
        std::fprintf(stderr, "usage: %s [size] [reps]\n", argv[0]);
        return 2;
    }

    std::printf("openmp: %s, threads: %d, size: %dx%d, best of %d\n", cfp::openmp_enabled() ? "yes" : "no",
                cfp::kernel_threads(), size, size, reps);

    cfp::Rng rng(42);
    const Tensor a = random_matrix(size, size, rng);
    const Tensor b = random_matrix(size, size, rng);

    struct Case {
        const char* name;
        std::function<Tensor()> parallel;
        std::function<Tensor()> serial;
    };
    const std::vector<Case> cases = {
        {"matmul", [&] { return cfp::matmul(a, b); }, [&] { return cfp::matmul_serial(a, b); }},
        {"matmul_nt", [&] { return cfp::matmul_nt(a, b); }, [&] { return cfp::matmul_nt_serial(a, b); }},
        {"matmul_tn", [&] { return cfp::matmul_tn(a, b); }, [&] { return cfp::matmul_tn_serial(a, b); }},
    };

    bool all_equal = true;
    for (const auto& c : cases) {
        Tensor par, ser;
        const double tp = time_best_of(c.parallel, reps, &par);
        const double ts = time_best_of(c.serial, reps, &ser);
        const bool equal = bitwise_equal(par, ser);
        all_equal = all_equal && equal;
        std::printf("%-10s parallel %8.2f ms   serial %8.2f ms   speedup %5.2fx   bitwise %s\n", c.name, tp * 1e3,
                    ts * 1e3, ts / tp, equal ? "EQUAL" : "DIFFER");
    }
    if (!all_equal) {
        std::fprintf(stderr, "FAIL: parallel kernels diverged from the serial reference\n");
        return 1;
    }
    return 0;
}
