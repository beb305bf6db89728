#include "cfp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>

namespace cfp {

namespace {

std::size_t shape_product(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) {
            throw std::invalid_argument("Tensor: negative dimension in shape " + shape_str(s));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_product(shape) != data.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(std::vector<int> s) {
    const std::size_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> s, double value) {
    const std::size_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> d) { return Tensor({rows, cols}, std::move(d)); }

int Tensor::rows() const {
    if (rank() != 2) {
        throw std::invalid_argument("Tensor::rows: rank-2 tensor required, got shape " + shape_str(shape));
    }
    return shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) {
        throw std::invalid_argument("Tensor::cols: rank-2 tensor required, got shape " + shape_str(shape));
    }
    return shape[1];
}

double& Tensor::operator()(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

double Tensor::operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!all_finite(t)) {
        throw NumericError("non-finite value in " + what);
    }
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
}

double l2_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("l2_distance: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    double s = 0.0;
    for (int i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double linf_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("linf_distance: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    }
    double m = 0.0;
    for (int i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw std::invalid_argument("dot: length mismatch");
    }
    double s = 0.0;
    for (int i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

double sum(const Tensor& t) { return std::accumulate(t.data.begin(), t.data.end(), 0.0); }

double mean(const Tensor& t) { return t.numel() ? sum(t) / t.numel() : 0.0; }

Tensor clamp01(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace cfp
