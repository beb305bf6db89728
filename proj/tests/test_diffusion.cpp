#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cfloat>
#include <cmath>
#include <string>

#include "cfp/diffusion.hpp"
#include "cfp/params.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

using namespace cfp;

namespace {

Tensor random_images(int b, int m, Rng& rng, double lo = 0.1, double hi = 0.9) {
    Tensor t = Tensor::zeros({b, m});
    for (int i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

void zero_params(ParamSet& p) {
    for (const auto& [name, t] : p.tensors()) p.set(name, Tensor::zeros(t.shape));
}

}  // namespace

TEST_CASE("betas [0.1, 0.1] give alpha_bars [0.9, 0.81]") {
    NoiseSchedule s = schedule_from_betas({0.1, 0.1});
    CHECK(s.T == 2);
    CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bars[1] == doctest::Approx(0.81).epsilon(1e-15));
    NoiseSchedule s3 = schedule_from_betas({0.1, 0.1, 0.1});
    CHECK(s3.alpha_bars[2] == doctest::Approx(0.729).epsilon(1e-15));
}

TEST_CASE("make_schedule interpolates betas linearly and validates its range") {
    NoiseSchedule s = make_schedule(5, 0.001, 0.05);
    CHECK(s.betas.front() == doctest::Approx(0.001));
    CHECK(s.betas.back() == doctest::Approx(0.05));
    CHECK(s.betas[2] == doctest::Approx(0.5 * (0.001 + 0.05)));
    CHECK_THROWS_AS(make_schedule(1, 0.001, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(5, 0.0, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(5, 0.1, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(5, 0.001, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(schedule_from_betas({0.1}), std::invalid_argument);
    CHECK_THROWS_AS(schedule_from_betas({0.1, 1.5}), std::invalid_argument);
}

TEST_CASE("alpha_bars decrease strictly, stay in (0,1), and obey the recurrence") {
    NoiseSchedule s = make_schedule(50, 0.001, 0.30);
    for (int t = 0; t < s.T; ++t) {
        CHECK(s.alpha_bars[static_cast<std::size_t>(t)] > 0.0);
        CHECK(s.alpha_bars[static_cast<std::size_t>(t)] < 1.0);
        if (t >= 1) {
            CHECK(s.alpha_bars[static_cast<std::size_t>(t)] < s.alpha_bars[static_cast<std::size_t>(t) - 1]);
            const double want =
                s.alpha_bars[static_cast<std::size_t>(t) - 1] * (1.0 - s.betas[static_cast<std::size_t>(t)]);
            CHECK(s.alpha_bars[static_cast<std::size_t>(t)] == doctest::Approx(want).epsilon(1e-15));
        }
    }
    // Telescoping: the end-to-end shrink factor is the product of the later betas.
    double prod = 1.0;
    for (int t = 1; t < s.T; ++t) prod *= 1.0 - s.betas[static_cast<std::size_t>(t)];
    CHECK(std::abs(s.alpha_bars[static_cast<std::size_t>(s.T) - 1] / s.alpha_bars[0] - prod) < 1e-12);
}

TEST_CASE("signal-space mapping is an exact involution") {
    Rng rng(3);
    Tensor x = random_images(4, 9, rng, 0.0, 1.0);
    Tensor back = from_signal(to_signal(x));
    for (int i = 0; i < x.numel(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-15));
    CHECK(to_signal(Tensor::vector({0.0}))[0] == -1.0);
    CHECK(to_signal(Tensor::vector({1.0}))[0] == 1.0);
}

TEST_CASE("time embeddings are deterministic, bounded, and time-discriminating") {
    const std::vector<double> a = time_embedding(7, 16);
    const std::vector<double> b = time_embedding(7, 16);
    CHECK(a == b);
    CHECK(a.size() == 16);
    for (double v : a) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(time_embedding(8, 16) != a);
    CHECK_THROWS_AS(time_embedding(3, 5), std::invalid_argument);
    CHECK_THROWS_AS(time_embedding(3, 0), std::invalid_argument);
}

TEST_CASE("zero-noise model: one forward transition from abar 0.81 to 0.729 scales by sqrt(0.9)") {
    NoiseSchedule sched = schedule_from_betas({0.19, 0.1});  // alpha_bars [0.81, 0.729]
    REQUIRE(sched.alpha_bars[0] == doctest::Approx(0.81).epsilon(1e-15));
    REQUIRE(sched.alpha_bars[1] == doctest::Approx(0.729).epsilon(1e-15));
    Rng rng(1);
    DenoiserModel model = make_denoiser(8, {4}, 4, rng);
    zero_params(model.params);
    Tensor x01 = Tensor::zeros({1, 8});
    x01(0, 0) = 1.0;  // signal row [1, 0, ..., 0]
    for (int j = 1; j < 8; ++j) x01(0, j) = 0.5;
    std::vector<Tensor> traj = abduct_trajectory(x01, model, sched);
    REQUIRE(traj.size() == 2);
    CHECK(traj[1](0, 0) == doctest::Approx(std::sqrt(0.9)).epsilon(1e-12));
    for (int j = 1; j < 8; ++j) CHECK(traj[1](0, j) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("zero-noise model telescopes to sqrt(abar_last/abar_0) over the whole grid") {
    NoiseSchedule sched = make_schedule(10, 0.01, 0.2);
    Rng rng(2);
    DenoiserModel model = make_denoiser(6, {5}, 4, rng);
    zero_params(model.params);
    Tensor x01 = random_images(3, 6, rng);
    Tensor latent = abduct(x01, model, sched);
    const double k = std::sqrt(sched.alpha_bars.back() / sched.alpha_bars.front());
    Tensor sig = to_signal(x01);
    for (int i = 0; i < latent.numel(); ++i) CHECK(std::abs(latent[i] - k * sig[i]) < 1e-12);
}

TEST_CASE("zero-noise model round-trips exactly") {
    NoiseSchedule sched = make_schedule(50, 0.001, 0.30);
    Rng rng(4);
    DenoiserModel model = make_denoiser(12, {7}, 4, rng);
    zero_params(model.params);
    Tensor x01 = random_images(5, 12, rng);
    Tensor back = reverse_unguided(abduct(x01, model, sched), model, sched);
    for (int i = 0; i < x01.numel(); ++i) CHECK(std::abs(back[i] - x01[i]) < 1e-12);
}

TEST_CASE("s = 0 annihilates the guidance term bit-for-bit") {
    NoiseSchedule sched = make_schedule(8, 0.01, 0.1);
    Rng rng(5);
    DenoiserModel model = make_denoiser(10, {8}, 4, rng);
    Tensor x = random_images(2, 10, rng);
    Tensor g = Tensor::zeros({2, 10});
    for (int i = 0; i < g.numel(); ++i) g[i] = rng.gaussian();
    Tensor guided = guided_reverse_step(x, 3, model, sched, g, 0.0);
    Tensor plain = guided_reverse_step(x, 3, model, sched, Tensor::zeros({2, 10}), 0.0);
    for (int i = 0; i < guided.numel(); ++i) CHECK(guided[i] == plain[i]);
}

TEST_CASE("guided step applies the adjusted noise in both transition terms") {
    NoiseSchedule sched = make_schedule(8, 0.01, 0.1);
    Rng rng(6);
    DenoiserModel model = make_denoiser(10, {8}, 4, rng);
    Tensor x = random_images(2, 10, rng);
    Tensor g = Tensor::zeros({2, 10});
    for (int i = 0; i < g.numel(); ++i) g[i] = rng.gaussian();
    const int t = 5;
    const double s = 2.5;
    Tensor got = guided_reverse_step(x, t, model, sched, g, s);

    // Hand-rolled transition with eps adjusted once and reused in both terms.
    Tensor eps = denoiser_predict(model, x, t);
    const double ab_cur = sched.alpha_bars[t], ab_prev = sched.alpha_bars[t - 1];
    const double n_cur = std::sqrt(1.0 - ab_cur);
    Tensor want = x;
    for (int i = 0; i < x.numel(); ++i) {
        const double e = eps[i] - s * n_cur * g[i];
        const double x0_hat = (x[i] - n_cur * e) / std::sqrt(ab_cur);
        want[i] = std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * e;
    }
    for (int i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));

    // ...and differs from the one-term variant that leaves the mean unadjusted.
    bool differs = false;
    for (int i = 0; i < x.numel() && !differs; ++i) {
        const double x0_hat = (x[i] - n_cur * eps[i]) / std::sqrt(ab_cur);
        const double one_term = std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * (eps[i] - s * n_cur * g[i]);
        differs = std::abs(one_term - got[i]) > 1e-9;
    }
    CHECK(differs);
}

TEST_CASE("guided step validates scale, timestep, and guidance shape") {
    NoiseSchedule sched = make_schedule(8, 0.01, 0.1);
    Rng rng(7);
    DenoiserModel model = make_denoiser(10, {8}, 4, rng);
    Tensor x = random_images(2, 10, rng);
    Tensor g = Tensor::zeros({2, 10});
    CHECK_THROWS_AS(guided_reverse_step(x, 3, model, sched, g, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(guided_reverse_step(x, 0, model, sched, g, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(guided_reverse_step(x, 8, model, sched, g, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(guided_reverse_step(x, 3, model, sched, Tensor::zeros({2, 9}), 1.0), std::invalid_argument);
}

TEST_CASE("noising batch has the right shapes and is seed-deterministic") {
    NoiseSchedule sched = make_schedule(10, 0.01, 0.2);
    Rng rng_a(9), rng_b(9);
    Tensor clean = random_images(6, 10, rng_a, 0.0, 1.0);
    Rng ra(11), rb(11);
    DdpmBatch a = ddpm_noise_batch(sched, clean, 4, ra);
    DdpmBatch b = ddpm_noise_batch(sched, clean, 4, rb);
    CHECK(a.input.rows() == 6);
    CHECK(a.input.cols() == 14);
    CHECK(a.eps.rows() == 6);
    CHECK(a.eps.cols() == 10);
    for (int i = 0; i < a.input.numel(); ++i) CHECK(a.input[i] == b.input[i]);
    for (int i = 0; i < a.eps.numel(); ++i) CHECK(a.eps[i] == b.eps[i]);
}

TEST_CASE("a model that outputs the injected noise exactly has zero loss") {
    Rng rng(12);
    DenoiserModel model = make_denoiser(6, {5}, 4, rng);
    DdpmBatch batch;
    batch.input = random_images(4, 10, rng, -1.0, 1.0);  // 6 signal + 4 time columns
    batch.eps = mlp_apply(model.params, model.spec, batch.input);
    GradResult r = forward_and_grad(model.params,
                                    [&](const VarMap& vars) { return ddpm_loss_graph(vars, model.spec, batch); });
    CHECK(r.loss == 0.0);
}

TEST_CASE("a zero-output model scores about one per coordinate against unit noise") {
    NoiseSchedule sched = make_schedule(20, 0.001, 0.2);
    Rng rng(13);
    DenoiserModel model = make_denoiser(64, {8}, 4, rng);
    zero_params(model.params);
    Tensor clean = random_images(128, 64, rng, 0.0, 1.0);
    Rng noise_rng(14);
    const DdpmBatch batch = ddpm_noise_batch(sched, clean, model.time_dim, noise_rng);
    GradResult r = forward_and_grad(model.params,
                                    [&](const VarMap& vars) { return ddpm_loss_graph(vars, model.spec, batch); });
    CHECK(r.loss == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("training steps reduce the denoising loss on a tiny world") {
    NoiseSchedule sched = make_schedule(10, 0.01, 0.2);
    Rng init(15);
    DenoiserModel model = make_denoiser(16, {32}, 4, init);
    Rng data(16);
    Tensor clean = random_images(32, 16, data, 0.0, 1.0);
    Rng train(17);
    AdamConfig adam;
    adam.lr = 3e-3;
    double first = 0.0, last = 0.0;
    const int kSteps = 200, kWindow = 20;
    for (int i = 0; i < kSteps; ++i) {
        const double loss = ddpm_train_step(model, sched, clean, train, adam);
        if (i < kWindow) first += loss;
        if (i >= kSteps - kWindow) last += loss;
    }
    CHECK(model.params.step_count() == kSteps);
    CHECK(last / kWindow < first / kWindow);
    CHECK(last / kWindow < 1.0);  // beats the predict-zero baseline
}

TEST_CASE("non-finite forward intermediates name the failing timestep") {
    NoiseSchedule sched = schedule_from_betas({0.9999, 0.5, 0.5});
    Rng rng(18);
    DenoiserModel model = make_denoiser(4, {3}, 4, rng);
    zero_params(model.params);
    // Output bias DBL_MAX: at abar ~ 1e-4 the transition divides by 1e-2 and
    // overflows on the very first step.
    Tensor huge = Tensor::zeros({4});
    for (int i = 0; i < 4; ++i) huge[i] = DBL_MAX;
    model.params.set("den.b1", huge);
    Tensor x01 = Tensor::zeros({1, 4});
    try {
        (void)abduct(x01, model, sched);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("abduction step t=0") != std::string::npos);
    }
    try {
        (void)guided_reverse_step(Tensor::zeros({1, 4}), 1, model, sched, Tensor::zeros({1, 4}), 0.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("reverse step t=1") != std::string::npos);
    }
}

TEST_CASE("denoiser output shape matches its input image shape") {
    Rng rng(19);
    DenoiserModel model = make_denoiser(9, {6, 6}, 4, rng);
    Tensor x = random_images(3, 9, rng, -1.0, 1.0);
    Tensor eps = denoiser_predict(model, x, 2);
    CHECK(eps.rows() == 3);
    CHECK(eps.cols() == 9);
    CHECK_THROWS_AS(denoiser_predict(model, Tensor::zeros({3, 8}), 2), std::invalid_argument);
}
