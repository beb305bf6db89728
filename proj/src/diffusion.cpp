#include "cfp/diffusion.hpp"

#include <cmath>
#include <string>

namespace cfp {

namespace {

void require_images(const Tensor& x, int m, const char* who) {
    if (x.rank() != 2 || x.cols() != m) {
        throw std::invalid_argument(std::string(who) + ": expected [batch, " + std::to_string(m) + "] images, got " +
                                    shape_str(x.shape));
    }
}

// x_next = sqrt(ab_next) * (x - sqrt(1-ab_cur)*eps) / sqrt(ab_cur)
//        + sqrt(1-ab_next) * eps
// One shared transition for both directions: forward uses (cur, next) =
// (t, t+1), reverse uses (t, t-1) with the guidance-adjusted eps.
Tensor ddim_transition(const Tensor& x, const Tensor& eps, double ab_cur, double ab_next) {
    Tensor out = x;
    const double s_cur = std::sqrt(ab_cur), n_cur = std::sqrt(1.0 - ab_cur);
    const double s_next = std::sqrt(ab_next), n_next = std::sqrt(1.0 - ab_next);
    for (int i = 0; i < out.numel(); ++i) {
        const double x0_hat = (x[i] - n_cur * eps[i]) / s_cur;
        out[i] = s_next * x0_hat + n_next * eps[i];
    }
    return out;
}

}  // namespace

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
    if (betas.size() < 2) throw std::invalid_argument("schedule: need at least 2 steps");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = betas;
    s.alpha_bars.resize(betas.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < betas.size(); ++t) {
        if (!(betas[t] > 0.0 && betas[t] < 1.0)) {
            throw std::invalid_argument("schedule: betas must lie in (0,1)");
        }
        prod *= 1.0 - betas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be at least 2");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        betas[static_cast<std::size_t>(t)] = beta_min + (beta_max - beta_min) * t / (T - 1);
    }
    return schedule_from_betas(betas);
}

Tensor to_signal(const Tensor& x01) {
    Tensor out = x01;
    for (double& v : out.data) v = 2.0 * v - 1.0;
    return out;
}

Tensor from_signal(const Tensor& xs) {
    Tensor out = xs;
    for (double& v : out.data) v = 0.5 * (v + 1.0);
    return out;
}

std::vector<double> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time_embedding: dimension must be even and >= 2");
    std::vector<double> emb(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        emb[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
        emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return emb;
}

DenoiserModel make_denoiser(int image_dim, const std::vector<int>& hidden, int time_dim, Rng& rng) {
    if (image_dim < 1) throw std::invalid_argument("make_denoiser: bad image dimension");
    DenoiserModel model;
    model.image_dim = image_dim;
    model.time_dim = time_dim;
    model.spec.prefix = "den.";
    model.spec.widths.push_back(image_dim + time_dim);
    for (int h : hidden) model.spec.widths.push_back(h);
    model.spec.widths.push_back(image_dim);
    mlp_init(model.params, model.spec, rng);
    return model;
}

namespace {

// [B, m] + t -> [B, m + time_dim] with the embedding repeated per row.
Tensor with_time_features(const Tensor& x_signal, int t, int time_dim) {
    const std::vector<double> emb = time_embedding(t, time_dim);
    const int b = x_signal.rows(), m = x_signal.cols();
    Tensor input = Tensor::zeros({b, m + time_dim});
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < m; ++j) input(i, j) = x_signal(i, j);
        for (int j = 0; j < time_dim; ++j) input(i, m + j) = emb[static_cast<std::size_t>(j)];
    }
    return input;
}

}  // namespace

Tensor denoiser_predict(const DenoiserModel& model, const Tensor& x_signal, int t) {
    require_images(x_signal, model.image_dim, "denoiser_predict");
    return mlp_apply(model.params, model.spec, with_time_features(x_signal, t, model.time_dim));
}

DdpmBatch ddpm_noise_batch(const NoiseSchedule& sched, const Tensor& clean01, int time_dim, Rng& rng) {
    if (clean01.rank() != 2) throw std::invalid_argument("ddpm_noise_batch: rank-2 batch required");
    const int b = clean01.rows(), m = clean01.cols();
    const Tensor x0 = to_signal(clean01);
    DdpmBatch batch;
    batch.input = Tensor::zeros({b, m + time_dim});
    batch.eps = Tensor::zeros({b, m});
    for (int i = 0; i < b; ++i) {
        const int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.T)));
        const double s = std::sqrt(sched.alpha_bars[static_cast<std::size_t>(t)]);
        const double n = std::sqrt(1.0 - sched.alpha_bars[static_cast<std::size_t>(t)]);
        const std::vector<double> emb = time_embedding(t, time_dim);
        for (int j = 0; j < m; ++j) {
            const double e = rng.gaussian();
            batch.eps(i, j) = e;
            batch.input(i, j) = s * x0(i, j) + n * e;
        }
        for (int j = 0; j < time_dim; ++j) batch.input(i, m + j) = emb[static_cast<std::size_t>(j)];
    }
    return batch;
}

NodePtr ddpm_loss_graph(const VarMap& vars, const MlpSpec& spec, const DdpmBatch& batch) {
    NodePtr pred = mlp_graph(vars, spec, constant(batch.input, "ddpm_input"));
    NodePtr diff = sub(pred, constant(batch.eps, "ddpm_eps"));
    return mean_all(mul(diff, diff));
}

double ddpm_train_step(DenoiserModel& model, const NoiseSchedule& sched, const Tensor& clean01, Rng& rng,
                       const AdamConfig& adam) {
    const DdpmBatch batch = ddpm_noise_batch(sched, clean01, model.time_dim, rng);
    GradResult r = forward_and_grad(model.params,
                                    [&](const VarMap& vars) { return ddpm_loss_graph(vars, model.spec, batch); });
    adam_step(model.params, r.grads, adam);
    return r.loss;
}

std::vector<Tensor> abduct_trajectory(const Tensor& x01, const DenoiserModel& model, const NoiseSchedule& sched) {
    require_images(x01, model.image_dim, "abduct");
    std::vector<Tensor> traj;
    traj.reserve(static_cast<std::size_t>(sched.T));
    traj.push_back(to_signal(x01));
    for (int t = 0; t + 1 < sched.T; ++t) {
        try {
            const Tensor eps = denoiser_predict(model, traj.back(), t);
            Tensor next = ddim_transition(traj.back(), eps, sched.alpha_bars[static_cast<std::size_t>(t)],
                                          sched.alpha_bars[static_cast<std::size_t>(t) + 1]);
            check_finite(next, "abduction output");
            traj.push_back(std::move(next));
        } catch (const NumericError& e) {
            throw NumericError("abduction step t=" + std::to_string(t) + ": " + e.what());
        }
    }
    return traj;
}

Tensor abduct(const Tensor& x01, const DenoiserModel& model, const NoiseSchedule& sched) {
    return abduct_trajectory(x01, model, sched).back();
}

Tensor guided_reverse_step(const Tensor& x_t, int t, const DenoiserModel& model, const NoiseSchedule& sched,
                           const Tensor& guidance, double s) {
    if (s < 0.0) throw std::invalid_argument("guided_reverse_step: guidance scale must be >= 0");
    if (t < 1 || t >= sched.T) {
        throw std::invalid_argument("guided_reverse_step: t must lie in [1, T-1]");
    }
    require_images(x_t, model.image_dim, "guided_reverse_step");
    if (!guidance.same_shape(x_t)) {
        throw std::invalid_argument("guided_reverse_step: guidance shape " + shape_str(guidance.shape) +
                                    " does not match images " + shape_str(x_t.shape));
    }
    try {
        Tensor eps = denoiser_predict(model, x_t, t);
        const double n_cur = std::sqrt(1.0 - sched.alpha_bars[static_cast<std::size_t>(t)]);
        // Adjusted noise drives both the mean and the direction term.
        for (int i = 0; i < eps.numel(); ++i) eps[i] -= s * n_cur * guidance[i];
        Tensor prev = ddim_transition(x_t, eps, sched.alpha_bars[static_cast<std::size_t>(t)],
                                      sched.alpha_bars[static_cast<std::size_t>(t) - 1]);
        check_finite(prev, "reverse output");
        return prev;
    } catch (const NumericError& e) {
        throw NumericError("reverse step t=" + std::to_string(t) + ": " + e.what());
    }
}

Tensor reverse_unguided(const Tensor& latent_signal, const DenoiserModel& model, const NoiseSchedule& sched) {
    Tensor x = latent_signal;
    const Tensor zero = Tensor::zeros(x.shape);
    for (int t = sched.T - 1; t >= 1; --t) {
        x = guided_reverse_step(x, t, model, sched, zero, 0.0);
    }
    return clamp01(from_signal(x));
}

}  // namespace cfp
