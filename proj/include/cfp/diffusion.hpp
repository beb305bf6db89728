#pragma once

#include <cstdint>
#include <vector>

#include "cfp/mlp.hpp"
#include "cfp/params.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Time grid convention: arrays have T entries indexed t = 0..T-1.
// alpha_bars[t] = prod_{j=0..t} (1 - betas[j]). Deterministic forward
// abduction performs the T-1 transitions t -> t+1; the reverse pass mirrors
// them back down to t = 0. The "latent" lives at index T-1.

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max);
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

// [0,1] pixel space <-> [-1,1] signal space used inside the samplers.
Tensor to_signal(const Tensor& x01);
Tensor from_signal(const Tensor& xs);

// Sinusoidal timestep features of fixed dimension.
std::vector<double> time_embedding(int t, int dim);

// Noise predictor: MLP on [signal image, time embedding].
struct DenoiserModel {
    MlpSpec spec;
    ParamSet params;
    int image_dim = 0;
    int time_dim = 0;
};

DenoiserModel make_denoiser(int image_dim, const std::vector<int>& hidden, int time_dim, Rng& rng);

// Batch noise prediction at one timestep; rows of x_signal are images.
Tensor denoiser_predict(const DenoiserModel& model, const Tensor& x_signal, int t);

// One denoising-score-matching batch: per-row uniform t, fresh Gaussian eps.
struct DdpmBatch {
    Tensor input;  // [B, m + time_dim]: noised signal next to its t features
    Tensor eps;    // [B, m] injected noise (regression target)
};
DdpmBatch ddpm_noise_batch(const NoiseSchedule& sched, const Tensor& clean01, int time_dim, Rng& rng);

// Mean squared error per coordinate between predicted and injected noise.
NodePtr ddpm_loss_graph(const VarMap& vars, const MlpSpec& spec, const DdpmBatch& batch);

// Builds a batch, takes one Adam step on the model, returns the loss.
double ddpm_train_step(DenoiserModel& model, const NoiseSchedule& sched, const Tensor& clean01, Rng& rng,
                       const AdamConfig& adam);

// Deterministic forward abduction of a batch (images in [0,1]); returns the
// signal-space trajectory xs[0..T-1], where xs[T-1] is the latent.
std::vector<Tensor> abduct_trajectory(const Tensor& x01, const DenoiserModel& model, const NoiseSchedule& sched);
Tensor abduct(const Tensor& x01, const DenoiserModel& model, const NoiseSchedule& sched);

// One guided reverse transition x_t -> x_{t-1} (signal space, batch).
// `guidance` holds d/dx log p(y_cf | x_t) rows; s >= 0 scales it.
Tensor guided_reverse_step(const Tensor& x_t, int t, const DenoiserModel& model, const NoiseSchedule& sched,
                           const Tensor& guidance, double s);

// Full unguided reverse pass from the latent back to pixel space [0,1].
Tensor reverse_unguided(const Tensor& latent_signal, const DenoiserModel& model, const NoiseSchedule& sched);

}  // namespace cfp
