#pragma once

#include <cstdint>
#include <vector>

#include "cfp/diffusion.hpp"
#include "cfp/mlp.hpp"
#include "cfp/params.hpp"
#include "cfp/rng.hpp"

namespace cfp {

// Timestep-conditioned classifier p(y | x_t, t) trained on noised images so
// its log-probability gradients are in-distribution at every reverse step.
// All image inputs here live in signal space ([-1,1]), matching the
// samplers; convert clean [0,1] pixels with to_signal() first.

struct AntiCausalClassifier {
    MlpSpec spec;
    ParamSet params;
    int image_dim = 0;
    int time_dim = 0;
    int num_classes = 0;
};

AntiCausalClassifier make_classifier(int image_dim, const std::vector<int>& hidden, int time_dim, int num_classes,
                                     Rng& rng);

// Raw logits for a batch of signal-space images at one timestep.
Tensor class_logits(const AntiCausalClassifier& clf, const Tensor& x_signal, int t);

// Softmax probabilities, batch [B,K] and single-image convenience form.
Tensor class_probs(const AntiCausalClassifier& clf, const Tensor& x_signal, int t);
std::vector<double> predict_probs(const AntiCausalClassifier& clf, const std::vector<double>& x_signal, int t);

// Cross-entropy training graph over a prepared (noised input, label) batch.
NodePtr classifier_loss_graph(const VarMap& vars, const MlpSpec& spec, const Tensor& input,
                              const std::vector<int>& labels, double smoothing);

// Noised-input batch with per-row uniform timesteps (includes t = 0).
Tensor classifier_noise_batch(const NoiseSchedule& sched, const Tensor& clean01, int time_dim,
                              const std::vector<int>& rows, std::vector<int>* labels_out,
                              const std::vector<int>& all_labels, Rng& rng);

struct ClassifierTrainReport {
    double final_loss = 0.0;
    double clean_train_accuracy = 0.0;  // argmax accuracy at t = 0 on the training images
};

ClassifierTrainReport train_classifier(AntiCausalClassifier& clf, const NoiseSchedule& sched, const Tensor& images01,
                                       const std::vector<int>& labels, int steps, int batch_size, double smoothing,
                                       Rng& rng, const AdamConfig& adam, std::vector<double>* loss_history = nullptr);

double clean_accuracy(const AntiCausalClassifier& clf, const Tensor& images01, const std::vector<int>& labels);

// d/dx log p(y_target | x, t) for every row; the guidance signal of the
// reverse sampler.
Tensor log_prob_grad_batch(const AntiCausalClassifier& clf, const Tensor& x_signal, int t,
                           const std::vector<int>& y_targets);
Tensor log_prob_grad(const AntiCausalClassifier& clf, const std::vector<double>& x_signal, int t, int y_target);

}  // namespace cfp
