#include "cfp/anticausal.hpp"

#include <cmath>

namespace cfp {

namespace {

void require_signal_batch(const AntiCausalClassifier& clf, const Tensor& x, const char* who) {
    if (x.rank() != 2 || x.cols() != clf.image_dim) {
        throw std::invalid_argument(std::string(who) + ": expected [batch, " + std::to_string(clf.image_dim) +
                                    "] signal images, got " + shape_str(x.shape));
    }
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor probs = logits;
    const int b = logits.rows(), k = logits.cols();
    for (int i = 0; i < b; ++i) {
        double mx = probs(i, 0);
        for (int j = 1; j < k; ++j) mx = std::max(mx, probs(i, j));
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            probs(i, j) = std::exp(probs(i, j) - mx);
            z += probs(i, j);
        }
        for (int j = 0; j < k; ++j) probs(i, j) /= z;
    }
    return probs;
}

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

AntiCausalClassifier make_classifier(int image_dim, const std::vector<int>& hidden, int time_dim, int num_classes,
                                     Rng& rng) {
    if (num_classes < 2) throw std::invalid_argument("make_classifier: need at least 2 classes");
    AntiCausalClassifier clf;
    clf.image_dim = image_dim;
    clf.time_dim = time_dim;
    clf.num_classes = num_classes;
    clf.spec.prefix = "clf.";
    clf.spec.widths.push_back(image_dim + time_dim);
    for (int h : hidden) clf.spec.widths.push_back(h);
    clf.spec.widths.push_back(num_classes);
    mlp_init(clf.params, clf.spec, rng);
    return clf;
}

Tensor class_logits(const AntiCausalClassifier& clf, const Tensor& x_signal, int t) {
    require_signal_batch(clf, x_signal, "class_logits");
    return mlp_apply(clf.params, clf.spec, with_time_features(x_signal, t, clf.time_dim));
}

Tensor class_probs(const AntiCausalClassifier& clf, const Tensor& x_signal, int t) {
    return softmax_rows(class_logits(clf, x_signal, t));
}

std::vector<double> predict_probs(const AntiCausalClassifier& clf, const std::vector<double>& x_signal, int t) {
    Tensor x({1, static_cast<int>(x_signal.size())}, x_signal);
    const Tensor probs = class_probs(clf, x, t);
    return probs.data;
}

NodePtr classifier_loss_graph(const VarMap& vars, const MlpSpec& spec, const Tensor& input,
                              const std::vector<int>& labels, double smoothing) {
    NodePtr logits = mlp_graph(vars, spec, constant(input, "clf_input"));
    return cross_entropy_logits(logits, labels, smoothing);
}

Tensor classifier_noise_batch(const NoiseSchedule& sched, const Tensor& clean01, int time_dim,
                              const std::vector<int>& rows, std::vector<int>* labels_out,
                              const std::vector<int>& all_labels, Rng& rng) {
    const int m = clean01.cols();
    Tensor input = Tensor::zeros({static_cast<int>(rows.size()), m + time_dim});
    if (labels_out) labels_out->clear();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        if (r < 0 || r >= clean01.rows()) throw std::invalid_argument("classifier_noise_batch: row out of range");
        const int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.T)));
        const double s = std::sqrt(sched.alpha_bars[static_cast<std::size_t>(t)]);
        const double noise = std::sqrt(1.0 - sched.alpha_bars[static_cast<std::size_t>(t)]);
        const std::vector<double> emb = time_embedding(t, time_dim);
        for (int j = 0; j < m; ++j) {
            const double x0 = 2.0 * clean01(r, j) - 1.0;
            input(static_cast<int>(i), j) = s * x0 + noise * rng.gaussian();
        }
        for (int j = 0; j < time_dim; ++j) input(static_cast<int>(i), m + j) = emb[static_cast<std::size_t>(j)];
        if (labels_out) labels_out->push_back(all_labels[static_cast<std::size_t>(r)]);
    }
    return input;
}

ClassifierTrainReport train_classifier(AntiCausalClassifier& clf, const NoiseSchedule& sched, const Tensor& images01,
                                       const std::vector<int>& labels, int steps, int batch_size, double smoothing,
                                       Rng& rng, const AdamConfig& adam, std::vector<double>* loss_history) {
    if (images01.rows() != static_cast<int>(labels.size())) {
        throw std::invalid_argument("train_classifier: image/label count mismatch");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= clf.num_classes) throw std::invalid_argument("train_classifier: label out of range");
    }
    ClassifierTrainReport report;
    for (int step = 0; step < steps; ++step) {
        std::vector<int> rows(static_cast<std::size_t>(batch_size));
        for (auto& r : rows) r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(images01.rows())));
        std::vector<int> batch_labels;
        const Tensor input = classifier_noise_batch(sched, images01, clf.time_dim, rows, &batch_labels, labels, rng);
        GradResult g = forward_and_grad(clf.params, [&](const VarMap& vars) {
            return classifier_loss_graph(vars, clf.spec, input, batch_labels, smoothing);
        });
        adam_step(clf.params, g.grads, adam);
        report.final_loss = g.loss;
        if (loss_history) loss_history->push_back(g.loss);
    }
    report.clean_train_accuracy = clean_accuracy(clf, images01, labels);
    return report;
}

double clean_accuracy(const AntiCausalClassifier& clf, const Tensor& images01, const std::vector<int>& labels) {
    const Tensor probs = class_probs(clf, to_signal(images01), 0);
    int hits = 0;
    for (int i = 0; i < probs.rows(); ++i) {
        int arg = 0;
        for (int j = 1; j < probs.cols(); ++j) {
            if (probs(i, j) > probs(i, arg)) arg = j;
        }
        if (arg == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return probs.rows() ? static_cast<double>(hits) / probs.rows() : 0.0;
}

Tensor log_prob_grad_batch(const AntiCausalClassifier& clf, const Tensor& x_signal, int t,
                           const std::vector<int>& y_targets) {
    require_signal_batch(clf, x_signal, "log_prob_grad");
    if (static_cast<int>(y_targets.size()) != x_signal.rows()) {
        throw std::invalid_argument("log_prob_grad: one target class per row required");
    }
    for (int y : y_targets) {
        if (y < 0 || y >= clf.num_classes) throw std::invalid_argument("log_prob_grad: target class out of range");
    }
    const int b = x_signal.rows();
    VarMap vars = const_vars(clf.params);
    NodePtr x = leaf(x_signal, "x_t");
    const std::vector<double> emb = time_embedding(t, clf.time_dim);
    Tensor emb_rows = Tensor::zeros({b, clf.time_dim});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < clf.time_dim; ++j) emb_rows(i, j) = emb[static_cast<std::size_t>(j)];
    NodePtr input = concat_cols({x, constant(emb_rows, "t_emb")});
    NodePtr logits = mlp_graph(vars, clf.spec, input);
    // Mean cross-entropy is (1/B) * sum_i -log p(y_i | x_i); rows are
    // independent, so each row's log-prob gradient is -B times its slice.
    NodePtr loss = cross_entropy_logits(logits, y_targets, 0.0);
    backward(loss);
    Tensor grad = x->grad;
    for (double& v : grad.data) v *= -static_cast<double>(b);
    return grad;
}

Tensor log_prob_grad(const AntiCausalClassifier& clf, const std::vector<double>& x_signal, int t, int y_target) {
    Tensor x({1, static_cast<int>(x_signal.size())}, x_signal);
    Tensor g = log_prob_grad_batch(clf, x, t, {y_target});
    return Tensor({static_cast<int>(x_signal.size())}, g.data);
}

}  // namespace cfp
