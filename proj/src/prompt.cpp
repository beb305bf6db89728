#include "cfp/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cfp/kernels.hpp"

namespace cfp {

namespace {

MlpSpec meta_net_spec(int embed_dim) {
    const int hidden = std::max(1, embed_dim / 2);
    return MlpSpec{{embed_dim, hidden, embed_dim}, "meta.", "tanh"};
}

// Mirrors the row_l2_normalize autodiff op exactly (same accumulation order,
// same zero-norm guard) so the fast path stays bit-identical to the graph.
Tensor l2_normalize_rows(Tensor x) {
    const int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += x(i, j) * x(i, j);
        const double norm = std::sqrt(s);
        if (norm < 1e-300) throw NumericError("zero-norm row in row_l2_normalize");
        for (int j = 0; j < n; ++j) x(i, j) /= norm;
    }
    return x;
}

// Gaussian elimination with partial pivoting; A is [k,k], rhs [k,w].
Tensor solve_linear(Tensor a, Tensor rhs) {
    const int k = a.rows(), w = rhs.cols();
    for (int col = 0; col < k; ++col) {
        int pivot = col;
        for (int r = col + 1; r < k; ++r) {
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        }
        if (std::fabs(a(pivot, col)) < 1e-12) throw NumericError("singular system in prompt projection calibration");
        if (pivot != col) {
            for (int j = 0; j < k; ++j) std::swap(a(col, j), a(pivot, j));
            for (int j = 0; j < w; ++j) std::swap(rhs(col, j), rhs(pivot, j));
        }
        const double inv = 1.0 / a(col, col);
        for (int r = 0; r < k; ++r) {
            if (r == col) continue;
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            for (int j = col; j < k; ++j) a(r, j) -= f * a(col, j);
            for (int j = 0; j < w; ++j) rhs(r, j) -= f * rhs(col, j);
        }
    }
    Tensor out = Tensor::zeros({k, w});
    for (int r = 0; r < k; ++r) {
        for (int j = 0; j < w; ++j) out(r, j) = rhs(r, j) / a(r, r);
    }
    return out;
}

Tensor tile_row(const Tensor& m, int row, int copies) {
    Tensor out = Tensor::zeros({copies, m.cols()});
    for (int i = 0; i < copies; ++i) {
        for (int j = 0; j < m.cols(); ++j) out(i, j) = m(row, j);
    }
    return out;
}

void validate_class_set(const PromptState& state, const std::vector<int>& class_set) {
    if (class_set.empty()) throw std::invalid_argument("prompt loss: empty class set");
    std::vector<int> seen;
    for (int c : class_set) {
        if (c < 0 || c >= state.num_classes) {
            throw std::invalid_argument("class id " + std::to_string(c) + " outside [0," +
                                        std::to_string(state.num_classes) + ")");
        }
        if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
            throw std::invalid_argument("duplicate class id " + std::to_string(c) + " in class set");
        }
        seen.push_back(c);
    }
}

int position_in(const std::vector<int>& class_set, int label) {
    const auto it = std::find(class_set.begin(), class_set.end(), label);
    if (it == class_set.end()) {
        throw std::invalid_argument("label " + std::to_string(label) + " is not in the active class set");
    }
    return static_cast<int>(it - class_set.begin());
}

void validate_embeddings(const PromptState& state, const Tensor& v, const char* what) {
    if (v.rank() != 2 || v.cols() != state.embed_dim) {
        throw std::invalid_argument(std::string(what) + ": expected [N," + std::to_string(state.embed_dim) +
                                    "] embeddings, got " + shape_str(v.shape));
    }
}

// One embedding graph per distinct class, shared by every loss term.
std::map<int, NodePtr> embed_per_class(const VarMap& vars, const PromptState& state, const NodePtr& v_node,
                                       const std::vector<int>& classes) {
    std::map<int, NodePtr> out;
    for (int c : classes) {
        if (!out.count(c)) out.emplace(c, prompt_embed_graph(vars, state, v_node, c));
    }
    return out;
}

NodePtr basic_from_embeds(const PromptState& state, const NodePtr& v_node, const std::map<int, NodePtr>& embeds,
                          const std::vector<int>& labels, const std::vector<int>& class_set) {
    std::vector<NodePtr> cols;
    cols.reserve(class_set.size());
    for (int c : class_set) {
        cols.push_back(scale(rowwise_dot(v_node, embeds.at(c)), 1.0 / state.tau));
    }
    std::vector<int> positions;
    positions.reserve(labels.size());
    for (int lab : labels) positions.push_back(position_in(class_set, lab));
    return cross_entropy_logits(stack_cols(cols), positions);
}

NodePtr cf_from_embeds(const PromptState& state, const NodePtr& v_node, const NodePtr& vcf_node,
                       const std::map<int, NodePtr>& embeds, const std::vector<int>& labels) {
    const int rows = v_node->value.rows();
    std::vector<int> distinct;
    for (int lab : labels) {
        if (std::find(distinct.begin(), distinct.end(), lab) == distinct.end()) distinct.push_back(lab);
    }
    // Row i must score against its own label's prompt; constant 0/1 masks
    // select the right per-class column without a gather op.
    NodePtr a, b;
    for (int c : distinct) {
        Tensor mask = Tensor::zeros({rows});
        for (int i = 0; i < rows; ++i) {
            if (labels[static_cast<std::size_t>(i)] == c) mask[i] = 1.0;
        }
        const NodePtr mask_node = constant(mask, "label_mask");
        const NodePtr fa = mul(rowwise_dot(v_node, embeds.at(c)), mask_node);
        const NodePtr fb = mul(rowwise_dot(vcf_node, embeds.at(c)), mask_node);
        a = a ? add(a, fa) : fa;
        b = b ? add(b, fb) : fb;
    }
    return mean_all(softplus(scale(sub(b, a), 1.0 / state.tau)));
}

}  // namespace

EncoderState pretrain_image_encoder(const Tensor& images01, const std::vector<int>& labels, int num_classes,
                                    const std::vector<int>& hidden, int embed_dim, int steps, int batch_size,
                                    Rng& rng, const AdamConfig& adam) {
    if (images01.rank() != 2) throw std::invalid_argument("pretrain_image_encoder: rank-2 image batch required");
    const int n = images01.rows();
    if (static_cast<int>(labels.size()) != n) {
        throw std::invalid_argument("pretrain_image_encoder: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " images");
    }
    if (num_classes < 2) throw std::invalid_argument("pretrain_image_encoder: need at least 2 classes");
    if (embed_dim < 2) throw std::invalid_argument("pretrain_image_encoder: embed_dim must be >= 2");
    if (steps < 1 || batch_size < 1) throw std::invalid_argument("pretrain_image_encoder: steps and batch must be >= 1");
    for (int lab : labels) {
        if (lab < 0 || lab >= num_classes) {
            throw std::invalid_argument("pretrain_image_encoder: label " + std::to_string(lab) + " outside [0," +
                                        std::to_string(num_classes) + ")");
        }
    }

    MlpSpec trunk;
    trunk.widths.push_back(images01.cols());
    trunk.widths.insert(trunk.widths.end(), hidden.begin(), hidden.end());
    trunk.widths.push_back(embed_dim);
    trunk.prefix = "enc.";
    const MlpSpec head{{embed_dim, num_classes}, "head.", "tanh"};

    ParamSet all;
    mlp_init(all, trunk, rng);
    mlp_init(all, head, rng);

    const int cols = images01.cols();
    for (int step = 0; step < steps; ++step) {
        Tensor xb = Tensor::zeros({batch_size, cols});
        std::vector<int> yb(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            const int r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
            for (int j = 0; j < cols; ++j) xb(i, j) = images01(r, j);
            yb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(r)];
        }
        const GradResult res = forward_and_grad(all, [&](const VarMap& vars) {
            const NodePtr x = constant(xb, "images");
            return cross_entropy_logits(mlp_graph(vars, head, mlp_graph(vars, trunk, x)), yb);
        });
        adam_step(all, res.grads, adam);
    }

    EncoderState enc;
    enc.spec = trunk;
    enc.image_dim = cols;
    enc.embed_dim = embed_dim;
    for (const auto& [name, value] : all.tensors()) {
        if (name.rfind("enc.", 0) == 0) enc.params.add(name, value);  // head is dropped here
    }
    enc.checksum = param_checksum(enc.params);
    return enc;
}

Tensor encode(const EncoderState& enc, const Tensor& images01) {
    if (images01.rank() != 2 || images01.cols() != enc.image_dim) {
        throw std::invalid_argument("encode: expected [N," + std::to_string(enc.image_dim) + "] images, got " +
                                    shape_str(images01.shape));
    }
    return l2_normalize_rows(mlp_apply(enc.params, enc.spec, images01));
}

PromptState make_prompt_state(int num_classes, int embed_dim, int prompt_length, double tau, std::uint64_t seed,
                              const Tensor* prototypes) {
    if (num_classes < 2) throw std::invalid_argument("make_prompt_state: need at least 2 classes");
    if (embed_dim < 2) throw std::invalid_argument("make_prompt_state: embed_dim must be >= 2");
    if (prompt_length < 1) throw std::invalid_argument("make_prompt_state: prompt_length must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("make_prompt_state: temperature must be positive");
    if (prototypes && (prototypes->rank() != 2 || prototypes->rows() != num_classes || prototypes->cols() != embed_dim)) {
        throw std::invalid_argument("make_prompt_state: prototypes must be [classes, embed_dim], got " +
                                    shape_str(prototypes->shape));
    }

    PromptState state;
    state.num_classes = num_classes;
    state.embed_dim = embed_dim;
    state.prompt_length = prompt_length;
    state.tau = tau;

    Rng tok_rng(seed_for(seed, "prompt-tokens"));
    state.class_tokens = Tensor::zeros({num_classes, embed_dim});
    for (double& x : state.class_tokens.data) x = tok_rng.gaussian();

    const int cat_dim = (prompt_length + 1) * embed_dim;
    Rng proj_rng(seed_for(seed, "prompt-projection"));
    state.projection = Tensor::zeros({cat_dim, embed_dim});
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cat_dim));
    for (double& x : state.projection.data) x = proj_scale * proj_rng.gaussian();

    if (prototypes) {
        // Calibrate the token block: solve token_c^T P_tok = prototype_c for
        // all c at once (minimum-norm P_tok through the K x K Gram system).
        const Tensor& tok = state.class_tokens;
        Tensor gram = matmul_nt_serial(tok, tok);  // [K, K]
        const Tensor w = solve_linear(gram, *prototypes);
        const Tensor p_tok = matmul_tn_serial(tok, w);  // [d, d]
        for (int r = 0; r < embed_dim; ++r) {
            for (int j = 0; j < embed_dim; ++j) state.projection(prompt_length * embed_dim + r, j) = p_tok(r, j);
        }
    }

    Rng ctx_rng(seed_for(seed, "prompt-context"));
    Tensor ctx = Tensor::zeros({prompt_length, embed_dim});
    for (double& x : ctx.data) x = 0.02 * ctx_rng.gaussian();
    state.learnable.add("ctx", ctx);

    Rng meta_rng(seed_for(seed, "prompt-meta"));
    const MlpSpec meta = meta_net_spec(embed_dim);
    mlp_init(state.learnable, meta, meta_rng);
    // Zeroing the output layer makes prompts instance-independent at init;
    // conditioning is learned, not imposed by a random warp.
    const int last = meta.layer_count() - 1;
    state.learnable.set("meta.w" + std::to_string(last),
                        Tensor::zeros(state.learnable.at("meta.w" + std::to_string(last)).shape));
    state.learnable.set("meta.b" + std::to_string(last),
                        Tensor::zeros(state.learnable.at("meta.b" + std::to_string(last)).shape));

    state.frozen_checksum = prompt_frozen_checksum(state);

    // Distinct tokens through a full-rank projection must give distinct
    // prompt embeddings, otherwise two classes are indistinguishable.
    const Tensor origin = Tensor::zeros({1, embed_dim});
    std::vector<Tensor> embeds;
    embeds.reserve(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) embeds.push_back(prompt_embed(state, origin, c));
    for (int c1 = 0; c1 < num_classes; ++c1) {
        for (int c2 = c1 + 1; c2 < num_classes; ++c2) {
            if (l2_distance(embeds[static_cast<std::size_t>(c1)], embeds[static_cast<std::size_t>(c2)]) < 1e-6) {
                throw std::runtime_error("prompt embeddings for classes " + std::to_string(c1) + " and " +
                                         std::to_string(c2) + " collide after projection; use a different seed");
            }
        }
    }
    return state;
}

std::uint64_t prompt_frozen_checksum(const PromptState& state) {
    std::uint64_t h = fnv1a64(state.class_tokens.data.data(), state.class_tokens.data.size() * sizeof(double));
    h = fnv1a64(state.projection.data.data(), state.projection.data.size() * sizeof(double), h);
    return h;
}

Tensor prompt_embed(const PromptState& state, const Tensor& v, int cls) {
    validate_embeddings(state, v, "prompt_embed");
    if (cls < 0 || cls >= state.num_classes) {
        throw std::invalid_argument("prompt_embed: class id " + std::to_string(cls) + " outside [0," +
                                    std::to_string(state.num_classes) + ")");
    }
    const int b = v.rows(), d = state.embed_dim, len = state.prompt_length;
    const Tensor pi = mlp_apply(state.learnable, meta_net_spec(d), v);
    const Tensor& ctx = state.learnable.at("ctx");
    Tensor cat = Tensor::zeros({b, (len + 1) * d});
    for (int i = 0; i < b; ++i) {
        for (int l = 0; l < len; ++l) {
            for (int j = 0; j < d; ++j) cat(i, l * d + j) = pi(i, j) + ctx(l, j);
        }
        for (int j = 0; j < d; ++j) cat(i, len * d + j) = state.class_tokens(cls, j);
    }
    return l2_normalize_rows(matmul(cat, state.projection));
}

NodePtr prompt_embed_graph(const VarMap& vars, const PromptState& state, const NodePtr& v_node, int cls) {
    if (cls < 0 || cls >= state.num_classes) {
        throw std::invalid_argument("prompt_embed_graph: class id " + std::to_string(cls) + " outside [0," +
                                    std::to_string(state.num_classes) + ")");
    }
    const int b = v_node->value.rows();
    const NodePtr pi = mlp_graph(vars, meta_net_spec(state.embed_dim), v_node);
    const NodePtr ctx = var_get(vars, "ctx");
    std::vector<NodePtr> blocks;
    blocks.reserve(static_cast<std::size_t>(state.prompt_length) + 1);
    for (int l = 0; l < state.prompt_length; ++l) blocks.push_back(add_rowvec(pi, pick_row(ctx, l)));
    blocks.push_back(constant(tile_row(state.class_tokens, cls, b), "class_token"));
    return row_l2_normalize(matmul(concat_cols(blocks), constant(state.projection, "prompt_projection")));
}

NodePtr loss_basic_graph(const VarMap& vars, const PromptState& state, const Tensor& v,
                         const std::vector<int>& labels, const std::vector<int>& class_set) {
    validate_embeddings(state, v, "loss_basic");
    validate_class_set(state, class_set);
    if (labels.size() != static_cast<std::size_t>(v.rows())) {
        throw std::invalid_argument("loss_basic: label count does not match batch size");
    }
    const NodePtr v_node = constant(v, "embeddings");
    const auto embeds = embed_per_class(vars, state, v_node, class_set);
    return basic_from_embeds(state, v_node, embeds, labels, class_set);
}

double loss_basic(const PromptState& state, const Tensor& v, const std::vector<int>& labels,
                  const std::vector<int>& class_set) {
    return loss_basic_graph(const_vars(state.learnable), state, v, labels, class_set)->value[0];
}

NodePtr loss_cf_graph(const VarMap& vars, const PromptState& state, const Tensor& v, const Tensor& v_cf,
                      const std::vector<int>& labels) {
    validate_embeddings(state, v, "loss_cf");
    if (!v_cf.same_shape(v)) {
        throw std::invalid_argument("loss_cf: counterfactual batch shape " + shape_str(v_cf.shape) +
                                    " does not match factual batch " + shape_str(v.shape));
    }
    if (labels.size() != static_cast<std::size_t>(v.rows())) {
        throw std::invalid_argument("loss_cf: label count does not match batch size");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= state.num_classes) {
            throw std::invalid_argument("loss_cf: label " + std::to_string(lab) + " outside [0," +
                                        std::to_string(state.num_classes) + ")");
        }
    }
    const NodePtr v_node = constant(v, "embeddings");
    const NodePtr vcf_node = constant(v_cf, "cf_embeddings");
    const auto embeds = embed_per_class(vars, state, v_node, labels);
    return cf_from_embeds(state, v_node, vcf_node, embeds, labels);
}

double loss_cf(const PromptState& state, const Tensor& v, const Tensor& v_cf, const std::vector<int>& labels) {
    return loss_cf_graph(const_vars(state.learnable), state, v, v_cf, labels)->value[0];
}

NodePtr total_loss_graph(const VarMap& vars, const PromptState& state, const Tensor& v, const Tensor& v_cf,
                         const std::vector<int>& labels, const std::vector<int>& class_set, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be non-negative");
    validate_embeddings(state, v, "total_loss");
    if (!v_cf.same_shape(v)) {
        throw std::invalid_argument("total_loss: counterfactual batch shape " + shape_str(v_cf.shape) +
                                    " does not match factual batch " + shape_str(v.shape));
    }
    if (labels.size() != static_cast<std::size_t>(v.rows())) {
        throw std::invalid_argument("total_loss: label count does not match batch size");
    }
    validate_class_set(state, class_set);
    const NodePtr v_node = constant(v, "embeddings");
    const NodePtr vcf_node = constant(v_cf, "cf_embeddings");
    // Labels are required to lie in the class set, so one embedding per class
    // in the set serves both terms.
    const auto embeds = embed_per_class(vars, state, v_node, class_set);
    const NodePtr basic = basic_from_embeds(state, v_node, embeds, labels, class_set);
    const NodePtr cf = cf_from_embeds(state, v_node, vcf_node, embeds, labels);
    return add(basic, scale(cf, lambda));
}

double total_loss(const PromptState& state, const Tensor& v, const Tensor& v_cf, const std::vector<int>& labels,
                  const std::vector<int>& class_set, double lambda) {
    return total_loss_graph(const_vars(state.learnable), state, v, v_cf, labels, class_set, lambda)->value[0];
}

std::vector<PromptEpochRow> train_prompts(PromptState& state, const PromptTrainData& data, double lambda, int epochs,
                                          const AdamConfig& adam, const PromptEvalData* seen_eval,
                                          const PromptEvalData* unseen_eval) {
    if (epochs < 1) throw std::invalid_argument("train_prompts: epochs must be >= 1");
    validate_embeddings(state, data.v, "train_prompts");
    if (!data.v_cf.same_shape(data.v)) {
        throw std::invalid_argument("train_prompts: every train embedding needs a paired counterfactual (got " +
                                    shape_str(data.v_cf.shape) + " for " + shape_str(data.v.shape) + ")");
    }
    validate_class_set(state, data.class_set);
    for (int lab : data.labels) position_in(data.class_set, lab);

    const std::uint64_t frozen_before = prompt_frozen_checksum(state);
    std::vector<PromptEpochRow> rows;
    rows.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const GradResult res = forward_and_grad(state.learnable, [&](const VarMap& vars) {
            return total_loss_graph(vars, state, data.v, data.v_cf, data.labels, data.class_set, lambda);
        });
        adam_step(state.learnable, res.grads, adam);

        PromptEpochRow row;
        row.epoch = epoch;
        row.basic = loss_basic(state, data.v, data.labels, data.class_set);
        row.cf = loss_cf(state, data.v, data.v_cf, data.labels);
        row.total = row.basic + lambda * row.cf;
        if (seen_eval) row.seen_acc = accuracy_from_embeddings(state, seen_eval->v, seen_eval->labels, seen_eval->class_set);
        if (unseen_eval) {
            row.unseen_acc = accuracy_from_embeddings(state, unseen_eval->v, unseen_eval->labels, unseen_eval->class_set);
        }
        rows.push_back(row);
    }
    if (prompt_frozen_checksum(state) != frozen_before) {
        throw std::runtime_error("frozen prompt tensors changed during training");
    }
    return rows;
}

Classification classify(const PromptState& state, const std::vector<double>& v, const std::vector<int>& class_set) {
    if (static_cast<int>(v.size()) != state.embed_dim) {
        throw std::invalid_argument("classify: embedding length " + std::to_string(v.size()) + ", expected " +
                                    std::to_string(state.embed_dim));
    }
    validate_class_set(state, class_set);
    const Tensor vb = Tensor::matrix(1, state.embed_dim, v);
    std::vector<double> logits;
    logits.reserve(class_set.size());
    for (int c : class_set) {
        const Tensor g = prompt_embed(state, vb, c);
        logits.push_back(dot(vb, g) / state.tau);
    }
    Classification out;
    out.probs.resize(class_set.size());
    double mx = logits[0];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
        if (logits[j] > mx) {
            mx = logits[j];
            arg = j;
        }
    }
    double z = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out.probs[j] = std::exp(logits[j] - mx);
        z += out.probs[j];
    }
    for (double& p : out.probs) p /= z;
    out.cls = class_set[arg];
    return out;
}

double accuracy_from_embeddings(const PromptState& state, const Tensor& v, const std::vector<int>& labels,
                                const std::vector<int>& class_set) {
    validate_embeddings(state, v, "accuracy_from_embeddings");
    validate_class_set(state, class_set);
    const int n = v.rows();
    if (labels.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("accuracy_from_embeddings: label count does not match batch size");
    }
    if (n == 0) return 0.0;
    std::vector<Tensor> scores;
    scores.reserve(class_set.size());
    for (int c : class_set) {
        const Tensor g = prompt_embed(state, v, c);
        Tensor s = Tensor::zeros({n});
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < state.embed_dim; ++j) acc += v(i, j) * g(i, j);
            s[i] = acc;
        }
        scores.push_back(s);
    }
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t jj = 1; jj < scores.size(); ++jj) {
            if (scores[jj][i] > scores[arg][i]) arg = jj;
        }
        if (class_set[arg] == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

ParamSet pack_prompt_state(const PromptState& state) {
    ParamSet out;
    for (const auto& [name, value] : state.learnable.tensors()) out.add("learn." + name, value);
    out.add("frozen.class_tokens", state.class_tokens);
    out.add("frozen.projection", state.projection);
    out.add("frozen.info", Tensor::vector({static_cast<double>(state.num_classes),
                                           static_cast<double>(state.embed_dim),
                                           static_cast<double>(state.prompt_length), state.tau}));
    return out;
}

PromptState unpack_prompt_state(const ParamSet& packed) {
    auto fail = [](const std::string& msg) -> void { throw std::runtime_error("prompt checkpoint: " + msg); };
    if (!packed.has("frozen.info")) fail("missing frozen.info record");
    const Tensor& info = packed.at("frozen.info");
    if (info.numel() != 4) fail("frozen.info must hold 4 values");

    PromptState state;
    state.num_classes = static_cast<int>(std::llround(info[0]));
    state.embed_dim = static_cast<int>(std::llround(info[1]));
    state.prompt_length = static_cast<int>(std::llround(info[2]));
    state.tau = info[3];
    if (state.num_classes < 2 || state.embed_dim < 2 || state.prompt_length < 1 || !(state.tau > 0.0)) {
        fail("invalid dimensions or temperature");
    }

    if (!packed.has("frozen.class_tokens") || !packed.has("frozen.projection")) fail("missing frozen tensors");
    state.class_tokens = packed.at("frozen.class_tokens");
    state.projection = packed.at("frozen.projection");
    if (state.class_tokens.shape != std::vector<int>{state.num_classes, state.embed_dim}) {
        fail("class token shape " + shape_str(state.class_tokens.shape) + " is inconsistent with frozen.info");
    }
    if (state.projection.shape != std::vector<int>{(state.prompt_length + 1) * state.embed_dim, state.embed_dim}) {
        fail("projection shape " + shape_str(state.projection.shape) + " is inconsistent with frozen.info");
    }

    for (const auto& [name, value] : packed.tensors()) {
        if (name.rfind("learn.", 0) == 0) state.learnable.add(name.substr(6), value);
    }
    if (!state.learnable.has("ctx")) fail("missing learnable context");
    if (state.learnable.at("ctx").shape != std::vector<int>{state.prompt_length, state.embed_dim}) {
        fail("context shape is inconsistent with frozen.info");
    }
    const MlpSpec meta = meta_net_spec(state.embed_dim);
    for (int layer = 0; layer < meta.layer_count(); ++layer) {
        if (!state.learnable.has(meta.prefix + "w" + std::to_string(layer)) ||
            !state.learnable.has(meta.prefix + "b" + std::to_string(layer))) {
            fail("missing meta-network layer " + std::to_string(layer));
        }
    }
    state.frozen_checksum = prompt_frozen_checksum(state);
    return state;
}

double repulsion_margin(const PromptState& state, const PromptTrainData& data) {
    validate_embeddings(state, data.v, "repulsion_margin");
    if (!data.v_cf.same_shape(data.v)) {
        throw std::invalid_argument("repulsion_margin: paired counterfactual batch required");
    }
    const int n = data.v.rows();
    if (data.labels.size() != static_cast<std::size_t>(n) || n == 0) {
        throw std::invalid_argument("repulsion_margin: label count does not match batch size");
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int c = data.labels[static_cast<std::size_t>(i)];
        Tensor vi = Tensor::zeros({1, state.embed_dim});
        Tensor wi = Tensor::zeros({1, state.embed_dim});
        for (int j = 0; j < state.embed_dim; ++j) {
            vi(0, j) = data.v(i, j);
            wi(0, j) = data.v_cf(i, j);
        }
        const Tensor g = prompt_embed(state, vi, c);
        total += dot(vi, g) - dot(wi, g);
    }
    return total / static_cast<double>(n);
}

}  // namespace cfp
