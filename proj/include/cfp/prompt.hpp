#pragma once

#include <cstdint>
#include <vector>

#include "cfp/mlp.hpp"
#include "cfp/params.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Instance-conditioned prompt learning over a frozen image encoder. Class
// prompts are [ctx_1 + meta(v), ..., ctx_L + meta(v), token_c] pushed through
// a fixed random projection and L2-normalized; context vectors and the meta
// network are the only trainable pieces. Two contrastive objectives: a
// softmax over the class set (factual attraction) and a two-term softmax
// against the paired counterfactual embedding (hard-negative repulsion).

struct EncoderState {
    MlpSpec spec;
    ParamSet params;  // trunk only; the pretraining head is discarded
    int image_dim = 0;
    int embed_dim = 0;
    std::uint64_t checksum = 0;  // pinned at freeze time
};

// Supervised pretraining on seen-class images via a linear head, then
// freeze. Embeddings are the trunk output, L2-normalized.
EncoderState pretrain_image_encoder(const Tensor& images01, const std::vector<int>& labels, int num_classes,
                                    const std::vector<int>& hidden, int embed_dim, int steps, int batch_size,
                                    Rng& rng, const AdamConfig& adam);

Tensor encode(const EncoderState& enc, const Tensor& images01);  // [B, d], unit rows

struct PromptState {
    int num_classes = 0;   // tokens exist for every class, seen or not
    int embed_dim = 0;     // d
    int prompt_length = 0; // L
    double tau = 0.07;
    ParamSet learnable;    // "ctx" [L,d] + meta-net ("meta.*", last layer zero-initialized)
    Tensor class_tokens;   // frozen [K, d]
    Tensor projection;     // frozen [(L+1)*d, d]
    std::uint64_t frozen_checksum = 0;
};

// Frozen pieces are drawn once from the seed; distinctness of the projected
// class tokens is asserted here so downstream injectivity arguments hold.
//
// `prototypes` ([K, d], one unit embedding per class) optionally calibrates
// the projection's class-token block so each frozen token lands on its
// class's embedding direction. This is the desk-scale stand-in for a
// contrastively pretrained text tower: anchors start out semantically
// meaningful for every class — including ones the prompt learner will never
// train on — while staying a fixed linear map of frozen random tokens.
// Without prototypes the projection is plain random (useful for unit tests).
PromptState make_prompt_state(int num_classes, int embed_dim, int prompt_length, double tau, std::uint64_t seed,
                              const Tensor* prototypes = nullptr);

std::uint64_t prompt_frozen_checksum(const PromptState& state);

// Flatten to / rebuild from a named-tensor set (checkpoint payload). The
// scalar metadata rides along as a "frozen.info" tensor.
ParamSet pack_prompt_state(const PromptState& state);
PromptState unpack_prompt_state(const ParamSet& packed);

// g(w^c(v)) for a batch of image embeddings; [B, d] unit rows.
Tensor prompt_embed(const PromptState& state, const Tensor& v, int cls);

// Graph twin of prompt_embed; learnable tensors come from `vars`.
NodePtr prompt_embed_graph(const VarMap& vars, const PromptState& state, const NodePtr& v_node, int cls);

// Mean over i of -log softmax_{c in class_set}(v_i . g_c(v_i) / tau) at y_i.
NodePtr loss_basic_graph(const VarMap& vars, const PromptState& state, const Tensor& v,
                         const std::vector<int>& labels, const std::vector<int>& class_set);
double loss_basic(const PromptState& state, const Tensor& v, const std::vector<int>& labels,
                  const std::vector<int>& class_set);

// Mean over i of log(1 + exp((v_cf_i - v_i) . g_{y_i}(v_i) / tau)).
NodePtr loss_cf_graph(const VarMap& vars, const PromptState& state, const Tensor& v, const Tensor& v_cf,
                      const std::vector<int>& labels);
double loss_cf(const PromptState& state, const Tensor& v, const Tensor& v_cf, const std::vector<int>& labels);

// basic + lambda * cf with the per-class embeddings built once and shared.
NodePtr total_loss_graph(const VarMap& vars, const PromptState& state, const Tensor& v, const Tensor& v_cf,
                         const std::vector<int>& labels, const std::vector<int>& class_set, double lambda);
double total_loss(const PromptState& state, const Tensor& v, const Tensor& v_cf, const std::vector<int>& labels,
                  const std::vector<int>& class_set, double lambda);

struct PromptTrainData {
    Tensor v;                    // [N, d] factual embeddings
    Tensor v_cf;                 // [N, d] paired counterfactual embeddings
    std::vector<int> labels;     // factual class ids
    std::vector<int> class_set;  // classes visible during training (seen)
};

struct PromptEvalData {
    Tensor v;
    std::vector<int> labels;
    std::vector<int> class_set;  // candidate classes at evaluation time
};

struct PromptEpochRow {
    int epoch = 0;
    double basic = 0.0;
    double cf = 0.0;
    double total = 0.0;
    double seen_acc = 0.0;
    double unseen_acc = 0.0;
};

// Full-batch training; frozen parts are checksummed before and after and a
// mismatch throws. Optional eval sets fill the accuracy columns per epoch.
std::vector<PromptEpochRow> train_prompts(PromptState& state, const PromptTrainData& data, double lambda, int epochs,
                                          const AdamConfig& adam, const PromptEvalData* seen_eval,
                                          const PromptEvalData* unseen_eval);

// argmax_c v . g_c(v) / tau over class_set, with softmax probabilities.
struct Classification {
    int cls = 0;                 // winning class id (from class_set)
    std::vector<double> probs;   // aligned with class_set order
};
Classification classify(const PromptState& state, const std::vector<double>& v, const std::vector<int>& class_set);

double accuracy_from_embeddings(const PromptState& state, const Tensor& v, const std::vector<int>& labels,
                                const std::vector<int>& class_set);

// Mean factual minus mean counterfactual prompt similarity on train pairs;
// the margin the repulsion term is supposed to widen.
double repulsion_margin(const PromptState& state, const PromptTrainData& data);

}  // namespace cfp
