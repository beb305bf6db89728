#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "cfp/autodiff.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter tensors plus per-parameter Adam moment buffers and a step
// counter. std::map keeps iteration order deterministic everywhere
// (updates, checkpoints, checksums).
class ParamSet {
public:
    void add(const std::string& name, Tensor value);
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const std::map<std::string, Tensor>& tensors() const { return params_; }
    std::size_t size() const { return params_.size(); }
    long long step_count() const { return step_; }

    // Replace a parameter's values in place (checkpoint load); shape must match.
    void set(const std::string& name, const Tensor& value);

    friend void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, const AdamConfig& cfg);

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> m_;  // first-moment buffers, zero until first step
    std::map<std::string, Tensor> v_;  // second-moment buffers
    long long step_ = 0;
};

struct GradResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;  // one entry per parameter, zeros if unused
};

using GraphBuilder = std::function<NodePtr(const VarMap&)>;

// Binds every parameter as a differentiable leaf, runs `build` to a scalar
// loss node, and back-propagates. The builder bakes batch data in as
// constants itself.
GradResult forward_and_grad(const ParamSet& params, const GraphBuilder& build);

// One Adam update. Requires a gradient for every parameter with a matching
// shape; increments the step counter by exactly 1.
void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, const AdamConfig& cfg);

// FNV-1a over the raw bytes of all parameter values in name order; used to
// assert bit-identical trajectories and that frozen tensors stayed frozen.
std::uint64_t param_checksum(const ParamSet& params);
std::uint64_t tensor_checksum(const Tensor& t);

}  // namespace cfp
