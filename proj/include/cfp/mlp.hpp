#pragma once

#include <string>
#include <vector>

#include "cfp/params.hpp"
#include "cfp/rng.hpp"

namespace cfp {

// Fully-connected network description: widths = [in, hidden..., out], tanh on
// hidden layers, linear output. Parameters live in a ParamSet under
// "{prefix}w{i}" / "{prefix}b{i}".
struct MlpSpec {
    std::vector<int> widths;
    std::string prefix;
    std::string activation = "tanh";

    int layer_count() const { return static_cast<int>(widths.size()) - 1; }
    int in_width() const { return widths.front(); }
    int out_width() const { return widths.back(); }
};

// Xavier-uniform weights, zero biases; draw order is fixed so a seed pins
// the initialization bit-for-bit.
void mlp_init(ParamSet& params, const MlpSpec& spec, Rng& rng);

// Batch forward pass, input [B, in] -> [B, out]. No graph, no gradients.
Tensor mlp_apply(const ParamSet& params, const MlpSpec& spec, const Tensor& input);

// Same computation as mlp_apply but through autodiff nodes. Parameters are
// looked up in `vars`, so they can be differentiable leaves (training) or
// constants (input-gradient graphs).
NodePtr mlp_graph(const VarMap& vars, const MlpSpec& spec, const NodePtr& input);

// Every parameter wrapped as a non-differentiable constant.
VarMap const_vars(const ParamSet& params);

}  // namespace cfp
