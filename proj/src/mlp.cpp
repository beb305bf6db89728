#include "cfp/mlp.hpp"

#include <cmath>

#include "cfp/kernels.hpp"

namespace cfp {

namespace {

void validate_spec(const MlpSpec& spec) {
    if (spec.widths.size() < 2) {
        throw std::invalid_argument("MlpSpec: need at least [in, out] widths");
    }
    for (int w : spec.widths) {
        if (w <= 0) throw std::invalid_argument("MlpSpec: widths must be positive");
    }
    if (spec.activation != "tanh") {
        throw std::invalid_argument("MlpSpec: unsupported activation '" + spec.activation +
                                    "' (only 'tanh' is implemented)");
    }
}

std::string wname(const MlpSpec& spec, int i) { return spec.prefix + "w" + std::to_string(i); }
std::string bname(const MlpSpec& spec, int i) { return spec.prefix + "b" + std::to_string(i); }

}  // namespace

void mlp_init(ParamSet& params, const MlpSpec& spec, Rng& rng) {
    validate_spec(spec);
    for (int i = 0; i < spec.layer_count(); ++i) {
        const int fan_in = spec.widths[i], fan_out = spec.widths[i + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (int k = 0; k < w.numel(); ++k) w[k] = rng.uniform(-bound, bound);
        params.add(wname(spec, i), std::move(w));
        params.add(bname(spec, i), Tensor::zeros({fan_out}));
    }
}

Tensor mlp_apply(const ParamSet& params, const MlpSpec& spec, const Tensor& input) {
    validate_spec(spec);
    if (input.rank() != 2 || input.cols() != spec.in_width()) {
        throw std::invalid_argument("mlp_apply: input " + shape_str(input.shape) + " does not match in-width " +
                                    std::to_string(spec.in_width()));
    }
    Tensor x = input;
    for (int i = 0; i < spec.layer_count(); ++i) {
        const Tensor& w = params.at(wname(spec, i));
        const Tensor& b = params.at(bname(spec, i));
        x = matmul(x, w);
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) x(r, c) += b[c];
        if (i + 1 < spec.layer_count()) {
            for (double& v : x.data) v = std::tanh(v);
        }
    }
    check_finite(x, "mlp_apply output ('" + spec.prefix + "')");
    return x;
}

NodePtr mlp_graph(const VarMap& vars, const MlpSpec& spec, const NodePtr& input) {
    validate_spec(spec);
    if (input->value.rank() != 2 || input->value.cols() != spec.in_width()) {
        throw std::invalid_argument("mlp_graph: input " + shape_str(input->value.shape) +
                                    " does not match in-width " + std::to_string(spec.in_width()));
    }
    NodePtr x = input;
    for (int i = 0; i < spec.layer_count(); ++i) {
        x = add_rowvec(matmul(x, var_get(vars, wname(spec, i))), var_get(vars, bname(spec, i)));
        if (i + 1 < spec.layer_count()) x = tanh_act(x);
    }
    return x;
}

VarMap const_vars(const ParamSet& params) {
    VarMap vars;
    for (const auto& [name, value] : params.tensors()) {
        vars.emplace(name, constant(value, name));
    }
    return vars;
}

}  // namespace cfp
