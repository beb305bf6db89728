#include "cfp/params.hpp"

#include <cmath>
#include <cstring>

#include "cfp/rng.hpp"

namespace cfp {

void ParamSet::add(const std::string& name, Tensor value) {
    if (params_.count(name)) {
        throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    }
    check_finite(value, "parameter '" + name + "'");
    params_.emplace(name, std::move(value));
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamSet: no parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamSet: no parameter '" + name + "'");
    return it->second;
}

void ParamSet::set(const std::string& name, const Tensor& value) {
    Tensor& dst = at(name);
    if (!dst.same_shape(value)) {
        throw std::invalid_argument("ParamSet::set: shape mismatch for '" + name + "': " + shape_str(dst.shape) +
                                    " vs " + shape_str(value.shape));
    }
    check_finite(value, "parameter '" + name + "'");
    dst = value;
}

GradResult forward_and_grad(const ParamSet& params, const GraphBuilder& build) {
    VarMap vars;
    for (const auto& [name, value] : params.tensors()) {
        vars.emplace(name, leaf(value, name));
    }
    NodePtr loss = build(vars);
    if (!loss || loss->value.numel() != 1) {
        throw std::invalid_argument("forward_and_grad: computation must produce a scalar");
    }
    backward(loss);
    GradResult out;
    out.loss = loss->value[0];
    for (const auto& [name, node] : vars) {
        out.grads.emplace(name, node->grad.numel() ? node->grad : Tensor::zeros(node->value.shape));
    }
    return out;
}

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
    for (auto& [name, p] : params.params_) {
        auto it = grads.find(name);
        if (it == grads.end()) {
            throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
        }
        if (!it->second.same_shape(p)) {
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(it->second.shape) +
                                        " does not match parameter '" + name + "' " + shape_str(p.shape));
        }
    }
    params.step_ += 1;
    const double t = static_cast<double>(params.step_);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : params.params_) {
        const Tensor& g = grads.at(name);
        Tensor& m = params.m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = params.v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (int i = 0; i < p.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        check_finite(p, "parameter '" + name + "' after optimizer step");
    }
}

std::uint64_t tensor_checksum(const Tensor& t) {
    return fnv1a64(reinterpret_cast<const unsigned char*>(t.data.data()), t.data.size() * sizeof(double));
}

std::uint64_t param_checksum(const ParamSet& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, value] : params.tensors()) {
        h = splitmix64(h ^ fnv1a64(name));
        h = splitmix64(h ^ tensor_checksum(value));
    }
    return h;
}

}  // namespace cfp
