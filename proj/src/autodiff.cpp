#include "cfp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cfp/kernels.hpp"

namespace cfp {

namespace {

void axpy(Tensor& dst, const Tensor& src) {
    for (int i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const std::string& op,
                  std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op = op;
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    check_finite(n->value, "op '" + op + "'");
    return n;
}

void require_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->value.shape) + " vs " +
                                    shape_str(b->value.shape));
    }
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

NodePtr constant(Tensor value, const std::string& name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = name;
    n->requires_grad = false;
    check_finite(n->value, "constant '" + name + "'");
    return n;
}

NodePtr leaf(Tensor value, const std::string& name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = name;
    n->requires_grad = true;
    check_finite(n->value, "leaf '" + name + "'");
    return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a, b, "add");
    Tensor out = a->value;
    axpy(out, b->value);
    return make_node(std::move(out), {a, b}, "add", [](Node& n) {
        if (n.parents[0]->requires_grad) axpy(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad) axpy(n.parents[1]->grad, n.grad);
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (int i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, "sub", [](Node& n) {
        if (n.parents[0]->requires_grad) axpy(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad;
            for (int i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (int i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, "mul", [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->grad;
            for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad;
            for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

NodePtr scale(const NodePtr& a, double c) {
    if (!std::isfinite(c)) throw NumericError("non-finite scale factor");
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    return make_node(std::move(out), {a}, "scale", [c](Node& n) {
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < g.numel(); ++i) g[i] += c * n.grad[i];
    });
}

NodePtr add_scalar(const NodePtr& a, double c) {
    if (!std::isfinite(c)) throw NumericError("non-finite addend");
    Tensor out = a->value;
    for (double& v : out.data) v += c;
    return make_node(std::move(out), {a}, "add_scalar",
                     [](Node& n) { axpy(n.parents[0]->grad, n.grad); });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Tensor out = cfp::matmul(a->value, b->value);
    return make_node(std::move(out), {a, b}, "matmul", [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) axpy(n.parents[0]->grad, matmul_nt(n.grad, bv));
        if (n.parents[1]->requires_grad) axpy(n.parents[1]->grad, matmul_tn(av, n.grad));
    });
}

NodePtr add_rowvec(const NodePtr& a, const NodePtr& v) {
    if (a->value.rank() != 2 || v->value.rank() != 1 || v->value.numel() != a->value.cols()) {
        throw std::invalid_argument("add_rowvec: need [M,N] + [N], got " + shape_str(a->value.shape) + " + " +
                                    shape_str(v->value.shape));
    }
    const int m = a->value.rows(), nn = a->value.cols();
    Tensor out = a->value;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < nn; ++j) out(i, j) += v->value[j];
    return make_node(std::move(out), {a, v}, "add_rowvec", [](Node& n) {
        const int m = n.value.rows(), nn = n.value.cols();
        if (n.parents[0]->requires_grad) axpy(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& gv = n.parents[1]->grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nn; ++j) gv[j] += n.grad(i, j);
        }
    });
}

NodePtr pick_row(const NodePtr& a, int r) {
    if (a->value.rank() != 2 || r < 0 || r >= a->value.rows()) {
        throw std::invalid_argument("pick_row: row " + std::to_string(r) + " out of range for " +
                                    shape_str(a->value.shape));
    }
    const int nn = a->value.cols();
    Tensor out = Tensor::zeros({nn});
    for (int j = 0; j < nn; ++j) out[j] = a->value(r, j);
    return make_node(std::move(out), {a}, "pick_row", [r](Node& n) {
        Tensor& g = n.parents[0]->grad;
        const int nn = n.value.numel();
        for (int j = 0; j < nn; ++j) g(r, j) += n.grad[j];
    });
}

NodePtr tanh_act(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::tanh(v);
    return make_node(std::move(out), {a}, "tanh", [](Node& n) {
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
    });
}

NodePtr softplus(const NodePtr& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = stable_softplus(v);
    return make_node(std::move(out), {a}, "softplus", [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * sigmoid(x[i]);
    });
}

NodePtr rowwise_dot(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a, b, "rowwise_dot");
    if (a->value.rank() != 2) {
        throw std::invalid_argument("rowwise_dot: rank-2 inputs required, got " + shape_str(a->value.shape));
    }
    const int m = a->value.rows(), nn = a->value.cols();
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < nn; ++j) acc += a->value(i, j) * b->value(i, j);
        out[i] = acc;
    }
    return make_node(std::move(out), {a, b}, "rowwise_dot", [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        const int m = av.rows(), nn = av.cols();
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nn; ++j) g(i, j) += n.grad[i] * bv(i, j);
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nn; ++j) g(i, j) += n.grad[i] * av(i, j);
        }
    });
}

NodePtr stack_cols(const std::vector<NodePtr>& cols) {
    if (cols.empty()) throw std::invalid_argument("stack_cols: no columns");
    const int m = cols[0]->value.numel();
    for (const auto& c : cols) {
        if (c->value.rank() != 1 || c->value.numel() != m) {
            throw std::invalid_argument("stack_cols: every column must be a length-" + std::to_string(m) + " vector");
        }
    }
    const int cc = static_cast<int>(cols.size());
    Tensor out = Tensor::zeros({m, cc});
    for (int c = 0; c < cc; ++c)
        for (int i = 0; i < m; ++i) out(i, c) = cols[c]->value[i];
    return make_node(std::move(out), {cols.begin(), cols.end()}, "stack_cols", [](Node& n) {
        const int m = n.value.rows(), cc = n.value.cols();
        for (int c = 0; c < cc; ++c) {
            if (!n.parents[c]->requires_grad) continue;
            Tensor& g = n.parents[c]->grad;
            for (int i = 0; i < m; ++i) g[i] += n.grad(i, c);
        }
    });
}

NodePtr concat_cols(const std::vector<NodePtr>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("concat_cols: no blocks");
    const int m = blocks[0]->value.rows();
    int total = 0;
    for (const auto& b : blocks) {
        if (b->value.rank() != 2 || b->value.rows() != m) {
            throw std::invalid_argument("concat_cols: blocks must share row count " + std::to_string(m));
        }
        total += b->value.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    int off = 0;
    for (const auto& b : blocks) {
        const int w = b->value.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out(i, off + j) = b->value(i, j);
        off += w;
    }
    return make_node(std::move(out), {blocks.begin(), blocks.end()}, "concat_cols", [](Node& n) {
        const int m = n.value.rows();
        int off = 0;
        for (auto& p : n.parents) {
            const int w = p->value.cols();
            if (p->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j) p->grad(i, j) += n.grad(i, off + j);
            }
            off += w;
        }
    });
}

NodePtr row_l2_normalize(const NodePtr& a) {
    if (a->value.rank() != 2) {
        throw std::invalid_argument("row_l2_normalize: rank-2 input required, got " + shape_str(a->value.shape));
    }
    const int m = a->value.rows(), nn = a->value.cols();
    Tensor out = a->value;
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < nn; ++j) s += out(i, j) * out(i, j);
        const double norm = std::sqrt(s);
        if (norm < 1e-300) throw NumericError("zero-norm row in row_l2_normalize");
        norms[i] = norm;
        for (int j = 0; j < nn; ++j) out(i, j) /= norm;
    }
    return make_node(std::move(out), {a}, "row_l2_normalize", [norms](Node& n) {
        // y = x/|x|;  dx = (g - y * <g,y>) / |x|
        const int m = n.value.rows(), nn = n.value.cols();
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < m; ++i) {
            double gy = 0.0;
            for (int j = 0; j < nn; ++j) gy += n.grad(i, j) * n.value(i, j);
            for (int j = 0; j < nn; ++j) g(i, j) += (n.grad(i, j) - n.value(i, j) * gy) / norms[i];
        }
    });
}

NodePtr cross_entropy_logits(const NodePtr& logits, const std::vector<int>& labels, double smoothing) {
    if (logits->value.rank() != 2) {
        throw std::invalid_argument("cross_entropy_logits: rank-2 logits required");
    }
    const int m = logits->value.rows(), cc = logits->value.cols();
    if (static_cast<int>(labels.size()) != m) {
        throw std::invalid_argument("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(m) + " rows");
    }
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw std::invalid_argument("cross_entropy_logits: smoothing must lie in [0,1)");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= cc) {
            throw std::invalid_argument("cross_entropy_logits: label " + std::to_string(lab) + " outside [0," +
                                        std::to_string(cc) + ")");
        }
    }
    Tensor probs = Tensor::zeros({m, cc});  // cached softmax for the backward pass
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = logits->value(i, 0);
        for (int j = 1; j < cc; ++j) mx = std::max(mx, logits->value(i, j));
        double z = 0.0;
        for (int j = 0; j < cc; ++j) {
            probs(i, j) = std::exp(logits->value(i, j) - mx);
            z += probs(i, j);
        }
        const double lse = mx + std::log(z);
        for (int j = 0; j < cc; ++j) probs(i, j) /= z;
        double qdot = 0.0;
        for (int j = 0; j < cc; ++j) {
            const double q = (j == labels[i] ? 1.0 - smoothing : 0.0) + smoothing / cc;
            qdot += q * logits->value(i, j);
        }
        total += lse - qdot;
    }
    Tensor out = Tensor::scalar(total / m);
    return make_node(std::move(out), {logits}, "cross_entropy_logits",
                     [probs, labels, smoothing](Node& n) {
                         const int m = probs.rows(), cc = probs.cols();
                         const double gs = n.grad[0] / m;
                         Tensor& g = n.parents[0]->grad;
                         for (int i = 0; i < m; ++i) {
                             for (int j = 0; j < cc; ++j) {
                                 const double q = (j == labels[i] ? 1.0 - smoothing : 0.0) + smoothing / cc;
                                 g(i, j) += gs * (probs(i, j) - q);
                             }
                         }
                     });
}

NodePtr sum_all(const NodePtr& a) {
    Tensor out = Tensor::scalar(sum(a->value));
    return make_node(std::move(out), {a}, "sum_all", [](Node& n) {
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    });
}

NodePtr mean_all(const NodePtr& a) {
    if (a->value.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    Tensor out = Tensor::scalar(mean(a->value));
    const double inv = 1.0 / a->value.numel();
    return make_node(std::move(out), {a}, "mean_all", [inv](Node& n) {
        Tensor& g = n.parents[0]->grad;
        for (int i = 0; i < g.numel(); ++i) g[i] += inv * n.grad[0];
    });
}

void backward(const NodePtr& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.numel() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(root->value.shape));
    }

    // Iterative post-order DFS; reversed it is a valid reverse-topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Tensor::zeros(n->value.shape);
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
    }
}

const NodePtr& var_get(const VarMap& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) {
        throw std::invalid_argument("no variable named '" + name + "' in graph bindings");
    }
    return it->second;
}

}  // namespace cfp
