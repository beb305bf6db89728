#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cfp/tensor.hpp"

namespace cfp {

// Reverse-mode automatic differentiation over an eagerly evaluated graph.
// Every op validates shapes up front and checks its result for NaN/Inf
// immediately (NumericError names the offending op), so a blow-up surfaces
// at the op that produced it rather than at the loss.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // filled by backward(); empty until then
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    std::string op;
    bool requires_grad = false;
};

// Leaf holding a constant (no gradient flows into it).
NodePtr constant(Tensor value, const std::string& name = "const");

// Leaf that participates in differentiation.
NodePtr leaf(Tensor value, const std::string& name);

// Elementwise, shapes must match exactly.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);

NodePtr scale(const NodePtr& a, double c);
NodePtr add_scalar(const NodePtr& a, double c);

// C[M,N] = A[M,K] * B[K,N] (row-parallel kernel under the hood).
NodePtr matmul(const NodePtr& a, const NodePtr& b);

// a[M,N] + v[N] broadcast across rows.
NodePtr add_rowvec(const NodePtr& a, const NodePtr& v);

// Row r of a[M,N] as a length-N vector.
NodePtr pick_row(const NodePtr& a, int r);

NodePtr tanh_act(const NodePtr& a);
NodePtr softplus(const NodePtr& a);  // log(1 + e^x), overflow-safe

// out[i] = sum_j a[i,j] * b[i,j]; shapes must match.
NodePtr rowwise_dot(const NodePtr& a, const NodePtr& b);

// Length-M vectors become the columns of an [M, C] matrix.
NodePtr stack_cols(const std::vector<NodePtr>& cols);

// Horizontal concatenation of [M, N_k] blocks.
NodePtr concat_cols(const std::vector<NodePtr>& blocks);

// Each row divided by its L2 norm.
NodePtr row_l2_normalize(const NodePtr& a);

// Mean over rows of (logsumexp(row) - sum_c q_c * logit_c) with
// q = (1-smoothing)*onehot(label) + smoothing/C. smoothing = 0 gives plain
// cross-entropy from logits.
NodePtr cross_entropy_logits(const NodePtr& logits, const std::vector<int>& labels, double smoothing = 0.0);

NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

// Reverse pass from a scalar root; fills grad on every reachable node that
// requires a gradient. Throws std::invalid_argument if root is not scalar.
void backward(const NodePtr& root);

// Name -> leaf bindings handed to graph builders.
using VarMap = std::map<std::string, NodePtr>;

// Lookup with a clear error instead of operator[]'s silent insert.
const NodePtr& var_get(const VarMap& vars, const std::string& name);

}  // namespace cfp
