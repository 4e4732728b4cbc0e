#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pheno/tensor.hpp"

namespace pheno {

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// node list is topologically sorted by construction; backward() walks it in
// reverse from the loss node, accumulating gradients per node. A tape is
// confined to a single training thread.
class Tape {
public:
    using NodeId = int32_t;

    NodeId leaf(Tensor value);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(NodeId id) const { return grads_[static_cast<size_t>(id)]; }
    size_t num_nodes() const { return nodes_.size(); }
    const std::string& op_name(NodeId id) const { return nodes_[static_cast<size_t>(id)].op; }
    const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[static_cast<size_t>(id)].inputs; }

    // c = a * b
    NodeId matmul(NodeId a, NodeId b);
    // c = a * b^T
    NodeId matmul_nt(NodeId a, NodeId b);
    // same-shape elementwise sum
    NodeId add(NodeId a, NodeId b);
    // X[m x n] plus rank-1 v[n] broadcast over rows
    NodeId add_rowvec(NodeId x, NodeId v);
    // same-shape elementwise product
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    // elementwise product with a constant tensor (dropout masks)
    NodeId mul_const(NodeId a, Tensor mask);
    NodeId silu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softmax_rows(NodeId a);
    // per-row layer norm over X[m x n] with rank-1 gain[n], bias[n]
    NodeId layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps);
    // column range [c0, c1) of a rank-2 node
    NodeId slice_cols(NodeId a, int c0, int c1);
    NodeId concat_cols(std::span<const NodeId> parts);
    // [m x n] -> [1 x n] column means
    NodeId mean_rows(NodeId a);
    NodeId sum_all(NodeId a);
    // binary cross-entropy of a [1x1] probability node against target y in
    // [0,1]; probability clamped to [eps, 1-eps] before the logs
    NodeId bce_loss(NodeId p, double y);
    // arithmetic mean of scalar nodes (minibatch loss)
    NodeId mean_scalars(std::span<const NodeId> losses);

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients for every node
    // reachable from `loss`. The loss node must be scalar.
    void backward(NodeId loss);

private:
    using BackFn = std::function<void(Tape&, NodeId)>;

    struct Node {
        Tensor value;
        std::vector<NodeId> inputs;
        BackFn back; // empty for leaves
        std::string op;
    };

    NodeId push(Tensor value, std::vector<NodeId> inputs, BackFn back, std::string op);
    Tensor& grad_mut(NodeId id) { return grads_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

} // namespace pheno
