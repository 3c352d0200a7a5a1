#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aria/tensor.hpp"

namespace aria {

// Reverse-mode tape over a fixed op vocabulary. Nodes are appended in
// topological order; backward walks the tape in reverse with a fixed
// accumulation order, so gradients are bit-reproducible.
class Graph {
public:
    using NodeId = std::uint32_t;

    enum class Op : std::uint8_t {
        kLeaf,
        kConv2d,
        kDense,
        kRelu,
        kTanh,
        kSigmoid,
        kScale,
        kAdd,
        kSub,
        kMul,
        kAvgPool2d,
        kGlobalAvgPool,
        kL2Normalize,
        kResizeBilinear,
        kSum,
        kMean,
        kCosine,
        kPick,
        kPack,
        kStackRows,
        kLogSumExp,
        kPowScalar,
        kNtXent,
    };

    // Leaves. input() participates in backward; constant() does not.
    NodeId input(Tensor value);
    NodeId constant(Tensor value);

    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    NodeId dense(NodeId x, NodeId w, NodeId b);
    NodeId relu(NodeId x);
    NodeId tanh_op(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId scale(NodeId x, float s);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId avgpool2d(NodeId x, int window);
    NodeId global_avgpool(NodeId x);
    NodeId l2_normalize(NodeId x);
    NodeId resize_bilinear(NodeId x, int out_h, int out_w);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId cosine_similarity(NodeId u, NodeId v);
    NodeId pick(NodeId x, int index);                  // one element as a scalar
    NodeId pack(std::span<const NodeId> scalars);      // scalars -> vector
    NodeId stack_rows(std::span<const NodeId> rows);   // k equal-length vectors -> [k,D]
    NodeId logsumexp(NodeId x);                        // over all elements
    NodeId pow_scalar(NodeId x, float exponent);       // scalar x >= 0
    NodeId nt_xent(NodeId stacked, float tau);         // [2N,D] -> scalar

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Reverse-mode sweep from a scalar output. Gradients accumulate for
    // every differentiable node; call grad() on leaves afterwards. One
    // sweep per graph instance.
    void backward(NodeId output);
    bool backward_done() const { return backward_done_; }

    // Recomputes the forward value of `output` in double precision with
    // one leaf tensor replaced. Used by the finite-difference oracle.
    double replay_f64(NodeId output, NodeId leaf, const TensorD& leaf_value) const;

private:
    struct Node {
        Op op = Op::kLeaf;
        bool requires_grad = false;
        std::vector<NodeId> inputs;
        int i0 = 0, i1 = 0;
        float f0 = 0.0f;
        Tensor value;
        Tensor grad;
        bool has_grad = false;
    };

    NodeId push(Node n);
    NodeId unary(Op op, NodeId x, int i0 = 0, int i1 = 0, float f0 = 0.0f);
    NodeId binary(Op op, NodeId a, NodeId b);
    void check_id(NodeId id) const;
    static Tensor forward_eval(Op op, const std::vector<const Tensor*>& in, int i0, int i1, float f0);
    static TensorD forward_eval_f64(Op op, const std::vector<const TensorD*>& in, int i0, int i1, float f0);
    void backward_node(const Node& n);
    Tensor& grad_buffer(NodeId id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|), differentiating `output` w.r.t.
// `leaf`. Forward replays run in double precision; the analytic side is
// the float tape's backward().
double finite_difference_check(Graph& g, Graph::NodeId output, Graph::NodeId leaf, double h);

}  // namespace aria
