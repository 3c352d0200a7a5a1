#include "aria/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aria {

namespace {

template <typename T>
TensorT<T> map_unary(const TensorT<T>& x, T (*fn)(T)) {
    TensorT<T> y(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = fn(x.data[i]);
    return y;
}

template <typename T>
T relu_fn(T v) { return v > T(0) ? v : T(0); }
template <typename T>
T tanh_fn(T v) { return std::tanh(v); }
template <typename T>
T sigmoid_fn(T v) { return T(1) / (T(1) + std::exp(-v)); }

template <typename T>
TensorT<T> eval_impl(Graph::Op op, const std::vector<const TensorT<T>*>& in, int i0, int i1, float f0) {
    using Op = Graph::Op;
    switch (op) {
        case Op::kConv2d:
            return kernels::conv2d(*in[0], *in[1], *in[2], i0, i1);
        case Op::kDense:
            return kernels::dense(*in[0], *in[1], *in[2]);
        case Op::kRelu:
            return map_unary(*in[0], relu_fn<T>);
        case Op::kTanh:
            return map_unary(*in[0], tanh_fn<T>);
        case Op::kSigmoid:
            return map_unary(*in[0], sigmoid_fn<T>);
        case Op::kScale: {
            TensorT<T> y(in[0]->shape);
            for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = in[0]->data[i] * static_cast<T>(f0);
            return y;
        }
        case Op::kAdd: {
            TensorT<T> y(in[0]->shape);
            for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = in[0]->data[i] + in[1]->data[i];
            return y;
        }
        case Op::kSub: {
            TensorT<T> y(in[0]->shape);
            for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = in[0]->data[i] - in[1]->data[i];
            return y;
        }
        case Op::kMul: {
            TensorT<T> y(in[0]->shape);
            for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = in[0]->data[i] * in[1]->data[i];
            return y;
        }
        case Op::kAvgPool2d:
            return kernels::avgpool2d(*in[0], i0);
        case Op::kGlobalAvgPool:
            return kernels::global_avgpool(*in[0]);
        case Op::kL2Normalize:
            return kernels::l2_normalize(*in[0]);
        case Op::kResizeBilinear:
            return kernels::resize_bilinear(*in[0], i0, i1);
        case Op::kSum: {
            double acc = 0.0;
            for (T v : in[0]->data) acc += static_cast<double>(v);
            return TensorT<T>({1}, {static_cast<T>(acc)});
        }
        case Op::kMean: {
            double acc = 0.0;
            for (T v : in[0]->data) acc += static_cast<double>(v);
            return TensorT<T>({1}, {static_cast<T>(acc / static_cast<double>(in[0]->numel()))});
        }
        case Op::kCosine:
            return TensorT<T>({1}, {kernels::cosine_similarity(*in[0], *in[1])});
        case Op::kPick:
            return TensorT<T>({1}, {in[0]->data[static_cast<size_t>(i0)]});
        case Op::kPack: {
            TensorT<T> y({static_cast<int>(in.size())});
            for (size_t i = 0; i < in.size(); ++i) y.data[i] = in[i]->data[0];
            return y;
        }
        case Op::kStackRows: {
            const int d = static_cast<int>(in[0]->numel());
            TensorT<T> y({static_cast<int>(in.size()), d});
            for (size_t r = 0; r < in.size(); ++r) {
                std::copy(in[r]->data.begin(), in[r]->data.end(), y.data.begin() + r * static_cast<size_t>(d));
            }
            return y;
        }
        case Op::kLogSumExp: {
            double mx = -1e300;
            for (T v : in[0]->data) mx = std::max(mx, static_cast<double>(v));
            double acc = 0.0;
            for (T v : in[0]->data) acc += std::exp(static_cast<double>(v) - mx);
            return TensorT<T>({1}, {static_cast<T>(mx + std::log(acc))});
        }
        case Op::kPowScalar: {
            const double base = std::max(static_cast<double>(in[0]->data[0]), 0.0);
            return TensorT<T>({1}, {static_cast<T>(std::pow(base, static_cast<double>(f0)))});
        }
        case Op::kNtXent:
            return TensorT<T>({1}, {kernels::nt_xent(*in[0], static_cast<T>(f0))});
        case Op::kLeaf:
            break;
    }
    throw std::logic_error("graph: unexpected op in forward");
}

}  // namespace

void Graph::check_id(NodeId id) const {
    if (id >= nodes_.size()) throw std::invalid_argument("graph: node id out of range");
}

Graph::NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::NodeId Graph::input(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = true;
    n.value = std::move(value);
    return push(std::move(n));
}

Graph::NodeId Graph::constant(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = false;
    n.value = std::move(value);
    return push(std::move(n));
}

Tensor Graph::forward_eval(Op op, const std::vector<const Tensor*>& in, int i0, int i1, float f0) {
    return eval_impl<float>(op, in, i0, i1, f0);
}

TensorD Graph::forward_eval_f64(Op op, const std::vector<const TensorD*>& in, int i0, int i1, float f0) {
    return eval_impl<double>(op, in, i0, i1, f0);
}

Graph::NodeId Graph::unary(Op op, NodeId x, int i0, int i1, float f0) {
    check_id(x);
    Node n;
    n.op = op;
    n.inputs = {x};
    n.i0 = i0;
    n.i1 = i1;
    n.f0 = f0;
    n.requires_grad = nodes_[x].requires_grad;
    n.value = forward_eval(op, {&nodes_[x].value}, i0, i1, f0);
    return push(std::move(n));
}

Graph::NodeId Graph::binary(Op op, NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    if (op != Op::kCosine && !same_shape(nodes_[a].value.shape, nodes_[b].value.shape)) {
        throw std::invalid_argument("graph: operand shape mismatch " + shape_str(nodes_[a].value.shape) +
                                    " vs " + shape_str(nodes_[b].value.shape));
    }
    Node n;
    n.op = op;
    n.inputs = {a, b};
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value = forward_eval(op, {&nodes_[a].value, &nodes_[b].value}, 0, 0, 0.0f);
    return push(std::move(n));
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    check_id(x);
    check_id(w);
    check_id(b);
    Node n;
    n.op = Op::kConv2d;
    n.inputs = {x, w, b};
    n.i0 = stride;
    n.i1 = pad;
    n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;
    n.value = forward_eval(Op::kConv2d, {&nodes_[x].value, &nodes_[w].value, &nodes_[b].value}, stride, pad, 0.0f);
    return push(std::move(n));
}

Graph::NodeId Graph::dense(NodeId x, NodeId w, NodeId b) {
    check_id(x);
    check_id(w);
    check_id(b);
    Node n;
    n.op = Op::kDense;
    n.inputs = {x, w, b};
    n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;
    n.value = forward_eval(Op::kDense, {&nodes_[x].value, &nodes_[w].value, &nodes_[b].value}, 0, 0, 0.0f);
    return push(std::move(n));
}

Graph::NodeId Graph::relu(NodeId x) { return unary(Op::kRelu, x); }
Graph::NodeId Graph::tanh_op(NodeId x) { return unary(Op::kTanh, x); }
Graph::NodeId Graph::sigmoid(NodeId x) { return unary(Op::kSigmoid, x); }
Graph::NodeId Graph::scale(NodeId x, float s) { return unary(Op::kScale, x, 0, 0, s); }
Graph::NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
Graph::NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
Graph::NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
Graph::NodeId Graph::avgpool2d(NodeId x, int window) { return unary(Op::kAvgPool2d, x, window); }
Graph::NodeId Graph::global_avgpool(NodeId x) { return unary(Op::kGlobalAvgPool, x); }
Graph::NodeId Graph::l2_normalize(NodeId x) { return unary(Op::kL2Normalize, x); }
Graph::NodeId Graph::resize_bilinear(NodeId x, int out_h, int out_w) {
    return unary(Op::kResizeBilinear, x, out_h, out_w);
}
Graph::NodeId Graph::sum(NodeId x) { return unary(Op::kSum, x); }
Graph::NodeId Graph::mean(NodeId x) { return unary(Op::kMean, x); }
Graph::NodeId Graph::cosine_similarity(NodeId u, NodeId v) {
    check_id(u);
    check_id(v);
    if (nodes_[u].value.numel() != nodes_[v].value.numel()) {
        throw std::invalid_argument("graph: cosine length mismatch");
    }
    return binary(Op::kCosine, u, v);
}
Graph::NodeId Graph::pick(NodeId x, int index) {
    check_id(x);
    if (index < 0 || static_cast<size_t>(index) >= nodes_[x].value.numel()) {
        throw std::invalid_argument("graph: pick index out of range");
    }
    return unary(Op::kPick, x, index);
}
Graph::NodeId Graph::logsumexp(NodeId x) { return unary(Op::kLogSumExp, x); }
Graph::NodeId Graph::pow_scalar(NodeId x, float exponent) {
    check_id(x);
    if (!nodes_[x].value.is_scalar()) throw std::invalid_argument("graph: pow_scalar expects a scalar");
    return unary(Op::kPowScalar, x, 0, 0, exponent);
}

Graph::NodeId Graph::pack(std::span<const NodeId> scalars) {
    if (scalars.empty()) throw std::invalid_argument("graph: pack of zero nodes");
    Node n;
    n.op = Op::kPack;
    std::vector<const Tensor*> in;
    for (NodeId id : scalars) {
        check_id(id);
        if (!nodes_[id].value.is_scalar()) throw std::invalid_argument("graph: pack expects scalars");
        n.inputs.push_back(id);
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        in.push_back(&nodes_[id].value);
    }
    n.value = forward_eval(Op::kPack, in, 0, 0, 0.0f);
    return push(std::move(n));
}

Graph::NodeId Graph::stack_rows(std::span<const NodeId> rows) {
    if (rows.empty()) throw std::invalid_argument("graph: stack of zero rows");
    Node n;
    n.op = Op::kStackRows;
    std::vector<const Tensor*> in;
    const size_t d = nodes_[rows[0]].value.numel();
    for (NodeId id : rows) {
        check_id(id);
        if (nodes_[id].value.numel() != d) throw std::invalid_argument("graph: stack rows of unequal length");
        n.inputs.push_back(id);
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        in.push_back(&nodes_[id].value);
    }
    n.value = forward_eval(Op::kStackRows, in, 0, 0, 0.0f);
    return push(std::move(n));
}

Graph::NodeId Graph::nt_xent(NodeId stacked, float tau) {
    check_id(stacked);
    return unary(Op::kNtXent, stacked, 0, 0, tau);
}

const Tensor& Graph::grad(NodeId id) const {
    check_id(id);
    if (!nodes_[id].has_grad) {
        throw std::logic_error("graph: no gradient for node (did you call backward?)");
    }
    return nodes_[id].grad;
}

Tensor& Graph::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(NodeId output) {
    check_id(output);
    if (!nodes_[output].value.is_scalar()) {
        throw std::invalid_argument("graph: backward requires a scalar output");
    }
    if (backward_done_) throw std::logic_error("graph: backward may only run once per graph");
    backward_done_ = true;
    for (NodeId id = 0; id <= output; ++id) {
        if (nodes_[id].requires_grad) grad_buffer(id);
    }
    nodes_[output].grad.fill(0.0f);
    nodes_[output].grad.data[0] = 1.0f;
    for (NodeId id = output + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (n.op == Op::kLeaf || !n.requires_grad || !n.has_grad) continue;
        backward_node(n);
    }
}

void Graph::backward_node(const Node& n) {
    const Tensor& gy = n.grad;
    auto gin = [this](NodeId id) -> Tensor* {
        return nodes_[id].requires_grad ? &grad_buffer(id) : nullptr;
    };
    auto val = [this](NodeId id) -> const Tensor& { return nodes_[id].value; };

    switch (n.op) {
        case Op::kConv2d:
            kernels::conv2d_backward(val(n.inputs[0]), val(n.inputs[1]), gy, n.i0, n.i1,
                                     gin(n.inputs[0]), gin(n.inputs[1]), gin(n.inputs[2]));
            break;
        case Op::kDense:
            kernels::dense_backward(val(n.inputs[0]), val(n.inputs[1]), gy,
                                    gin(n.inputs[0]), gin(n.inputs[1]), gin(n.inputs[2]));
            break;
        case Op::kRelu: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            const Tensor& x = val(n.inputs[0]);
            for (size_t i = 0; i < x.data.size(); ++i) {
                if (x.data[i] > 0.0f) gx->data[i] += gy.data[i];
            }
            break;
        }
        case Op::kTanh: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            for (size_t i = 0; i < n.value.data.size(); ++i) {
                const float y = n.value.data[i];
                gx->data[i] += gy.data[i] * (1.0f - y * y);
            }
            break;
        }
        case Op::kSigmoid: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            for (size_t i = 0; i < n.value.data.size(); ++i) {
                const float y = n.value.data[i];
                gx->data[i] += gy.data[i] * y * (1.0f - y);
            }
            break;
        }
        case Op::kScale: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            for (size_t i = 0; i < gy.data.size(); ++i) gx->data[i] += gy.data[i] * n.f0;
            break;
        }
        case Op::kAdd: {
            if (Tensor* ga = gin(n.inputs[0])) {
                for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += gy.data[i];
            }
            if (Tensor* gb = gin(n.inputs[1])) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] += gy.data[i];
            }
            break;
        }
        case Op::kSub: {
            if (Tensor* ga = gin(n.inputs[0])) {
                for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += gy.data[i];
            }
            if (Tensor* gb = gin(n.inputs[1])) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] -= gy.data[i];
            }
            break;
        }
        case Op::kMul: {
            const Tensor& a = val(n.inputs[0]);
            const Tensor& b = val(n.inputs[1]);
            if (Tensor* ga = gin(n.inputs[0])) {
                for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += gy.data[i] * b.data[i];
            }
            if (Tensor* gb = gin(n.inputs[1])) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] += gy.data[i] * a.data[i];
            }
            break;
        }
        case Op::kAvgPool2d:
            if (Tensor* gx = gin(n.inputs[0])) kernels::avgpool2d_backward(gy, n.i0, gx);
            break;
        case Op::kGlobalAvgPool:
            if (Tensor* gx = gin(n.inputs[0])) {
                kernels::global_avgpool_backward(gy, val(n.inputs[0]).shape, gx);
            }
            break;
        case Op::kL2Normalize:
            if (Tensor* gx = gin(n.inputs[0])) kernels::l2_normalize_backward(val(n.inputs[0]), gy, gx);
            break;
        case Op::kResizeBilinear:
            if (Tensor* gx = gin(n.inputs[0])) {
                kernels::resize_bilinear_backward(gy, val(n.inputs[0]).dim(1), val(n.inputs[0]).dim(2), gx);
            }
            break;
        case Op::kSum: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            const float g = gy.data[0];
            for (float& v : gx->data) v += g;
            break;
        }
        case Op::kMean: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            const float g = gy.data[0] / static_cast<float>(val(n.inputs[0]).numel());
            for (float& v : gx->data) v += g;
            break;
        }
        case Op::kCosine:
            kernels::cosine_similarity_backward(val(n.inputs[0]), val(n.inputs[1]), gy.data[0],
                                                gin(n.inputs[0]), gin(n.inputs[1]));
            break;
        case Op::kPick:
            if (Tensor* gx = gin(n.inputs[0])) gx->data[static_cast<size_t>(n.i0)] += gy.data[0];
            break;
        case Op::kPack:
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                if (Tensor* gx = gin(n.inputs[i])) gx->data[0] += gy.data[i];
            }
            break;
        case Op::kStackRows: {
            const size_t d = val(n.inputs[0]).numel();
            for (size_t r = 0; r < n.inputs.size(); ++r) {
                if (Tensor* gx = gin(n.inputs[r])) {
                    for (size_t j = 0; j < d; ++j) gx->data[j] += gy.data[r * d + j];
                }
            }
            break;
        }
        case Op::kLogSumExp: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            const Tensor& x = val(n.inputs[0]);
            const double lse = n.value.data[0];
            for (size_t i = 0; i < x.data.size(); ++i) {
                gx->data[i] += static_cast<float>(gy.data[0] * std::exp(static_cast<double>(x.data[i]) - lse));
            }
            break;
        }
        case Op::kPowScalar: {
            Tensor* gx = gin(n.inputs[0]);
            if (!gx) break;
            const double base = std::max(static_cast<double>(val(n.inputs[0]).data[0]), 0.0);
            const double p = n.f0;
            double d = 0.0;
            if (base > 0.0) {
                d = p * std::pow(base, p - 1.0);
            } else if (p > 1.0) {
                d = 0.0;  // x^p with p>1 has zero one-sided slope at 0
            }
            gx->data[0] += static_cast<float>(gy.data[0] * d);
            break;
        }
        case Op::kNtXent:
            if (Tensor* gx = gin(n.inputs[0])) {
                kernels::nt_xent_backward(val(n.inputs[0]), n.f0, gy.data[0], gx);
            }
            break;
        case Op::kLeaf:
            break;
    }
}

double Graph::replay_f64(NodeId output, NodeId leaf, const TensorD& leaf_value) const {
    check_id(output);
    check_id(leaf);
    if (nodes_[leaf].op != Op::kLeaf) throw std::invalid_argument("graph: replay override must be a leaf");
    if (!nodes_[output].value.is_scalar()) throw std::invalid_argument("graph: replay output must be scalar");
    std::vector<TensorD> vals(static_cast<size_t>(output) + 1);
    for (NodeId id = 0; id <= output; ++id) {
        const Node& n = nodes_[id];
        if (n.op == Op::kLeaf) {
            vals[id] = (id == leaf) ? leaf_value : to_f64(n.value);
            continue;
        }
        std::vector<const TensorD*> in;
        in.reserve(n.inputs.size());
        for (NodeId src : n.inputs) in.push_back(&vals[src]);
        vals[id] = forward_eval_f64(n.op, in, n.i0, n.i1, n.f0);
    }
    return vals[output].data[0];
}

double finite_difference_check(Graph& g, Graph::NodeId output, Graph::NodeId leaf, double h) {
    if (!g.backward_done()) g.backward(output);
    const Tensor analytic = g.grad(leaf);
    const TensorD base = to_f64(g.value(leaf));
    double max_rel = 0.0;
    for (size_t i = 0; i < base.data.size(); ++i) {
        TensorD pert = base;
        pert.data[i] = base.data[i] + h;
        const double fp = g.replay_f64(output, leaf, pert);
        pert.data[i] = base.data[i] - h;
        const double fm = g.replay_f64(output, leaf, pert);
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace aria
