#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "dgdata/rng.hpp"
#include "dgdata/tensor.hpp"

namespace dgdata {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

/// Reverse-mode computation record. Ops append nodes in execution order, so
/// replaying the record backwards visits every op exactly once in reverse
/// topological order. Node storage keeps references stable while later ops
/// are recorded. One backward pass per build; create a fresh tape (or reset)
/// for the next step. Not thread safe; use one tape per thread.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Tensor* grad_sink = nullptr; // external accumulator for bound leaves
        std::function<void(Tape&, const Node&)> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool needs_grad = false);
    /// Leaf whose gradient is accumulated into an external tensor after backward.
    Var bound_leaf(const Tensor& value, Tensor* grad_sink);

    /// Propagate gradients from a scalar loss to every reachable node, then
    /// flush bound-leaf gradients into their sinks.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

    void reset() { nodes_.clear(); }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Internal: used by op implementations.
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    Var emit(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> backward,
             const char* op_name);

private:
    std::deque<Node> nodes_;
};

// --- Differentiable ops -----------------------------------------------------
// All ops validate shapes and reject non-finite outputs.

/// Elementwise sum of two same-shape values.
Var add(Var a, Var b);
/// Multiply by a compile-time constant.
Var scale(Var a, double c);
/// y = x W + b for x [n,in], W [in,out], b [out].
Var linear(Var x, Var w, Var b);
/// Valid (unpadded) cross-correlation: x [n,ch,L], kernels [co,ch,k] -> [n,co,L'].
Var conv1d(Var x, Var kernels, int stride);
/// Add a per-channel bias to [n,co,L].
Var bias_channel(Var x, Var b);
Var relu(Var x);
Var sigmoid(Var x);
/// Max pooling over the last axis; ties route the gradient to the first max.
Var maxpool1d(Var x, int width, int stride);
/// [n,ch,L] -> [n, ch*L].
Var flatten(Var x);
/// Batch normalization over the batch axis ([n,d]) or batch x length per
/// channel ([n,ch,L]). Train mode uses batch statistics and updates the
/// running buffers by exponential moving average; eval mode uses the buffers.
Var batchnorm1d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                bool train_mode, double momentum = 0.1, double eps = 1e-5);
/// Mean negative log softmax over labelled rows. Rows whose label equals
/// ignore_label are excluded from the mean; at least one row must count.
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels, int ignore_label = -1);
/// Mean squared difference.
Var mse(Var a, Var b);
/// Mean over elements of the divergence of N(0, exp(logvar)) from N(0, var_target):
/// 0.5 * (sigma^2/var_target - 1 - ln(sigma^2/var_target)).
Var gaussian_kl_to_var(Var logvar, double var_target);
/// z = mean + exp(0.5 logvar) * eps with eps ~ N(0,1) drawn once at record
/// time. Gradient flows to mean and logvar only.
Var reparam_sample(Var mean, Var logvar, Rng& rng);
/// Same transform with caller-supplied noise (shared between two paths).
Var reparam_sample_given(Var mean, Var logvar, const Tensor& eps);
/// Identity forward; backward multiplies the upstream gradient by -lambda.
Var grad_reverse(Var x, double lambda);

// --- Non-differentiable helpers ---------------------------------------------

/// Row-wise softmax of a [n,C] tensor (inference paths).
Tensor softmax_rows(const Tensor& logits);

} // namespace dgdata
