#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "brainit/tensor.hpp"

namespace brainit::nn {

using brainit::Real;
using brainit::Tensor;

/// One node of the reverse-mode tape. Values are materialized eagerly;
/// backward_fn scatters this node's gradient into its parents.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor&)> backward_fn;
    std::uint64_t id = 0;
};

void accum_grad(const std::shared_ptr<Node>& n, const Tensor& g);
Tensor& ensure_grad(const std::shared_ptr<Node>& n);

/// Handle to a tape node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad_ready; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::shared_ptr<Node> node() const { return node_; }

    /// Runs reverse accumulation from this (scalar) node.
    void backward() const;

    /// Drops accumulated gradient (leaves value untouched).
    void zero_grad();

    static Var make(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Elementwise / scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, Real c);
Var mul_scalar(const Var& a, Real c);
Var neg(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, Real alpha);
Var sigmoid(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);

// Linear algebra on 2-D tensors.
Var matmul(const Var& a, const Var& b);     // A[m,k] * B[k,n]
Var matmul_nt(const Var& a, const Var& b);  // A[m,k] * B[n,k]^T
Var matmul_tn(const Var& a, const Var& b);  // A[k,m]^T * B[k,n]

// Structured ops.
Var rowwise_scale(const Var& m, const Var& s);           // m[n,d] * s[n] per row
Var add_rowvec(const Var& m, const Var& b);              // m[n,d] + b[d]
Var gather_rows(const Var& m, std::vector<std::int64_t> idx);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& m, std::int64_t start, std::int64_t len);
Var slice_cols(const Var& m, std::int64_t start, std::int64_t len);
Var softmax_rows(const Var& m);
Var take_diag(const Var& m);                             // [n,n] -> [n]
Var l2_normalize_rows(const Var& m, Real eps = 1e-12);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-5);
Var reshape(const Var& x, std::vector<std::int64_t> shape);

// Image ops; x is [C,H,W].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);
Var concat_channels(const Var& a, const Var& b);

// Composites.
Var linear(const Var& x, const Var& w, const Var& b);  // x[n,d] * w[d,k] + b[k]
Var mse(const Var& a, const Var& b);

// Non-differentiable helpers shared with plain-tensor code paths.
Tensor upsample_bilinear_value(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace brainit::nn
