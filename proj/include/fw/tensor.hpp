#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "fw/error.hpp"
#include "fw/rng.hpp"

namespace fw {

class Tensor;

namespace detail {

// One node of the recorded operation graph. The graph doubles as the
// gradient tape: ops append themselves by storing parents and a backward
// closure; Tensor::backward() replays the record in reverse topological
// order. Single-owner per training step, never shared across threads.
struct TensorImpl {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data once gradients touch this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;  // accumulates into parents

    void accumulate(const double* g, std::size_t n);
};

}  // namespace detail

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// Dense N-dimensional real array, row-major, 64-bit values. Value type with
// shared underlying storage: copies alias the same buffer.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor uniform(std::vector<std::int64_t> shape, double lo, double hi, SplitMix64& rng,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::int64_t>& shape() const;
    std::int64_t numel() const;
    std::int64_t dim(std::size_t i) const;
    std::size_t rank() const;

    double* data();
    const double* data() const;
    double* grad();
    const double* grad() const;
    bool has_grad() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    void zero_grad();

    double item() const;
    // Flat and multi-index element access (reads data).
    double operator[](std::int64_t flat) const;
    double at(const std::vector<std::int64_t>& index) const;

    // Deep copy, detached from any graph; requires_grad preserved on clone(),
    // cleared on detach().
    Tensor clone() const;
    Tensor detach() const;

    bool is_leaf() const;

    // Reverse-mode sweep from a scalar root: reverse-topological replay of the
    // recorded operations, accumulating into every reachable requires_grad leaf.
    void backward();

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Complex spatial spectrum; real and imaginary buffers share the shape.
struct ComplexTensor {
    std::vector<std::int64_t> shape;
    std::vector<double> re;
    std::vector<double> im;

    std::int64_t numel() const { return shape_numel(shape); }
};

// Integer class-index map (segmentation targets / predictions).
struct ClassMap {
    std::vector<std::int64_t> shape;  // typically [B,H,W] or [H,W]
    std::vector<std::int32_t> values;

    std::int64_t numel() const { return shape_numel(shape); }
};

// ---- differentiable ops ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gelu(const Tensor& a);

// Softmax over the last axis; numerically stabilized by max subtraction.
Tensor softmax(const Tensor& a);

// y[..., :] = x[..., :] @ w + b with w: [C_in, C_out], b: [C_out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Two-layer bottleneck MLP: affine -> GELU -> affine.
Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2);

// x: [N,C,H,W], w: [O,C,kh,kw], optional b: [O]. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t padding);

// Per-channel convolution, odd k, zero same-padding, stride 1.
// x: [N,C,H,W], kernel: [C,k,k].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

// x: [B,H,W,C] -> [B,C], mean over spatial positions.
Tensor global_avg_pool(const Tensor& x);

// Pixel-wise cross-entropy, mean over all pixels of w * (-log softmax[target]).
// logits: [B,Cls,H,W], targets: [B,H,W], weights (optional): [B,H,W] >= 0.
Tensor cross_entropy(const Tensor& logits, const ClassMap& targets,
                     const Tensor& pixel_weights = Tensor());

Tensor upsample_nearest2(const Tensor& x);  // [N,C,H,W] -> [N,C,2H,2W]
Tensor nchw_to_nhwc(const Tensor& x);
Tensor nhwc_to_nchw(const Tensor& x);

Tensor select_column(const Tensor& x, std::int64_t k);   // [B,K] -> [B]
Tensor mul_per_sample(const Tensor& x, const Tensor& s); // x: [B,...], s: [B]

// ---- spectral transforms (plain buffers, no tape) ---------------------------

// Unnormalized forward 2D DFT per (batch, channel) slice of a [B,C,H,W] tensor.
ComplexTensor dft2(const Tensor& x);

// 1/(H*W)-normalized inverse; returns the real part. The largest imaginary
// magnitude encountered is written to *imag_residue when non-null.
Tensor idft2(const ComplexTensor& xf, double* imag_residue = nullptr);

// ---- numerical checking ------------------------------------------------------

// Compares tape gradients of the scalar f() against central finite
// differences (step h) for every element of every param. Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                       double h = 1e-3);

void assert_finite(const Tensor& t, const char* what);

}  // namespace fw
