#include "fw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace fw {

namespace {

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeError(msg);
}

using detail::TensorImpl;

std::shared_ptr<TensorImpl> make_impl(std::vector<std::int64_t> shape, std::vector<double> data,
                                      bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    if (static_cast<std::int64_t>(impl->data.size()) != shape_numel(impl->shape)) {
        throw ShapeError("tensor data length does not match shape " + shape_str(impl->shape));
    }
    return impl;
}

}  // namespace

namespace detail {

void TensorImpl::accumulate(const double* g, std::size_t n) {
    if (!requires_grad) return;
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
}

}  // namespace detail

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("nonpositive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data, bool requires_grad)
    : impl_(make_impl(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                  requires_grad);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                  requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}, false); }

Tensor Tensor::uniform(std::vector<std::int64_t> shape, double lo, double hi, SplitMix64& rng,
                       bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<double> d(static_cast<std::size_t>(n));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

const std::vector<std::int64_t>& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
std::int64_t Tensor::dim(std::size_t i) const { return impl_->shape.at(i); }
std::size_t Tensor::rank() const { return impl_->shape.size(); }

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

double* Tensor::grad() { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
const double* Tensor::grad() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    if (!value) impl_->grad.clear();
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
    return impl_->data[0];
}

double Tensor::operator[](std::int64_t flat) const {
    return impl_->data.at(static_cast<std::size_t>(flat));
}

double Tensor::at(const std::vector<std::int64_t>& index) const {
    require(index.size() == impl_->shape.size(), "index rank mismatch");
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < impl_->shape[i], "index out of bounds");
        flat = flat * impl_->shape[i] + index[i];
    }
    return impl_->data[static_cast<std::size_t>(flat)];
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

bool Tensor::is_leaf() const { return !impl_->backward_fn; }

void Tensor::backward() {
    if (numel() != 1) throw ShapeError("backward() requires a scalar root");
    if (!impl_->requires_grad) throw StateError("backward() on a tensor that requires no grad");

    // Iterative DFS topological order over the recorded graph.
    std::vector<TensorImpl*> topo;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    const double one = 1.0;
    impl_->accumulate(&one, 1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---- op helpers ----------------------------------------------------------------

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

// Builds an output node; records parents + backward only when grad is needed.
Tensor make_node(std::vector<std::int64_t> shape, std::vector<double> data,
                 std::initializer_list<const Tensor*> inputs,
                 std::function<void(TensorImpl&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    if (any_requires_grad(inputs)) {
        auto impl = out.impl();
        impl->requires_grad = true;
        for (const Tensor* t : inputs) {
            if (t->defined()) impl->parents.push_back(t->impl());
        }
        impl->backward_fn = std::move(backward);
    }
    return out;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shape mismatch");
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<double> d(n);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] + pb[i];
    return make_node(a.shape(), std::move(d), {&a, &b}, [a, b](TensorImpl& self) {
        a.impl()->accumulate(self.grad.data(), self.grad.size());
        b.impl()->accumulate(self.grad.data(), self.grad.size());
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch");
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<double> d(n);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] - pb[i];
    return make_node(a.shape(), std::move(d), {&a, &b}, [a, b](TensorImpl& self) {
        a.impl()->accumulate(self.grad.data(), self.grad.size());
        if (b.requires_grad()) {
            std::vector<double> g(self.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
            b.impl()->accumulate(g.data(), g.size());
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<double> d(n);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] * pb[i];
    return make_node(a.shape(), std::move(d), {&a, &b}, [a, b](TensorImpl& self) {
        const std::size_t n = self.grad.size();
        if (a.requires_grad()) {
            std::vector<double> g(n);
            const double* pb = b.data();
            for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb[i];
            a.impl()->accumulate(g.data(), n);
        }
        if (b.requires_grad()) {
            std::vector<double> g(n);
            const double* pa = a.data();
            for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa[i];
            b.impl()->accumulate(g.data(), n);
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<double> d(n);
    const double* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] * s;
    return make_node(a.shape(), std::move(d), {&a}, [a, s](TensorImpl& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * s;
        a.impl()->accumulate(g.data(), g.size());
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    const double* pa = a.data();
    const std::size_t n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) s += pa[i];
    return make_node({}, {s}, {&a}, [a](TensorImpl& self) {
        std::vector<double> g(static_cast<std::size_t>(a.numel()), self.grad[0]);
        a.impl()->accumulate(g.data(), g.size());
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    return scale(sum(a), inv);
}

Tensor gelu(const Tensor& a) {
    // tanh approximation
    static const double kC = std::sqrt(2.0 / M_PI);
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<double> d(n);
    const double* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pa[i];
        d[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
    }
    return make_node(a.shape(), std::move(d), {&a}, [a](TensorImpl& self) {
        const std::size_t n = self.grad.size();
        std::vector<double> g(n);
        const double* pa = a.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = pa[i];
            const double u = kC * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double sech2 = 1.0 - t * t;
            const double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
            g[i] = self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * sech2 * du);
        }
        a.impl()->accumulate(g.data(), n);
    });
}

Tensor softmax(const Tensor& a) {
    require(a.rank() >= 1, "softmax: rank must be >= 1");
    const std::int64_t k = a.shape().back();
    const std::int64_t rows = a.numel() / k;
    std::vector<double> d(static_cast<std::size_t>(a.numel()));
    const double* pa = a.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = pa + r * k;
        double* y = d.data() + r * k;
        double mx = x[0];
        for (std::int64_t i = 1; i < k; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (std::int64_t i = 0; i < k; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        const double inv = 1.0 / s;
        for (std::int64_t i = 0; i < k; ++i) y[i] *= inv;
    }
    Tensor out = make_node(a.shape(), std::move(d), {&a}, [a, k, rows](TensorImpl& self) {
        std::vector<double> g(self.grad.size());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * k;
            const double* up = self.grad.data() + r * k;
            double dot = 0.0;
            for (std::int64_t i = 0; i < k; ++i) dot += up[i] * y[i];
            double* gr = g.data() + r * k;
            for (std::int64_t i = 0; i < k; ++i) gr[i] = y[i] * (up[i] - dot);
        }
        a.impl()->accumulate(g.data(), g.size());
    });
    return out;
}

// ---- linear / MLP ----------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(w.rank() == 2, "linear: weight must be [C_in,C_out]");
    const std::int64_t cin = w.dim(0);
    const std::int64_t cout = w.dim(1);
    require(x.rank() >= 1 && x.shape().back() == cin, "linear: input channel mismatch");
    require(!b.defined() || (b.rank() == 1 && b.dim(0) == cout), "linear: bias shape mismatch");

    const std::int64_t rows = x.numel() / cin;
    std::vector<std::int64_t> out_shape = x.shape();
    out_shape.back() = cout;
    std::vector<double> d(static_cast<std::size_t>(rows * cout), 0.0);
    const double* px = x.data();
    const double* pw = w.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * cin;
        double* yr = d.data() + r * cout;
        if (b.defined()) {
            const double* pb = b.data();
            for (std::int64_t o = 0; o < cout; ++o) yr[o] = pb[o];
        }
        for (std::int64_t i = 0; i < cin; ++i) {
            const double xv = xr[i];
            const double* wr = pw + i * cout;
            for (std::int64_t o = 0; o < cout; ++o) yr[o] += xv * wr[o];
        }
    }
    return make_node(std::move(out_shape), std::move(d), {&x, &w, &b},
                     [x, w, b, rows, cin, cout](TensorImpl& self) {
                         const double* up = self.grad.data();
                         if (x.requires_grad()) {
                             std::vector<double> gx(static_cast<std::size_t>(rows * cin), 0.0);
                             const double* pw = w.data();
                             for (std::int64_t r = 0; r < rows; ++r) {
                                 const double* ur = up + r * cout;
                                 double* gr = gx.data() + r * cin;
                                 for (std::int64_t i = 0; i < cin; ++i) {
                                     const double* wr = pw + i * cout;
                                     double acc = 0.0;
                                     for (std::int64_t o = 0; o < cout; ++o) acc += ur[o] * wr[o];
                                     gr[i] = acc;
                                 }
                             }
                             x.impl()->accumulate(gx.data(), gx.size());
                         }
                         if (w.requires_grad()) {
                             std::vector<double> gw(static_cast<std::size_t>(cin * cout), 0.0);
                             const double* px = x.data();
                             for (std::int64_t r = 0; r < rows; ++r) {
                                 const double* xr = px + r * cin;
                                 const double* ur = up + r * cout;
                                 for (std::int64_t i = 0; i < cin; ++i) {
                                     double* wr = gw.data() + i * cout;
                                     const double xv = xr[i];
                                     for (std::int64_t o = 0; o < cout; ++o) wr[o] += xv * ur[o];
                                 }
                             }
                             w.impl()->accumulate(gw.data(), gw.size());
                         }
                         if (b.defined() && b.requires_grad()) {
                             std::vector<double> gb(static_cast<std::size_t>(cout), 0.0);
                             for (std::int64_t r = 0; r < rows; ++r) {
                                 const double* ur = up + r * cout;
                                 for (std::int64_t o = 0; o < cout; ++o) gb[o] += ur[o];
                             }
                             b.impl()->accumulate(gb.data(), gb.size());
                         }
                     });
}

Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2) {
    return linear(gelu(linear(x, w1, b1)), w2, b2);
}

// ---- convolutions ----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t padding) {
    require(x.rank() == 4, "conv2d: input must be [N,C,H,W]");
    require(w.rank() == 4, "conv2d: weight must be [O,C,kh,kw]");
    if (stride <= 0 || padding < 0) throw ConfigError("conv2d: bad stride/padding");
    const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == ci, "conv2d: channel mismatch");
    require(!b.defined() || (b.rank() == 1 && b.dim(0) == co), "conv2d: bias mismatch");
    const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t wo = (wd + 2 * padding - kw) / stride + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output");

    std::vector<double> out(static_cast<std::size_t>(n * co * ho * wo), 0.0);
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.defined() ? b.data() : nullptr;

    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
            double* op = out.data() + ((in * co + oc) * ho) * wo;
            const double bias = pb ? pb[oc] : 0.0;
            for (std::int64_t oy = 0; oy < ho; ++oy) {
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double acc = bias;
                    const std::int64_t iy0 = oy * stride - padding;
                    const std::int64_t ix0 = ox * stride - padding;
                    const std::int64_t ky0 = std::max<std::int64_t>(0, -iy0);
                    const std::int64_t ky1 = std::min(kh, h - iy0);
                    const std::int64_t kx0 = std::max<std::int64_t>(0, -ix0);
                    const std::int64_t kx1 = std::min(kw, wd - ix0);
                    for (std::int64_t ic = 0; ic < ci; ++ic) {
                        const double* xc = px + ((in * ci + ic) * h) * wd;
                        const double* wc = pw + ((oc * ci + ic) * kh) * kw;
                        for (std::int64_t ky = ky0; ky < ky1; ++ky) {
                            const double* xrow = xc + (iy0 + ky) * wd + ix0;
                            const double* wrow = wc + ky * kw;
                            for (std::int64_t kx = kx0; kx < kx1; ++kx)
                                acc += xrow[kx] * wrow[kx];
                        }
                    }
                    op[oy * wo + ox] = acc;
                }
            }
        }
    }

    return make_node(
        {n, co, ho, wo}, std::move(out), {&x, &w, &b},
        [x, w, b, n, ci, h, wd, co, kh, kw, ho, wo, stride, padding](TensorImpl& self) {
            const double* up = self.grad.data();
            const double* px = x.data();
            const double* pw = w.data();
            const bool need_x = x.requires_grad();
            const bool need_w = w.requires_grad();
            std::vector<double> gx(need_x ? static_cast<std::size_t>(n * ci * h * wd) : 0, 0.0);
            std::vector<double> gw(need_w ? static_cast<std::size_t>(co * ci * kh * kw) : 0, 0.0);
            for (std::int64_t in = 0; in < n; ++in) {
                for (std::int64_t oc = 0; oc < co; ++oc) {
                    const double* ug = up + ((in * co + oc) * ho) * wo;
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy0 = oy * stride - padding;
                        const std::int64_t ky0 = std::max<std::int64_t>(0, -iy0);
                        const std::int64_t ky1 = std::min(kh, h - iy0);
                        for (std::int64_t ox = 0; ox < wo; ++ox) {
                            const double g = ug[oy * wo + ox];
                            if (g == 0.0) continue;
                            const std::int64_t ix0 = ox * stride - padding;
                            const std::int64_t kx0 = std::max<std::int64_t>(0, -ix0);
                            const std::int64_t kx1 = std::min(kw, wd - ix0);
                            for (std::int64_t ic = 0; ic < ci; ++ic) {
                                const std::int64_t xoff = ((in * ci + ic) * h) * wd;
                                const std::int64_t woff = ((oc * ci + ic) * kh) * kw;
                                for (std::int64_t ky = ky0; ky < ky1; ++ky) {
                                    const std::int64_t xrow = xoff + (iy0 + ky) * wd + ix0;
                                    const std::int64_t wrow = woff + ky * kw;
                                    if (need_x) {
                                        for (std::int64_t kx = kx0; kx < kx1; ++kx)
                                            gx[xrow + kx] += g * pw[wrow + kx];
                                    }
                                    if (need_w) {
                                        for (std::int64_t kx = kx0; kx < kx1; ++kx)
                                            gw[wrow + kx] += g * px[xrow + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (need_x) x.impl()->accumulate(gx.data(), gx.size());
            if (need_w) w.impl()->accumulate(gw.data(), gw.size());
            if (b.defined() && b.requires_grad()) {
                std::vector<double> gb(static_cast<std::size_t>(co), 0.0);
                for (std::int64_t in = 0; in < n; ++in)
                    for (std::int64_t oc = 0; oc < co; ++oc) {
                        const double* ug = up + ((in * co + oc) * ho) * wo;
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < ho * wo; ++i) acc += ug[i];
                        gb[oc] += acc;
                    }
                b.impl()->accumulate(gb.data(), gb.size());
            }
        });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
    require(x.rank() == 4, "depthwise_conv2d: input must be [N,C,H,W]");
    require(kernel.rank() == 3, "depthwise_conv2d: kernel must be [C,k,k]");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t k = kernel.dim(1);
    require(kernel.dim(0) == c, "depthwise_conv2d: channel mismatch");
    require(kernel.dim(2) == k, "depthwise_conv2d: kernel must be square");
    if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd");
    const std::int64_t pad = (k - 1) / 2;

    std::vector<double> out(static_cast<std::size_t>(x.numel()), 0.0);
    const double* px = x.data();
    const double* pk = kernel.data();
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const double* xc = px + ((in * c + ic) * h) * w;
            const double* kc = pk + (ic * k) * k;
            double* oc = out.data() + ((in * c + ic) * h) * w;
            for (std::int64_t oy = 0; oy < h; ++oy) {
                const std::int64_t iy0 = oy - pad;
                const std::int64_t ky0 = std::max<std::int64_t>(0, -iy0);
                const std::int64_t ky1 = std::min(k, h - iy0);
                for (std::int64_t ox = 0; ox < w; ++ox) {
                    const std::int64_t ix0 = ox - pad;
                    const std::int64_t kx0 = std::max<std::int64_t>(0, -ix0);
                    const std::int64_t kx1 = std::min(k, w - ix0);
                    double acc = 0.0;
                    for (std::int64_t ky = ky0; ky < ky1; ++ky) {
                        const double* xrow = xc + (iy0 + ky) * w + ix0;
                        const double* krow = kc + ky * k;
                        for (std::int64_t kx = kx0; kx < kx1; ++kx) acc += xrow[kx] * krow[kx];
                    }
                    oc[oy * w + ox] = acc;
                }
            }
        }
    }

    return make_node(x.shape(), std::move(out), {&x, &kernel},
                     [x, kernel, n, c, h, w, k, pad](TensorImpl& self) {
                         const double* up = self.grad.data();
                         const double* px = x.data();
                         const double* pk = kernel.data();
                         const bool need_x = x.requires_grad();
                         const bool need_k = kernel.requires_grad();
                         std::vector<double> gx(need_x ? self.grad.size() : 0, 0.0);
                         std::vector<double> gk(
                             need_k ? static_cast<std::size_t>(c * k * k) : 0, 0.0);
                         for (std::int64_t in = 0; in < n; ++in) {
                             for (std::int64_t ic = 0; ic < c; ++ic) {
                                 const std::int64_t xoff = ((in * c + ic) * h) * w;
                                 const std::int64_t koff = (ic * k) * k;
                                 const double* ug = up + xoff;
                                 for (std::int64_t oy = 0; oy < h; ++oy) {
                                     const std::int64_t iy0 = oy - pad;
                                     const std::int64_t ky0 = std::max<std::int64_t>(0, -iy0);
                                     const std::int64_t ky1 = std::min(k, h - iy0);
                                     for (std::int64_t ox = 0; ox < w; ++ox) {
                                         const double g = ug[oy * w + ox];
                                         if (g == 0.0) continue;
                                         const std::int64_t ix0 = ox - pad;
                                         const std::int64_t kx0 = std::max<std::int64_t>(0, -ix0);
                                         const std::int64_t kx1 = std::min(k, w - ix0);
                                         for (std::int64_t ky = ky0; ky < ky1; ++ky) {
                                             const std::int64_t xrow = xoff + (iy0 + ky) * w + ix0;
                                             const std::int64_t krow = koff + ky * k;
                                             if (need_x)
                                                 for (std::int64_t kx = kx0; kx < kx1; ++kx)
                                                     gx[xrow + kx] += g * pk[krow + kx];
                                             if (need_k)
                                                 for (std::int64_t kx = kx0; kx < kx1; ++kx)
                                                     gk[krow + kx] += g * px[xrow + kx];
                                         }
                                     }
                                 }
                             }
                         }
                         if (need_x) x.impl()->accumulate(gx.data(), gx.size());
                         if (need_k) kernel.impl()->accumulate(gk.data(), gk.size());
                     });
}

// ---- pooling / layout ------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool: input must be [B,H,W,C]");
    const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const double inv = 1.0 / static_cast<double>(h * w);
    std::vector<double> out(static_cast<std::size_t>(b * c), 0.0);
    const double* px = x.data();
    for (std::int64_t ib = 0; ib < b; ++ib) {
        double* ob = out.data() + ib * c;
        const double* xb = px + ib * h * w * c;
        for (std::int64_t i = 0; i < h * w; ++i) {
            const double* row = xb + i * c;
            for (std::int64_t ic = 0; ic < c; ++ic) ob[ic] += row[ic];
        }
        for (std::int64_t ic = 0; ic < c; ++ic) ob[ic] *= inv;
    }
    return make_node({b, c}, std::move(out), {&x}, [x, b, h, w, c, inv](TensorImpl& self) {
        std::vector<double> g(static_cast<std::size_t>(x.numel()));
        for (std::int64_t ib = 0; ib < b; ++ib) {
            const double* ub = self.grad.data() + ib * c;
            double* gb = g.data() + ib * h * w * c;
            for (std::int64_t i = 0; i < h * w; ++i)
                for (std::int64_t ic = 0; ic < c; ++ic) gb[i * c + ic] = ub[ic] * inv;
        }
        x.impl()->accumulate(g.data(), g.size());
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    require(x.rank() == 4, "upsample_nearest2: input must be [N,C,H,W]");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(n * c * 4 * h * w));
    const double* px = x.data();
    for (std::int64_t s = 0; s < n * c; ++s) {
        const double* xs = px + s * h * w;
        double* os = out.data() + s * 4 * h * w;
        for (std::int64_t y = 0; y < 2 * h; ++y) {
            const double* xrow = xs + (y / 2) * w;
            double* orow = os + y * 2 * w;
            for (std::int64_t xcol = 0; xcol < 2 * w; ++xcol) orow[xcol] = xrow[xcol / 2];
        }
    }
    return make_node({n, c, 2 * h, 2 * w}, std::move(out), {&x},
                     [x, n, c, h, w](TensorImpl& self) {
                         std::vector<double> g(static_cast<std::size_t>(x.numel()), 0.0);
                         for (std::int64_t s = 0; s < n * c; ++s) {
                             const double* us = self.grad.data() + s * 4 * h * w;
                             double* gs = g.data() + s * h * w;
                             for (std::int64_t y = 0; y < 2 * h; ++y)
                                 for (std::int64_t xcol = 0; xcol < 2 * w; ++xcol)
                                     gs[(y / 2) * w + xcol / 2] += us[y * 2 * w + xcol];
                         }
                         x.impl()->accumulate(g.data(), g.size());
                     });
}

namespace {

Tensor permute_0231(const Tensor& x, bool to_nhwc) {
    require(x.rank() == 4, "layout permute: rank must be 4");
    const std::int64_t d0 = x.dim(0), d1 = x.dim(1), d2 = x.dim(2), d3 = x.dim(3);
    // to_nhwc: [N,C,H,W] -> [N,H,W,C]; otherwise [N,H,W,C] -> [N,C,H,W].
    std::vector<std::int64_t> oshape =
        to_nhwc ? std::vector<std::int64_t>{d0, d2, d3, d1}
                : std::vector<std::int64_t>{d0, d3, d1, d2};
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* px = x.data();
    if (to_nhwc) {
        for (std::int64_t n = 0; n < d0; ++n)
            for (std::int64_t c = 0; c < d1; ++c)
                for (std::int64_t i = 0; i < d2 * d3; ++i)
                    out[(n * d2 * d3 + i) * d1 + c] = px[((n * d1 + c) * d2 * d3) + i];
    } else {
        for (std::int64_t n = 0; n < d0; ++n)
            for (std::int64_t i = 0; i < d1 * d2; ++i)
                for (std::int64_t c = 0; c < d3; ++c)
                    out[((n * d3 + c) * d1 * d2) + i] = px[(n * d1 * d2 + i) * d3 + c];
    }
    return make_node(std::move(oshape), std::move(out), {&x},
                     [x, d0, d1, d2, d3, to_nhwc](TensorImpl& self) {
                         std::vector<double> g(static_cast<std::size_t>(x.numel()));
                         if (to_nhwc) {
                             for (std::int64_t n = 0; n < d0; ++n)
                                 for (std::int64_t c = 0; c < d1; ++c)
                                     for (std::int64_t i = 0; i < d2 * d3; ++i)
                                         g[((n * d1 + c) * d2 * d3) + i] =
                                             self.grad[(n * d2 * d3 + i) * d1 + c];
                         } else {
                             for (std::int64_t n = 0; n < d0; ++n)
                                 for (std::int64_t i = 0; i < d1 * d2; ++i)
                                     for (std::int64_t c = 0; c < d3; ++c)
                                         g[(n * d1 * d2 + i) * d3 + c] =
                                             self.grad[((n * d3 + c) * d1 * d2) + i];
                         }
                         x.impl()->accumulate(g.data(), g.size());
                     });
}

}  // namespace

Tensor nchw_to_nhwc(const Tensor& x) { return permute_0231(x, true); }
Tensor nhwc_to_nchw(const Tensor& x) { return permute_0231(x, false); }

Tensor select_column(const Tensor& x, std::int64_t k) {
    require(x.rank() == 2, "select_column: input must be [B,K]");
    const std::int64_t b = x.dim(0), cols = x.dim(1);
    require(k >= 0 && k < cols, "select_column: column out of range");
    std::vector<double> out(static_cast<std::size_t>(b));
    const double* px = x.data();
    for (std::int64_t i = 0; i < b; ++i) out[i] = px[i * cols + k];
    return make_node({b}, std::move(out), {&x}, [x, b, cols, k](TensorImpl& self) {
        std::vector<double> g(static_cast<std::size_t>(b * cols), 0.0);
        for (std::int64_t i = 0; i < b; ++i) g[i * cols + k] = self.grad[i];
        x.impl()->accumulate(g.data(), g.size());
    });
}

Tensor mul_per_sample(const Tensor& x, const Tensor& s) {
    require(x.rank() >= 1, "mul_per_sample: input rank");
    require(s.rank() == 1 && s.dim(0) == x.dim(0), "mul_per_sample: scale must be [B]");
    const std::int64_t b = x.dim(0);
    const std::int64_t rest = x.numel() / b;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* px = x.data();
    const double* ps = s.data();
    for (std::int64_t i = 0; i < b; ++i) {
        const double sv = ps[i];
        const double* xr = px + i * rest;
        double* orow = out.data() + i * rest;
        for (std::int64_t j = 0; j < rest; ++j) orow[j] = xr[j] * sv;
    }
    return make_node(x.shape(), std::move(out), {&x, &s}, [x, s, b, rest](TensorImpl& self) {
        if (x.requires_grad()) {
            std::vector<double> g(self.grad.size());
            const double* ps = s.data();
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t j = 0; j < rest; ++j)
                    g[i * rest + j] = self.grad[i * rest + j] * ps[i];
            x.impl()->accumulate(g.data(), g.size());
        }
        if (s.requires_grad()) {
            std::vector<double> g(static_cast<std::size_t>(b), 0.0);
            const double* px = x.data();
            for (std::int64_t i = 0; i < b; ++i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < rest; ++j)
                    acc += self.grad[i * rest + j] * px[i * rest + j];
                g[i] = acc;
            }
            s.impl()->accumulate(g.data(), g.size());
        }
    });
}

// ---- cross entropy ----------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const ClassMap& targets, const Tensor& pixel_weights) {
    require(logits.rank() == 4, "cross_entropy: logits must be [B,Cls,H,W]");
    const std::int64_t b = logits.dim(0), cls = logits.dim(1), h = logits.dim(2),
                       w = logits.dim(3);
    if (targets.shape != std::vector<std::int64_t>{b, h, w})
        throw ShapeError("cross_entropy: target map shape mismatch");
    if (pixel_weights.defined() && pixel_weights.shape() != std::vector<std::int64_t>{b, h, w})
        throw ShapeError("cross_entropy: weight map shape mismatch");
    for (std::int32_t t : targets.values)
        if (t < 0 || t >= cls) throw DataError("cross_entropy: target index out of range");
    if (pixel_weights.defined()) {
        const double* pw = pixel_weights.data();
        for (std::int64_t i = 0; i < pixel_weights.numel(); ++i)
            if (pw[i] < 0.0) throw DataError("cross_entropy: negative pixel weight");
    }

    const std::int64_t npix = b * h * w;
    const double inv = 1.0 / static_cast<double>(npix);
    const double* pl = logits.data();
    const double* pw = pixel_weights.defined() ? pixel_weights.data() : nullptr;
    const std::int64_t plane = h * w;
    double loss = 0.0;
    for (std::int64_t ib = 0; ib < b; ++ib) {
        const double* lb = pl + ib * cls * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            double mx = lb[j];
            for (std::int64_t ic = 1; ic < cls; ++ic) mx = std::max(mx, lb[ic * plane + j]);
            double se = 0.0;
            for (std::int64_t ic = 0; ic < cls; ++ic) se += std::exp(lb[ic * plane + j] - mx);
            const double lse = mx + std::log(se);
            const std::int32_t t = targets.values[static_cast<std::size_t>(ib * plane + j)];
            const double wj = pw ? pw[ib * plane + j] : 1.0;
            loss += wj * (lse - lb[t * plane + j]);
        }
    }
    loss *= inv;

    ClassMap tcopy = targets;
    Tensor wcopy = pixel_weights;  // shares buffer; treated as constant
    return make_node({}, {loss}, {&logits},
                     [logits, tcopy, wcopy, b, cls, h, w, inv](TensorImpl& self) {
                         const double up = self.grad[0];
                         const std::int64_t plane = h * w;
                         const double* pl = logits.data();
                         const double* pw = wcopy.defined() ? wcopy.data() : nullptr;
                         std::vector<double> g(static_cast<std::size_t>(logits.numel()));
                         std::vector<double> prob(static_cast<std::size_t>(cls));
                         for (std::int64_t ib = 0; ib < b; ++ib) {
                             const double* lb = pl + ib * cls * plane;
                             double* gb = g.data() + ib * cls * plane;
                             for (std::int64_t j = 0; j < plane; ++j) {
                                 double mx = lb[j];
                                 for (std::int64_t ic = 1; ic < cls; ++ic)
                                     mx = std::max(mx, lb[ic * plane + j]);
                                 double se = 0.0;
                                 for (std::int64_t ic = 0; ic < cls; ++ic) {
                                     prob[ic] = std::exp(lb[ic * plane + j] - mx);
                                     se += prob[ic];
                                 }
                                 const double invse = 1.0 / se;
                                 const std::int32_t t =
                                     tcopy.values[static_cast<std::size_t>(ib * plane + j)];
                                 const double wj = pw ? pw[ib * plane + j] : 1.0;
                                 const double f = up * inv * wj;
                                 for (std::int64_t ic = 0; ic < cls; ++ic) {
                                     double d = prob[ic] * invse;
                                     if (ic == t) d -= 1.0;
                                     gb[ic * plane + j] = f * d;
                                 }
                             }
                         }
                         logits.impl()->accumulate(g.data(), g.size());
                     });
}

// ---- DFT ---------------------------------------------------------------------------

namespace {

// Row-column 1D DFT decomposition. kernel(sign): exp(sign * 2*pi*i * k*n / N).
struct Twiddle {
    std::vector<double> cos_t;
    std::vector<double> sin_t;
    std::int64_t n;

    Twiddle(std::int64_t n_, double sign) : cos_t(n_ * n_), sin_t(n_ * n_), n(n_) {
        for (std::int64_t k = 0; k < n; ++k)
            for (std::int64_t j = 0; j < n; ++j) {
                const double ang = sign * 2.0 * M_PI * static_cast<double>((k * j) % n) /
                                   static_cast<double>(n);
                cos_t[k * n + j] = std::cos(ang);
                sin_t[k * n + j] = std::sin(ang);
            }
    }
};

// One [H,W] slice: out = T_rows * in * T_cols (complex).
void dft2_slice(const double* re_in, const double* im_in, double* re_out, double* im_out,
                std::int64_t h, std::int64_t w, const Twiddle& th, const Twiddle& tw) {
    std::vector<double> tre(h * w), tim(h * w);
    // columns of each row: tmp[y,v] = sum_x in[y,x] * k(v,x)
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t v = 0; v < w; ++v) {
            const double* c = &tw.cos_t[v * w];
            const double* s = &tw.sin_t[v * w];
            double ar = 0.0, ai = 0.0;
            const double* rr = re_in + y * w;
            if (im_in) {
                const double* ri = im_in + y * w;
                for (std::int64_t x = 0; x < w; ++x) {
                    ar += rr[x] * c[x] - ri[x] * s[x];
                    ai += rr[x] * s[x] + ri[x] * c[x];
                }
            } else {
                for (std::int64_t x = 0; x < w; ++x) {
                    ar += rr[x] * c[x];
                    ai += rr[x] * s[x];
                }
            }
            tre[y * w + v] = ar;
            tim[y * w + v] = ai;
        }
    }
    // rows: out[u,v] = sum_y tmp[y,v] * k(u,y)
    for (std::int64_t u = 0; u < h; ++u) {
        const double* c = &th.cos_t[u * h];
        const double* s = &th.sin_t[u * h];
        for (std::int64_t v = 0; v < w; ++v) {
            double ar = 0.0, ai = 0.0;
            for (std::int64_t y = 0; y < h; ++y) {
                const double br = tre[y * w + v];
                const double bi = tim[y * w + v];
                ar += br * c[y] - bi * s[y];
                ai += br * s[y] + bi * c[y];
            }
            re_out[u * w + v] = ar;
            im_out[u * w + v] = ai;
        }
    }
}

}  // namespace

ComplexTensor dft2(const Tensor& x) {
    require(x.rank() == 4, "dft2: input must be [B,C,H,W]");
    const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    ComplexTensor out;
    out.shape = x.shape();
    out.re.resize(static_cast<std::size_t>(x.numel()));
    out.im.resize(static_cast<std::size_t>(x.numel()));
    const Twiddle th(h, -1.0), tw(w, -1.0);
    const double* px = x.data();
    for (std::int64_t s = 0; s < b * c; ++s) {
        dft2_slice(px + s * h * w, nullptr, out.re.data() + s * h * w, out.im.data() + s * h * w,
                   h, w, th, tw);
    }
    return out;
}

Tensor idft2(const ComplexTensor& xf, double* imag_residue) {
    if (xf.shape.size() != 4) throw ShapeError("idft2: input must be [B,C,H,W]");
    const std::int64_t b = xf.shape[0], c = xf.shape[1], h = xf.shape[2], w = xf.shape[3];
    const Twiddle th(h, 1.0), tw(w, 1.0);
    const double norm = 1.0 / static_cast<double>(h * w);
    std::vector<double> out(static_cast<std::size_t>(xf.numel()));
    std::vector<double> sre(h * w), sim(h * w);
    double max_imag = 0.0;
    for (std::int64_t s = 0; s < b * c; ++s) {
        dft2_slice(xf.re.data() + s * h * w, xf.im.data() + s * h * w, sre.data(), sim.data(), h,
                   w, th, tw);
        double* o = out.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
            o[i] = sre[i] * norm;
            max_imag = std::max(max_imag, std::abs(sim[i] * norm));
        }
    }
    if (imag_residue) *imag_residue = max_imag;
    std::vector<std::int64_t> shape = xf.shape;
    return Tensor(std::move(shape), std::move(out), false);
}

// ---- gradient checking ----------------------------------------------------------------

double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                       double h) {
    for (const Tensor& p : params)
        if (!p.requires_grad())
            throw StateError("check_gradients: all params must require grad");

    Tensor loss = f();
    if (!std::isfinite(loss.item())) throw NumericError("check_gradients: non-finite loss");
    for (Tensor p : params) p.zero_grad();
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        const double* g = p.grad();
        analytic.emplace_back(g ? std::vector<double>(g, g + p.numel())
                                : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0));
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        double* d = p.data();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double keep = d[i];
            d[i] = keep + h;
            const double fp = f().item();
            d[i] = keep - h;
            const double fm = f().item();
            d[i] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("check_gradients: non-finite perturbed loss");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][static_cast<std::size_t>(i)];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

void assert_finite(const Tensor& t, const char* what) {
    const double* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(d[i]))
            throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace fw
