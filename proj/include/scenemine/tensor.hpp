#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scenemine/common.hpp"

namespace scenemine::ad {

/// Incompatible operand shapes; the message names the operation and both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check_shapes(const char* op, bool ok, const Shape& a, const Shape& b) {
    if (!ok) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
}

// ---------------------------------------------------------------------------
// Grad mode
// ---------------------------------------------------------------------------

inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

/// RAII scope that disables tape recording (inference / finite differences).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

// Distance of the forward pass to the nearest non-smooth point (leaky_relu or
// abs at zero, max_pool ties). Gradient checking resamples inputs that land
// too close to a kink.
inline double& kink_margin() {
    thread_local double margin = std::numeric_limits<double>::infinity();
    return margin;
}

inline void reset_kink_margin() { kink_margin() = std::numeric_limits<double>::infinity(); }

inline void note_kink(double distance) {
    if (distance < kink_margin()) kink_margin() = distance;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

/// Dense f64 tensor participating in reverse-mode differentiation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        auto impl = std::make_shared<TensorImpl>();
        impl->value.assign(shape_numel(shape), 0.0);
        impl->shape = std::move(shape);
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape shape, double v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(shape));
        }
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->value = std::move(values);
        return Tensor(std::move(impl));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->numel(); }

    const std::vector<double>& values() const { return impl_->value; }
    std::vector<double>& values_mut() { return impl_->value; }
    double value_at(std::size_t i) const { return impl_->value[i]; }
    double scalar_value() const { return impl_->value.at(0); }

    const std::vector<double>& grad() const { return impl_->grad; }
    std::vector<double>& grad_mut() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        impl_->requires_grad = b;
        return *this;
    }
    void zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

/// Creates the result node of an op over `parents`, wiring the backward
/// closure only when the tape is active and some parent needs gradients.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<std::shared_ptr<TensorImpl>> parents,
                          std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            impl->requires_grad = true;
            impl->parents = std::move(parents);
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM kernels (row-major)
// ---------------------------------------------------------------------------

/// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C) {
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<std::size_t>(i) * n;
        const double* Ai = A + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = Ai[p];
            if (a == 0.0) continue;
            const double* Bp = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C) {
    for (int i = 0; i < m; ++i) {
        const double* Ai = A + static_cast<std::size_t>(i) * k;
        double* Ci = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* Bj = B + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
            Ci[j] += acc;
        }
    }
}

/// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C) {
    for (int p = 0; p < k; ++p) {
        const double* Ap = A + static_cast<std::size_t>(p) * m;
        const double* Bp = B + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double a = Ap[i];
            if (a == 0.0) continue;
            double* Ci = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_shapes("add", a.shape() == b.shape(), a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto pa = a.impl() , pb = b.impl();
    return detail::make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_shapes("sub", a.shape() == b.shape(), a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto pa = a.impl(), pb = b.impl();
    return detail::make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_shapes("mul", a.shape() == b.shape(), a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto pa = a.impl(), pb = b.impl();
    return detail::make_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

/// y = k*x + c, elementwise with constants.
inline Tensor affine(const Tensor& x, double k, double c) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x.values()[i] + c;
    auto px = x.impl();
    return detail::make_result(x.shape(), std::move(out), {px}, [px, k](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += k * self.grad[i];
    });
}

inline Tensor scale(const Tensor& x, double k) { return affine(x, k, 0.0); }

/// Multiplies a tensor by a one-element tensor (gradient flows to both).
inline Tensor smul(const Tensor& x, const Tensor& s) {
    check_shapes("smul", s.numel() == 1, x.shape(), s.shape());
    const double sv = s.value_at(0);
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * sv;
    auto px = x.impl(), ps = s.impl();
    return detail::make_result(x.shape(), std::move(out), {px, ps}, [px, ps, sv](TensorImpl& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i] * sv;
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px->value[i];
            ps->grad[0] += acc;
        }
    });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.01) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        note_kink(std::abs(v));
        out[i] = v > 0.0 ? v : slope * v;
    }
    auto px = x.impl();
    return detail::make_result(x.shape(), std::move(out), {px}, [px, slope](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            px->grad[i] += self.grad[i] * (px->value[i] > 0.0 ? 1.0 : slope);
        }
    });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
    auto px = x.impl();
    return detail::make_result(x.shape(), std::move(out), {px}, [px](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            px->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor tanh(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
    auto px = x.impl();
    return detail::make_result(x.shape(), std::move(out), {px}, [px](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            px->grad[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

/// Numerically stable softmax over the flattened tensor.
inline Tensor softmax(const Tensor& x) {
    const auto& v = x.values();
    if (v.empty()) throw ShapeError("softmax: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (auto& o : out) o /= denom;
    auto px = x.impl();
    return detail::make_result(x.shape(), std::move(out), {px}, [px](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.value[i];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            px->grad[i] += self.value[i] * (self.grad[i] - dot);
        }
    });
}

/// x / ||x||. Inputs with norm below epsilon pass through unchanged.
inline Tensor l2_normalize(const Tensor& x, double epsilon = 1e-12) {
    double r2 = 0.0;
    for (double v : x.values()) r2 += v * v;
    const double r = std::sqrt(r2);
    auto px = x.impl();
    if (r < epsilon) {
        // Degenerate branch: identity.
        std::vector<double> out = x.values();
        return detail::make_result(x.shape(), std::move(out), {px}, [px](TensorImpl& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        });
    }
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] / r;
    return detail::make_result(x.shape(), std::move(out), {px}, [px, r](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.value[i];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            px->grad[i] += (self.grad[i] - self.value[i] * dot) / r;
        }
    });
}

/// Sum of absolute values, reduced to a one-element tensor.
inline Tensor abs_sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) {
        note_kink(std::abs(v));
        acc += std::abs(v);
    }
    auto px = x.impl();
    return detail::make_result({1}, {acc}, {px}, [px](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < px->value.size(); ++i) {
            const double v = px->value[i];
            px->grad[i] += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    check_shapes("reshape", shape_numel(shape) == x.numel(), x.shape(), shape);
    auto px = x.impl();
    std::vector<double> out = x.values();
    return detail::make_result(std::move(shape), std::move(out), {px}, [px](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    });
}

/// Concatenation along `axis`.
inline Tensor concat(const Tensor& a, const Tensor& b, int axis = 0) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    check_shapes("concat", sa.size() == sb.size() && axis >= 0 && axis < static_cast<int>(sa.size()), sa, sb);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (static_cast<int>(i) != axis) check_shapes("concat", sa[i] == sb[i], sa, sb);
    }
    Shape so = sa;
    so[axis] += sb[axis];
    // outer = product of dims before axis, inner = product after.
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(sa[i]);
    for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= static_cast<std::size_t>(sa[i]);
    const std::size_t wa = static_cast<std::size_t>(sa[axis]) * inner;
    const std::size_t wb = static_cast<std::size_t>(sb[axis]) * inner;
    std::vector<double> out(shape_numel(so));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.values().begin() + o * wa, wa, out.begin() + o * (wa + wb));
        std::copy_n(b.values().begin() + o * wb, wb, out.begin() + o * (wa + wb) + wa);
    }
    auto pa = a.impl(), pb = b.impl();
    return detail::make_result(std::move(so), std::move(out), {pa, pb}, [pa, pb, outer, wa, wb](TensorImpl& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < wa; ++i) pa->grad[o * wa + i] += self.grad[o * (wa + wb) + i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < wb; ++i) pb->grad[o * wb + i] += self.grad[o * (wa + wb) + wa + i];
        }
    });
}

/// Slice of length `len` starting at `start` along `axis`.
inline Tensor slice(const Tensor& x, int axis, int start, int len) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 || start + len > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(s));
    }
    Shape so = s;
    so[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t wx = static_cast<std::size_t>(s[axis]) * inner;
    const std::size_t wo = static_cast<std::size_t>(len) * inner;
    const std::size_t off = static_cast<std::size_t>(start) * inner;
    std::vector<double> out(shape_numel(so));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.values().begin() + o * wx + off, wo, out.begin() + o * wo);
    }
    auto px = x.impl();
    return detail::make_result(std::move(so), std::move(out), {px}, [px, outer, wx, wo, off](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < wo; ++i) px->grad[o * wx + off + i] += self.grad[o * wo + i];
    });
}

/// Mean over one axis.
inline Tensor mean_over_axis(const Tensor& x, int axis) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    Shape so;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) so.push_back(s[i]);
    if (so.empty()) so = {1};
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t n = static_cast<std::size_t>(s[axis]);
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x.values()[(o * n + a) * inner + i];
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= inv;
    auto px = x.impl();
    return detail::make_result(std::move(so), std::move(out), {px}, [px, outer, inner, n, inv](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t i = 0; i < inner; ++i)
                    px->grad[(o * n + a) * inner + i] += self.grad[o * inner + i] * inv;
    });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

/// [m,k]x[k,n] -> [m,n]; the right operand may be a rank-1 [k] -> [m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    check_shapes("matmul", sa.size() == 2 && (sb.size() == 1 || sb.size() == 2), sa, sb);
    const int m = sa[0], k = sa[1];
    const bool vec = sb.size() == 1;
    const int n = vec ? 1 : sb[1];
    check_shapes("matmul", sb[0] == k, sa, sb);
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
    Shape so = vec ? Shape{m} : Shape{m, n};
    auto pa = a.impl(), pb = b.impl();
    return detail::make_result(std::move(so), std::move(out), {pa, pb}, [pa, pb, m, n, k](TensorImpl& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA += dC * B^T
            gemm_nt(m, k, n, self.grad.data(), pb->value.data(), pa->grad.data());
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB += A^T * dC
            gemm_tn(k, n, m, pa->value.data(), self.grad.data(), pb->grad.data());
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution / pooling ([C,H,W] layout)
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* img, int c_in, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
                   double* col) {
    // col is [c_in*kh*kw, ho*wo]
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(row + static_cast<std::size_t>(oy) * wo, wo, 0.0);
                        continue;
                    }
                    const double* src = img + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[static_cast<std::size_t>(oy) * wo + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

inline void col2im_add(const double* col, int c_in, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
                       double* img) {
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = img + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += row[static_cast<std::size_t>(oy) * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D convolution: x [Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1, int padding = 0) {
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    check_shapes("conv2d", sx.size() == 3 && sw.size() == 4 && sw[1] == sx[0], sx, sw);
    check_shapes("conv2d", bias.shape() == Shape{sw[0]}, bias.shape(), Shape{sw[0]});
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int c_in = sx[0], h = sx[1], w = sx[2];
    const int c_out = sw[0], kh = sw[2], kw = sw[3];
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    check_shapes("conv2d", ho >= 1 && wo >= 1, sx, sw);
    const int kk = c_in * kh * kw;
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;

    std::vector<double> col(static_cast<std::size_t>(kk) * cols);
    detail::im2col(x.values().data(), c_in, h, w, kh, kw, stride, padding, ho, wo, col.data());

    std::vector<double> out(static_cast<std::size_t>(c_out) * cols);
    for (int co = 0; co < c_out; ++co) std::fill_n(out.begin() + static_cast<std::size_t>(co) * cols, cols, bias.value_at(co));
    gemm_nn(c_out, static_cast<int>(cols), kk, weight.values().data(), col.data(), out.data());

    auto px = x.impl(), pw = weight.impl(), pb = bias.impl();
    return detail::make_result({c_out, ho, wo}, std::move(out), {px, pw, pb},
                               [px, pw, pb, c_in, h, w, kh, kw, stride, padding, ho, wo, c_out, kk](TensorImpl& self) {
        const std::size_t cols = static_cast<std::size_t>(ho) * wo;
        // col is recomputed here instead of being stored on the tape.
        std::vector<double> col(static_cast<std::size_t>(kk) * cols);
        detail::im2col(px->value.data(), c_in, h, w, kh, kw, stride, padding, ho, wo, col.data());
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int co = 0; co < c_out; ++co) {
                double acc = 0.0;
                const double* g = self.grad.data() + static_cast<std::size_t>(co) * cols;
                for (std::size_t i = 0; i < cols; ++i) acc += g[i];
                pb->grad[co] += acc;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            // dW[c_out,kk] += dOut[c_out,cols] * col[kk,cols]^T
            gemm_nt(c_out, kk, static_cast<int>(cols), self.grad.data(), col.data(), pw->grad.data());
        }
        if (px->requires_grad) {
            px->ensure_grad();
            std::vector<double> dcol(static_cast<std::size_t>(kk) * cols, 0.0);
            // dcol[kk,cols] += W[c_out,kk]^T * dOut[c_out,cols]
            gemm_tn(kk, static_cast<int>(cols), c_out, pw->value.data(), self.grad.data(), dcol.data());
            detail::col2im_add(dcol.data(), c_in, h, w, kh, kw, stride, padding, ho, wo, px->grad.data());
        }
    });
}

/// Max pooling over kxk windows with the given stride, [C,H,W].
inline Tensor max_pool2d(const Tensor& x, int k, int stride) {
    const Shape& s = x.shape();
    check_shapes("max_pool2d", s.size() == 3 && k >= 1 && stride >= 1, s, Shape{k, stride});
    const int c = s[0], h = s[1], w = s[2];
    const int ho = (h - k) / stride + 1;
    const int wo = (w - k) / stride + 1;
    check_shapes("max_pool2d", ho >= 1 && wo >= 1, s, Shape{k, stride});
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    std::vector<int> arg(out.size());
    for (int ch = 0; ch < c; ++ch) {
        const double* img = x.values().data() + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                double second = best;
                int best_i = 0;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const int iy = oy * stride + ky, ix = ox * stride + kx;
                        const double v = img[static_cast<std::size_t>(iy) * w + ix];
                        if (v > best) {
                            second = best;
                            best = v;
                            best_i = iy * w + ix;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                }
                if (k > 1) note_kink(best - second);
                const std::size_t o = (static_cast<std::size_t>(ch) * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    auto px = x.impl();
    return detail::make_result({c, ho, wo}, std::move(out), {px},
                               [px, arg = std::move(arg), c, h, w, ho, wo](TensorImpl& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
        for (int ch = 0; ch < c; ++ch) {
            double* g = px->grad.data() + static_cast<std::size_t>(ch) * h * w;
            for (std::size_t i = 0; i < plane_out; ++i) {
                g[arg[ch * plane_out + i]] += self.grad[ch * plane_out + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a one-element output; accumulates into the grads of
/// every reachable tensor that requires gradients.
inline void backward(const Tensor& output, double seed = 1.0) {
    if (output.numel() != 1) {
        throw ShapeError("backward: output must be scalar, got " + shape_str(output.shape()));
    }
    // Iterative post-order topological sort over the parent DAG.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(output.impl().get(), 0);
    visited.insert(output.impl().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    output.impl()->ensure_grad();
    output.impl()->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace scenemine::ad
