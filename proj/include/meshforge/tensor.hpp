#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "core.hpp"

namespace meshforge::ad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << '(';
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << ')';
    return o.str();
}

inline std::size_t shape_count(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

namespace detail {
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class BasicTensor {
public:
    using NodePtr = std::shared_ptr<Node<T>>;

    BasicTensor() = default;
    explicit BasicTensor(NodePtr n) : n_(std::move(n)) {}

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value.assign(shape_count(shape), T(0));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return BasicTensor(std::move(n));
    }
    static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (values.size() != shape_count(shape))
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return BasicTensor(std::move(n));
    }
    static BasicTensor scalar(T v) { return from({}, {v}); }

    /// Result of an operation over `parents`; records the backward rule
    /// only when some parent needs a gradient and recording is enabled.
    static BasicTensor make(Shape shape, std::vector<T> value, std::vector<BasicTensor> parents,
                            std::function<void(Node<T>&)> backward) {
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        if (detail::grad_enabled()) {
            bool any = false;
            for (const auto& p : parents) any = any || p.requires_grad();
            if (any) {
                n->requires_grad = true;
                for (auto& p : parents) n->parents.push_back(p.n_);
                n->backward = std::move(backward);
            }
        }
        return BasicTensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i < 0 ? i + static_cast<int>(n_->shape.size()) : i)]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    std::size_t size() const { return n_->value.size(); }
    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    std::vector<T>& grad() { return n_->ensure_grad(); }
    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    T item() const {
        if (size() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
        return n_->value[0];
    }
    Node<T>* node() const { return n_.get(); }
    const NodePtr& node_ptr() const { return n_; }

    void zero_grad() { n_->grad.clear(); }

    /// Same values, no history.
    BasicTensor detach() const { return from(shape(), data()); }

    /// Reverse-mode sweep from a scalar: each reachable node's rule runs once,
    /// after every consumer of its output.
    void backward() {
        if (size() != 1) throw ShapeError("backward: needs a scalar, got " + shape_str(shape()));
        if (!requires_grad()) return;
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack{{n_.get(), 0}};
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<T>* p = node->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->ensure_grad()[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* node = *it;
            if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
        }
    }

private:
    NodePtr n_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace detail {
template <typename T>
std::vector<T>& g(Node<T>& parent) {
    return parent.ensure_grad();
}
template <typename T>
bool wants(const Node<T>& parent) {
    return parent.requires_grad;
}
/// b's shape must equal a trailing part of a's shape.
inline std::size_t suffix_repeat(const char* op, const Shape& a, const Shape& b) {
    if (b.size() > a.size()) shape_fail(op, a, b);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) shape_fail(op, a, b);
    return shape_count(a) / std::max<std::size_t>(1, shape_count(b));
}
inline int norm_axis(int axis, std::size_t nd) {
    const int n = static_cast<int>(nd);
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis " + std::to_string(axis) + " out of range");
    return axis;
}
/// (outer, extent, inner) split of a shape around one axis.
inline std::array<std::size_t, 3> around(const Shape& s, int axis) {
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    return {outer, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), inner};
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may broadcast over leading
// dimensions of the first.

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t rep = detail::suffix_repeat("add", a.shape(), b.shape());
    const std::size_t nb = b.size();
    std::vector<T> out(a.data());
    for (std::size_t r = 0; r < rep; ++r)
        for (std::size_t i = 0; i < nb; ++i) out[r * nb + i] += b.data()[i];
    return BasicTensor<T>::make(a.shape(), std::move(out), {a, b}, [rep, nb](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = detail::g(pa);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& gb = detail::g(pb);
            for (std::size_t r = 0; r < rep; ++r)
                for (std::size_t i = 0; i < nb; ++i) gb[i] += self.grad[r * nb + i];
        }
    });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t rep = detail::suffix_repeat("sub", a.shape(), b.shape());
    const std::size_t nb = b.size();
    std::vector<T> out(a.data());
    for (std::size_t r = 0; r < rep; ++r)
        for (std::size_t i = 0; i < nb; ++i) out[r * nb + i] -= b.data()[i];
    return BasicTensor<T>::make(a.shape(), std::move(out), {a, b}, [rep, nb](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = detail::g(pa);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& gb = detail::g(pb);
            for (std::size_t r = 0; r < rep; ++r)
                for (std::size_t i = 0; i < nb; ++i) gb[i] -= self.grad[r * nb + i];
        }
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t rep = detail::suffix_repeat("mul", a.shape(), b.shape());
    const std::size_t nb = b.size();
    std::vector<T> out(a.data());
    for (std::size_t r = 0; r < rep; ++r)
        for (std::size_t i = 0; i < nb; ++i) out[r * nb + i] *= b.data()[i];
    return BasicTensor<T>::make(a.shape(), std::move(out), {a, b}, [rep, nb](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = detail::g(pa);
            for (std::size_t r = 0; r < rep; ++r)
                for (std::size_t i = 0; i < nb; ++i) ga[r * nb + i] += self.grad[r * nb + i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& gb = detail::g(pb);
            for (std::size_t r = 0; r < rep; ++r)
                for (std::size_t i = 0; i < nb; ++i) gb[i] += self.grad[r * nb + i] * pa.value[r * nb + i];
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
    std::vector<T> out(a.data());
    for (auto& v : out) v *= s;
    return BasicTensor<T>::make(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
    std::vector<T> out(a.data());
    for (auto& v : out) v += s;
    return BasicTensor<T>::make(a.shape(), std::move(out), {a}, [](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
    std::vector<T> out(a.data());
    for (auto& v : out) v *= v;
    return BasicTensor<T>::make(a.shape(), std::move(out), {a}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        auto& ga = detail::g(pa);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * pa.value[i] * self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Unary maps

template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& a, F f, D dfdx_from_x_y) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
    return BasicTensor<T>::make(a.shape(), std::move(out), {a}, [dfdx_from_x_y](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        auto& ga = detail::g(pa);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * dfdx_from_x_y(pa.value[i], self.value[i]);
    });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
    for (T v : a.data())
        if (!(v > 0)) throw DomainError("log: non-positive input");
    return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <typename T>
T sigmoid_value(T x) {
    return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    return unary(a, [](T x) { return sigmoid_value(x); }, [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}
/// Exact (erf) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return unary(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) { return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x); });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (shape_count(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    return BasicTensor<T>::make(std::move(shape), a.data(), {a}, [](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

/// Transpose of a matrix.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects a matrix, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<T> out(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
    return BasicTensor<T>::make({n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
    });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    axis = detail::norm_axis(axis, s0.size());
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) shape_fail("concat", s0, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != s0[i]) shape_fail("concat", s0, s);
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }
    const auto [outer, total, inner] = detail::around(out_shape, axis);
    std::vector<T> out(shape_count(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = static_cast<std::size_t>(p.shape()[static_cast<std::size_t>(axis)]);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * ext * inner), ext * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
        off += ext;
    }
    return BasicTensor<T>::make(std::move(out_shape), std::move(out), parts,
                                [offsets, outer = outer, total = total, inner = inner, axis](Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node<T>& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto& gp = detail::g(p);
            const std::size_t ext = static_cast<std::size_t>(p.shape[static_cast<std::size_t>(axis)]);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < ext * inner; ++i)
                    gp[o * ext * inner + i] += self.grad[(o * total + offsets[k]) * inner + i];
        }
    });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, int axis, int start, int length) {
    axis = detail::norm_axis(axis, a.shape().size());
    const int ext = a.shape()[static_cast<std::size_t>(axis)];
    if (start < 0 || length < 0 || start + length > ext)
        throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    const auto [outer, total, inner] = detail::around(a.shape(), axis);
    const std::size_t len = static_cast<std::size_t>(length), st = static_cast<std::size_t>(start);
    std::vector<T> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>((o * total + st) * inner), len * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    return BasicTensor<T>::make(std::move(out_shape), std::move(out), {a},
                                [outer = outer, total = total, inner = inner, len, st](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i) ga[(o * total + st) * inner + i] += self.grad[o * len * inner + i];
    });
}

/// Rows of a matrix selected by index (rows may repeat).
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& a, std::vector<std::uint32_t> rows) {
    if (a.ndim() != 2) throw ShapeError("gather_rows: expects a matrix, got " + shape_str(a.shape()));
    const std::size_t n = static_cast<std::size_t>(a.dim(1));
    std::vector<T> out(rows.size() * n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= static_cast<std::uint32_t>(a.dim(0))) throw ShapeError("gather_rows: index out of range");
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                    out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    const int count = static_cast<int>(rows.size());
    return BasicTensor<T>::make({count, static_cast<int>(n)}, std::move(out), {a}, [rows = std::move(rows), n](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < n; ++c) ga[rows[r] * n + c] += self.grad[r * n + c];
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v;
    return BasicTensor<T>::make({}, {s}, {a}, [](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (auto& v : ga) v += self.grad[0];
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Sum over one axis, which is removed from the shape.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a, int axis) {
    axis = detail::norm_axis(axis, a.shape().size());
    const auto [outer, ext, inner] = detail::around(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    std::vector<T> out(outer * inner, T(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < ext; ++e)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += a.data()[(o * ext + e) * inner + i];
    return BasicTensor<T>::make(std::move(out_shape), std::move(out), {a},
                                [outer = outer, ext = ext, inner = inner](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
                for (std::size_t i = 0; i < inner; ++i) ga[(o * ext + e) * inner + i] += self.grad[o * inner + i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}
// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}
// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}
}  // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const std::size_t m = static_cast<std::size_t>(a.dim(0)), k = static_cast<std::size_t>(a.dim(1)),
                      n = static_cast<std::size_t>(b.dim(1));
    std::vector<T> out(m * n, T(0));
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return BasicTensor<T>::make({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) detail::gemm_nt(self.grad.data(), pb.value.data(), detail::g(pa).data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn(pa.value.data(), self.grad.data(), detail::g(pb).data(), m, k, n);
    });
}

/// a[m,k] * b[n,k]^T without materialising the transpose.
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) shape_fail("matmul_nt", a.shape(), b.shape());
    const std::size_t m = static_cast<std::size_t>(a.dim(0)), k = static_cast<std::size_t>(a.dim(1)),
                      n = static_cast<std::size_t>(b.dim(0));
    std::vector<T> out(m * n, T(0));
    detail::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return BasicTensor<T>::make({a.dim(0), b.dim(0)}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        // dA = G B, dB = G^T A
        if (pa.requires_grad) detail::gemm_nn(self.grad.data(), pb.value.data(), detail::g(pa).data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn(self.grad.data(), pa.value.data(), detail::g(pb).data(), m, n, k);
    });
}

// ---------------------------------------------------------------------------
// Normalisation

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, int axis = -1) {
    axis = detail::norm_axis(axis, a.shape().size());
    const auto [outer, ext, inner] = detail::around(a.shape(), axis);
    std::vector<T> out(a.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * ext * inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t e = 0; e < ext; ++e) mx = std::max(mx, a.data()[base + e * inner]);
            T s = 0;
            for (std::size_t e = 0; e < ext; ++e) {
                const T v = std::exp(a.data()[base + e * inner] - mx);
                out[base + e * inner] = v;
                s += v;
            }
            for (std::size_t e = 0; e < ext; ++e) out[base + e * inner] /= s;
        }
    return BasicTensor<T>::make(a.shape(), std::move(out), {a}, [outer = outer, ext = ext, inner = inner](Node<T>& self) {
        auto& ga = detail::g(*self.parents[0]);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * ext * inner + i;
                T dot = 0;
                for (std::size_t e = 0; e < ext; ++e) dot += self.grad[base + e * inner] * self.value[base + e * inner];
                for (std::size_t e = 0; e < ext; ++e) {
                    const std::size_t idx = base + e * inner;
                    ga[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

/// Layer normalisation over the last axis with affine gamma/beta.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-5)) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: needs at least one axis");
    const std::size_t d = static_cast<std::size_t>(x.dim(-1));
    if (gamma.size() != d || beta.size() != d) shape_fail("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
    std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * d;
        T mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (xr[i] - mu) * rs;
            out[r * d + i] = xhat[r * d + i] * gamma.data()[i] + beta.data()[i];
        }
    }
    return BasicTensor<T>::make(x.shape(), std::move(out), {x, gamma, beta},
                                [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        if (pg.requires_grad) {
            auto& gg = detail::g(pg);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < d; ++i) gg[i] += self.grad[r * d + i] * xhat[r * d + i];
        }
        if (pb.requires_grad) {
            auto& gb = detail::g(pb);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < d; ++i) gb[i] += self.grad[r * d + i];
        }
        if (px.requires_grad) {
            auto& gx = detail::g(px);
            for (std::size_t r = 0; r < rows; ++r) {
                T m1 = 0, m2 = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    const T dy = self.grad[r * d + i] * pg.value[i];
                    m1 += dy;
                    m2 += dy * xhat[r * d + i];
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    const T dy = self.grad[r * d + i] * pg.value[i];
                    gx[r * d + i] += rstd[r] * (dy - m1 - xhat[r * d + i] * m2);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Image ops on (C, H, W) tensors

/// 3x3 convolution, stride 1, zero padding 1. x: (C,H,W), w: (O,C,3,3), b: (O).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    if (x.ndim() != 3 || w.ndim() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != 3 || w.dim(3) != 3)
        shape_fail("conv2d", x.shape(), w.shape());
    if (b.ndim() != 1 || b.dim(0) != w.dim(0)) shape_fail("conv2d", w.shape(), b.shape());
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2), O = w.dim(0);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    // im2col: (C*9, H*W)
    auto im2col = [=](const std::vector<T>& src) {
        std::vector<T> cols(static_cast<std::size_t>(C) * 9 * hw, T(0));
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    T* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= H) continue;
                        for (int xx = 0; xx < W; ++xx) {
                            const int sx = xx + kx - 1;
                            if (sx < 0 || sx >= W) continue;
                            row[static_cast<std::size_t>(y) * W + xx] = src[(static_cast<std::size_t>(c) * H + sy) * W + sx];
                        }
                    }
                }
        return cols;
    };
    std::vector<T> cols = im2col(x.data());
    std::vector<T> out(static_cast<std::size_t>(O) * hw);
    for (int o = 0; o < O; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * hw), hw, b.data()[static_cast<std::size_t>(o)]);
    const std::size_t K = static_cast<std::size_t>(C) * 9;
    detail::gemm_nn(w.data().data(), cols.data(), out.data(), static_cast<std::size_t>(O), K, hw);
    return BasicTensor<T>::make({O, H, W}, std::move(out), {x, w, b},
                                [C, H, W, O, hw, K, cols = std::move(cols)](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        if (pb.requires_grad) {
            auto& gb = detail::g(pb);
            for (int o = 0; o < O; ++o)
                for (std::size_t i = 0; i < hw; ++i) gb[static_cast<std::size_t>(o)] += self.grad[o * hw + i];
        }
        if (pw.requires_grad)
            detail::gemm_nt(self.grad.data(), cols.data(), detail::g(pw).data(), static_cast<std::size_t>(O), hw, K);
        if (px.requires_grad) {
            std::vector<T> gcols(K * hw, T(0));
            detail::gemm_tn(pw.value.data(), self.grad.data(), gcols.data(), static_cast<std::size_t>(O), K, hw);
            auto& gx = detail::g(px);
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T* row = gcols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= H) continue;
                            for (int xx = 0; xx < W; ++xx) {
                                const int sx = xx + kx - 1;
                                if (sx < 0 || sx >= W) continue;
                                gx[(static_cast<std::size_t>(c) * H + sy) * W + sx] += row[static_cast<std::size_t>(y) * W + xx];
                            }
                        }
                    }
        }
    });
}

/// Nearest-neighbour x2 upsampling of a (C,H,W) tensor.
template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x) {
    if (x.ndim() != 3) throw ShapeError("upsample_nearest: expects (C,H,W), got " + shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int H2 = 2 * H, W2 = 2 * W;
    std::vector<T> out(static_cast<std::size_t>(C) * H2 * W2);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H2; ++y)
            for (int xx = 0; xx < W2; ++xx)
                out[(static_cast<std::size_t>(c) * H2 + y) * W2 + xx] = x.data()[(static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2];
    return BasicTensor<T>::make({C, H2, W2}, std::move(out), {x}, [C, H, W, H2, W2](Node<T>& self) {
        auto& gx = detail::g(*self.parents[0]);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H2; ++y)
                for (int xx = 0; xx < W2; ++xx)
                    gx[(static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2] += self.grad[(static_cast<std::size_t>(c) * H2 + y) * W2 + xx];
    });
}

/// Bilinear lookup of a (C,H,W) feature plane at N points given in [-1,1]^2
/// (u along W, v along H, grid corners at +-1). Returns (N, C). Gradients
/// flow to the plane only.
template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& plane, std::span<const double> uv) {
    if (plane.ndim() != 3) throw ShapeError("bilinear_sample: expects (C,H,W), got " + shape_str(plane.shape()));
    if (uv.size() % 2) throw ShapeError("bilinear_sample: coordinates must come in pairs");
    const int C = plane.dim(0), H = plane.dim(1), W = plane.dim(2);
    const std::size_t n = uv.size() / 2;
    struct Tap {
        std::uint32_t idx[4];
        T w[4];
    };
    std::vector<Tap> taps(n);
    for (std::size_t p = 0; p < n; ++p) {
        const double u = uv[2 * p], v = uv[2 * p + 1];
        if (!(u >= -1 && u <= 1 && v >= -1 && v <= 1)) throw DomainError("bilinear_sample: coordinate outside [-1,1]");
        const double fx = (u + 1) * 0.5 * (W - 1), fy = (v + 1) * 0.5 * (H - 1);
        const int x0 = std::min(static_cast<int>(fx), std::max(W - 2, 0)), y0 = std::min(static_cast<int>(fy), std::max(H - 2, 0));
        const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        const T ax = static_cast<T>(fx - x0), ay = static_cast<T>(fy - y0);
        Tap& t = taps[p];
        t.idx[0] = static_cast<std::uint32_t>(y0 * W + x0);
        t.idx[1] = static_cast<std::uint32_t>(y0 * W + x1);
        t.idx[2] = static_cast<std::uint32_t>(y1 * W + x0);
        t.idx[3] = static_cast<std::uint32_t>(y1 * W + x1);
        t.w[0] = (1 - ax) * (1 - ay);
        t.w[1] = ax * (1 - ay);
        t.w[2] = (1 - ax) * ay;
        t.w[3] = ax * ay;
    }
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<T> out(n * static_cast<std::size_t>(C), T(0));
    const T* src = plane.data().data();
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < C; ++c) {
            const T* pc = src + static_cast<std::size_t>(c) * hw;
            const Tap& t = taps[p];
            out[p * C + c] = t.w[0] * pc[t.idx[0]] + t.w[1] * pc[t.idx[1]] + t.w[2] * pc[t.idx[2]] + t.w[3] * pc[t.idx[3]];
        }
    return BasicTensor<T>::make({static_cast<int>(n), C}, std::move(out), {plane},
                                [C, hw, n, taps = std::move(taps)](Node<T>& self) {
        auto& gp = detail::g(*self.parents[0]);
        for (std::size_t p = 0; p < n; ++p)
            for (int c = 0; c < C; ++c) {
                const T gv = self.grad[p * C + c];
                T* pc = gp.data() + static_cast<std::size_t>(c) * hw;
                const Tap& t = taps[p];
                for (int q = 0; q < 4; ++q) pc[t.idx[q]] += t.w[q] * gv;
            }
    });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy of sigmoid(logits) against fixed targets in [0,1].
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, std::span<const T> targets) {
    if (targets.size() != logits.size())
        throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) + " targets for " + shape_str(logits.shape()));
    if (logits.size() == 0) throw ShapeError("bce_with_logits: empty input");
    T total = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const T x = logits.data()[i];
        total += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    const T inv = T(1) / static_cast<T>(targets.size());
    std::vector<T> tg(targets.begin(), targets.end());
    return BasicTensor<T>::make({}, {total * inv}, {logits}, [inv, tg = std::move(tg)](Node<T>& self) {
        Node<T>& pl = *self.parents[0];
        auto& gl = detail::g(pl);
        for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += self.grad[0] * inv * (sigmoid_value(pl.value[i]) - tg[i]);
    });
}

/// Mean of the elementwise squared difference.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return mean(square(sub(a, b)));
}

}  // namespace meshforge::ad
