#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"
#include "watertight.hpp"

namespace meshforge::ad {

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParamStore {
public:
    /// Registers `t` as trainable and returns a handle sharing its storage.
    BasicTensor<T> add(const std::string& name, BasicTensor<T> t) {
        if (index_.count(name)) throw ShapeError("parameter registered twice: " + name);
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t)});
        return entries_.back().second;
    }
    BasicTensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
        return entries_[it->second].second;
    }
    const BasicTensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
        return entries_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    std::vector<std::pair<std::string, BasicTensor<T>>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const { return entries_; }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.size();
        return n;
    }
    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

    /// Deep copy with the element type converted.
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, t] : entries_) {
            std::vector<U> v(t.data().begin(), t.data().end());
            out.add(name, BasicTensor<U>::from(t.shape(), std::move(v)));
        }
        return out;
    }
    ParamStore clone() const { return cast<T>(); }

private:
    std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Uniform Glorot initialisation.
template <typename T>
BasicTensor<T> glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<T> v(shape_count(shape));
    for (auto& x : v) x = static_cast<T>((2 * uniform01(rng) - 1) * a);
    return BasicTensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
    ps.add(name + ".w", glorot<T>({in, out}, in, out, rng));
    ps.add(name + ".b", BasicTensor<T>::zeros({out}));
}

template <typename T>
BasicTensor<T> linear(const ParamStore<T>& ps, const std::string& name, const BasicTensor<T>& x) {
    return add(matmul(x, ps.get(name + ".w")), ps.get(name + ".b"));
}

template <typename T>
void add_layer_norm(ParamStore<T>& ps, const std::string& name, int dim) {
    ps.add(name + ".g", BasicTensor<T>::from({dim}, std::vector<T>(static_cast<std::size_t>(dim), T(1))));
    ps.add(name + ".b", BasicTensor<T>::zeros({dim}));
}

template <typename T>
BasicTensor<T> layer_norm(const ParamStore<T>& ps, const std::string& name, const BasicTensor<T>& x) {
    return layer_norm(x, ps.get(name + ".g"), ps.get(name + ".b"));
}

/// Multi-head scaled dot-product attention on already projected
/// q (Nq, D), k (Nk, D), v (Nk, D): per head softmax(q k^T / sqrt(d_h)) v,
/// heads concatenated along features.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v, int heads) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) shape_fail("attention", q.shape(), k.shape());
    if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) shape_fail("attention", q.shape(), k.shape());
    if (heads < 1 || q.dim(1) % heads || v.dim(1) % heads)
        throw ShapeError("attention: feature dim " + std::to_string(q.dim(1)) + " not divisible by " +
                         std::to_string(heads) + " heads");
    const int dh = q.dim(1) / heads, dv = v.dim(1) / heads;
    const T s = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<BasicTensor<T>> outs;
    for (int h = 0; h < heads; ++h) {
        const auto qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
        const auto kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
        const auto vh = heads == 1 ? v : slice(v, 1, h * dv, dv);
        outs.push_back(matmul(softmax(scale(matmul_nt(qh, kh), s), -1), vh));
    }
    return heads == 1 ? outs[0] : concat(outs, 1);
}

/// Attention block parameters: input projections and output projection.
template <typename T>
void add_attention(ParamStore<T>& ps, const std::string& name, int q_dim, int kv_dim, int width, Rng& rng) {
    add_linear(ps, name + ".q", q_dim, width, rng);
    add_linear(ps, name + ".k", kv_dim, width, rng);
    add_linear(ps, name + ".v", kv_dim, width, rng);
    add_linear(ps, name + ".o", width, q_dim, rng);
}

template <typename T>
BasicTensor<T> attention(const ParamStore<T>& ps, const std::string& name, const BasicTensor<T>& xq,
                         const BasicTensor<T>& xkv, int heads) {
    const auto q = linear(ps, name + ".q", xq);
    const auto k = linear(ps, name + ".k", xkv);
    const auto v = linear(ps, name + ".v", xkv);
    return linear(ps, name + ".o", attention(q, k, v, heads));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0;  // 0 disables global-norm clipping
};

template <typename T>
struct AdamMoments {
    std::vector<T> m, v;
};

/// One Adam update of a single parameter buffer at step t (1-based).
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& st, long t, const AdamConfig& cfg,
               double grad_scale = 1.0) {
    if (grad.size() != param.size()) throw ShapeError("adam_step: gradient size does not match parameter");
    if (st.m.size() != param.size()) {
        st.m.assign(param.size(), T(0));
        st.v.assign(param.size(), T(0));
    }
    const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad[i]) * grad_scale;
        const double m = cfg.beta1 * st.m[i] + (1 - cfg.beta1) * g;
        const double v = cfg.beta2 * st.v[i] + (1 - cfg.beta2) * g * g;
        st.m[i] = static_cast<T>(m);
        st.v[i] = static_cast<T>(v);
        param[i] -= static_cast<T>(cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
    }
}

template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long steps() const { return t_; }

    /// Applies one update to every parameter with a gradient. Throws
    /// NonFiniteGradient, leaving parameters untouched, if any gradient is
    /// not finite.
    void step(ParamStore<T>& ps) {
        double sq = 0;
        for (auto& [name, p] : ps.entries()) {
            if (!p.has_grad()) continue;
            for (T g : p.grad()) {
                if (!std::isfinite(static_cast<double>(g))) throw NonFiniteGradient("non-finite gradient in " + name);
                sq += static_cast<double>(g) * g;
            }
        }
        double gs = 1.0;
        if (cfg_.clip_norm > 0 && std::sqrt(sq) > cfg_.clip_norm) gs = cfg_.clip_norm / std::sqrt(sq);
        ++t_;
        for (auto& [name, p] : ps.entries()) {
            if (!p.has_grad()) continue;
            adam_step<T>(p.data(), p.grad(), moments_[name], t_, cfg_, gs);
        }
    }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, AdamMoments<T>> moments_;
};

// ---------------------------------------------------------------------------
// Checkpoint archive "MGCK", version 1. See docs/formats.md.

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, BasicTensor<float>>> tensors;

    std::string meta_value(const std::string& key, const std::string& fallback = "") const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        return fallback;
    }
};

namespace detail {
inline void put_str(std::ostream& out, const std::string& s) {
    io_detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& in) {
    const std::uint32_t n = io_detail::get_u32(in);
    if (n > (1u << 20)) throw FormatError("MGCK: implausible string length");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw FormatError("MGCK: truncated string");
    return s;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out.write("MGCK", 4);
    io_detail::put_u32(out, 1);
    io_detail::put_u32(out, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }
    io_detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        detail::put_str(out, name);
        io_detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (int d : t.shape()) io_detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.data()) io_detail::put_f32(out, v);
    }
}

inline Checkpoint read_checkpoint(std::istream& in) {
    io_detail::expect_magic(in, "MGCK");
    if (io_detail::get_u32(in) != 1) throw FormatError("MGCK: unsupported version");
    Checkpoint ck;
    const std::uint32_t nm = io_detail::get_u32(in);
    for (std::uint32_t i = 0; i < nm; ++i) {
        std::string k = detail::get_str(in);
        ck.meta.emplace_back(std::move(k), detail::get_str(in));
    }
    const std::uint32_t nt = io_detail::get_u32(in);
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = detail::get_str(in);
        const std::uint32_t nd = io_detail::get_u32(in);
        if (nd > 8) throw FormatError("MGCK: too many dimensions in " + name);
        Shape shape;
        for (std::uint32_t d = 0; d < nd; ++d) shape.push_back(static_cast<int>(io_detail::get_u32(in)));
        const std::size_t count = shape_count(shape);
        if (count > (1u << 28)) throw FormatError("MGCK: implausible tensor size in " + name);
        std::vector<float> v(count);
        for (auto& x : v) {
            x = io_detail::get_f32(in);
            if (!std::isfinite(x)) throw FormatError("MGCK: non-finite value in " + name);
        }
        ck.tensors.emplace_back(std::move(name), BasicTensor<float>::from(std::move(shape), std::move(v)));
    }
    return ck;
}

template <typename T>
Checkpoint to_checkpoint(const ParamStore<T>& ps, std::vector<std::pair<std::string, std::string>> meta = {}) {
    Checkpoint ck;
    ck.meta = std::move(meta);
    for (const auto& [name, t] : ps.entries()) {
        std::vector<float> v(t.data().begin(), t.data().end());
        ck.tensors.emplace_back(name, BasicTensor<float>::from(t.shape(), std::move(v)));
    }
    return ck;
}

/// Copies checkpoint values into an existing store; names and shapes must match.
template <typename T>
void load_checkpoint(ParamStore<T>& ps, const Checkpoint& ck) {
    if (ck.tensors.size() != ps.entries().size())
        throw FormatError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                          std::to_string(ps.entries().size()));
    for (const auto& [name, t] : ck.tensors) {
        if (!ps.contains(name)) throw FormatError("checkpoint tensor not in model: " + name);
        auto& dst = ps.get(name);
        if (dst.shape() != t.shape()) shape_fail(("checkpoint " + name).c_str(), dst.shape(), t.shape());
        std::copy(t.data().begin(), t.data().end(), dst.data().begin());
    }
}

}  // namespace meshforge::ad
