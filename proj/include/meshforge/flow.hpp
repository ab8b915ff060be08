#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace meshforge {

/// Rectified flow with data at t = 0 and noise at t = 1. The regression
/// target is the constant path velocity noise - x0.
struct FlowSchedule {
    double loc = 0.0;    // logit-normal location
    double scale = 1.0;  // logit-normal scale
    int steps = 50;      // Euler steps when sampling

    void validate() const {
        if (!(scale > 0) || !std::isfinite(scale)) throw DomainError("flow schedule: scale must be positive");
        if (!std::isfinite(loc)) throw DomainError("flow schedule: location must be finite");
        if (steps < 1) throw DomainError("flow schedule: steps must be >= 1");
    }
};

inline constexpr const char* kVelocityConvention = "noise_minus_data";

inline double logistic(double g) { return g >= 0 ? 1 / (1 + std::exp(-g)) : std::exp(g) / (1 + std::exp(g)); }
inline double logit(double t) { return std::log(t / (1 - t)); }

/// t = sigmoid(g) with g ~ Normal(loc, scale).
inline double sample_timestep(const FlowSchedule& s, Rng& rng) {
    return logistic(s.loc + s.scale * standard_normal(rng));
}

inline std::vector<double> sample_timesteps(const FlowSchedule& s, std::size_t n, std::uint64_t seed) {
    s.validate();
    Rng rng(seed);
    std::vector<double> t(n);
    for (auto& v : t) v = sample_timestep(s, rng);
    return t;
}

inline double logit_normal_pdf(double t, const FlowSchedule& s) {
    if (t <= 0 || t >= 1) return 0.0;
    const double z = (logit(t) - s.loc) / s.scale;
    return std::exp(-0.5 * z * z) / (s.scale * std::sqrt(2 * kPi) * t * (1 - t));
}

inline double logit_normal_cdf(double t, const FlowSchedule& s) {
    if (t <= 0) return 0.0;
    if (t >= 1) return 1.0;
    return 0.5 * std::erfc(-(logit(t) - s.loc) / (s.scale * std::sqrt(2.0)));
}

struct FlowPoint {
    std::vector<double> x_t;
    std::vector<double> velocity;
};

inline FlowPoint interpolate(std::span<const double> x0, std::span<const double> noise, double t) {
    if (x0.size() != noise.size()) throw ShapeError("interpolate: data and noise sizes differ");
    FlowPoint p;
    p.x_t.resize(x0.size());
    p.velocity.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        p.x_t[i] = (1 - t) * x0[i] + t * noise[i];
        p.velocity[i] = noise[i] - x0[i];
    }
    return p;
}

/// v(x, t) for a batch of states sharing one time.
using VelocityField = std::function<std::vector<double>(std::span<const double>, double)>;

/// Integrates dx/dt = -v from t = 1 down to t = 0 in `steps` uniform steps,
/// starting from `noise`.
inline std::vector<double> euler_integrate(const VelocityField& v, std::vector<double> x, int steps) {
    if (steps < 1) throw DomainError("euler: steps must be >= 1");
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        const auto vel = v(x, t);
        if (vel.size() != x.size()) throw ShapeError("euler: velocity size differs from state");
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] -= dt * vel[i];
            if (!std::isfinite(x[i]))
                throw NonFiniteState("euler: state became non-finite at step " + std::to_string(k));
        }
    }
    return x;
}

/// Draws standard normal noise from `seed` and integrates it to t = 0.
inline std::vector<double> euler_sample(const VelocityField& v, std::size_t size, const FlowSchedule& s,
                                        std::uint64_t seed) {
    s.validate();
    Rng rng(seed);
    std::vector<double> x(size);
    for (auto& e : x) e = standard_normal(rng);
    return euler_integrate(v, std::move(x), s.steps);
}

// ---------------------------------------------------------------------------
// Toy velocity model for scalar data.

struct ToyFlowConfig {
    double target_mean = 3.0;
    double target_std = 0.5;
    int hidden = 64;
    int train_steps = 3000;
    int batch = 256;
    double lr = 3e-3;
    FlowSchedule schedule;
    std::uint64_t seed = 0;
};

/// Two hidden GELU layers on the input (x, t).
template <typename T>
class VelocityMlp {
public:
    explicit VelocityMlp(int hidden = 64, std::uint64_t seed = 0) : hidden_(hidden) {
        if (hidden < 1) throw DomainError("velocity mlp: hidden width must be >= 1");
        Rng rng(derive_seed(seed, "flow.init"));
        ad::add_linear(ps_, "fc0", 2, hidden, rng);
        ad::add_linear(ps_, "fc1", hidden, hidden, rng);
        ad::add_linear(ps_, "out", hidden, 1, rng);
    }

    ad::ParamStore<T>& params() { return ps_; }
    const ad::ParamStore<T>& params() const { return ps_; }
    int hidden() const { return hidden_; }

    /// x and t are (N, 1); returns (N, 1).
    ad::BasicTensor<T> forward(const ad::BasicTensor<T>& x, const ad::BasicTensor<T>& t) const {
        auto h = ad::gelu(ad::linear(ps_, "fc0", ad::concat(std::vector<ad::BasicTensor<T>>{x, t}, 1)));
        h = ad::gelu(ad::linear(ps_, "fc1", h));
        return ad::linear(ps_, "out", h);
    }

    std::vector<double> operator()(std::span<const double> x, double t) const {
        const int n = static_cast<int>(x.size());
        const auto xs = ad::BasicTensor<T>::from({n, 1}, std::vector<T>(x.begin(), x.end()));
        const auto ts = ad::BasicTensor<T>::from({n, 1}, std::vector<T>(x.size(), static_cast<T>(t)));
        const auto v = forward(xs, ts);
        return {v.data().begin(), v.data().end()};
    }

    ad::Checkpoint to_checkpoint(const FlowSchedule& s) const {
        return ad::to_checkpoint(ps_, {{"model", "velocity_mlp"},
                                       {"hidden", std::to_string(hidden_)},
                                       {"velocity_convention", kVelocityConvention},
                                       {"timestep_law", "logit_normal"},
                                       {"loc", std::to_string(s.loc)},
                                       {"scale", std::to_string(s.scale)}});
    }

    static VelocityMlp from_checkpoint(const ad::Checkpoint& ck) {
        if (ck.meta_value("model") != "velocity_mlp") throw FormatError("checkpoint is not a velocity model");
        if (ck.meta_value("velocity_convention") != kVelocityConvention)
            throw FormatError("checkpoint uses an unknown velocity convention");
        VelocityMlp m(std::stoi(ck.meta_value("hidden", "0")));
        ad::load_checkpoint(m.ps_, ck);
        return m;
    }

private:
    int hidden_;
    ad::ParamStore<T> ps_;
};

/// Fits the velocity of the path from Normal(target_mean, target_std) to
/// Normal(0, 1). `losses`, when given, receives the per-step loss.
template <typename T = double>
VelocityMlp<T> train_toy_flow(const ToyFlowConfig& cfg, std::vector<double>* losses = nullptr) {
    cfg.schedule.validate();
    if (cfg.batch < 1 || cfg.train_steps < 0) throw DomainError("toy flow: batch and steps must be positive");
    VelocityMlp<T> model(cfg.hidden, cfg.seed);
    Rng rng(derive_seed(cfg.seed, "flow.train"));
    ad::AdamConfig ac;
    ac.lr = cfg.lr;
    ad::Adam<T> opt(ac);
    const auto n = static_cast<std::size_t>(cfg.batch);
    std::vector<double> x0(n), noise(n);
    std::vector<T> xt(n), tt(n), target(n);
    for (int step = 0; step < cfg.train_steps; ++step) {
        for (std::size_t i = 0; i < n; ++i) {
            x0[i] = cfg.target_mean + cfg.target_std * standard_normal(rng);
            noise[i] = standard_normal(rng);
            const double t = sample_timestep(cfg.schedule, rng);
            const double p[1] = {x0[i]}, q[1] = {noise[i]};
            const auto fp = interpolate(p, q, t);
            xt[i] = static_cast<T>(fp.x_t[0]);
            target[i] = static_cast<T>(fp.velocity[0]);
            tt[i] = static_cast<T>(t);
        }
        const int b = cfg.batch;
        const auto pred = model.forward(ad::BasicTensor<T>::from({b, 1}, xt), ad::BasicTensor<T>::from({b, 1}, tt));
        auto loss = ad::mse(pred, ad::BasicTensor<T>::from({b, 1}, target));
        model.params().zero_grad();
        loss.backward();
        opt.set_lr(cfg.lr * 0.5 * (1 + std::cos(kPi * step / cfg.train_steps)));
        opt.step(model.params());
        if (losses) losses->push_back(static_cast<double>(loss.item()));
    }
    return model;
}

}  // namespace meshforge
