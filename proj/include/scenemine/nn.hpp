#pragma once

#include <bit>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenemine/common.hpp"
#include "scenemine/tensor.hpp"

namespace scenemine::nn {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Parameters and Adam
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor tensor;
    std::vector<double> m;  // Adam first moment
    std::vector<double> v;  // Adam second moment
};

/// Ordered registry of named trainable tensors plus their Adam state.
class ParameterStore {
public:
    /// Registers a zero tensor; caller fills values via the init helpers.
    Tensor add(const std::string& name, ad::Shape shape) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Tensor t = Tensor::zeros(std::move(shape));
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back(Parameter{name, t, std::vector<double>(t.numel(), 0.0),
                                    std::vector<double>(t.numel(), 0.0)});
        return t;
    }

    const std::vector<Parameter>& params() const { return params_; }
    std::vector<Parameter>& params_mut() { return params_; }
    std::size_t size() const { return params_.size(); }
    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }

    Tensor find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return params_[it->second].tensor;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    /// Bias-corrected Adam update from the gradients currently accumulated on
    /// the parameter tensors. Parameters with empty gradients are untouched.
    void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        ++step_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (auto& p : params_) {
            const auto& g = p.tensor.grad();
            if (g.empty()) continue;
            auto& w = p.tensor.values_mut();
            for (std::size_t i = 0; i < w.size(); ++i) {
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g[i];
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = p.m[i] / c1;
                const double vhat = p.v[i] / c2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    /// Raw value snapshot in registration order (checkpoint retention).
    std::vector<std::vector<double>> snapshot_values() const {
        std::vector<std::vector<double>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.tensor.values());
        return out;
    }

    void restore_values(const std::vector<std::vector<double>>& snap) {
        if (snap.size() != params_.size()) throw ConfigError("snapshot size mismatch");
        for (std::size_t i = 0; i < snap.size(); ++i) {
            if (snap[i].size() != params_[i].tensor.numel()) throw ConfigError("snapshot shape mismatch");
            params_[i].tensor.values_mut() = snap[i];
        }
    }

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
    std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void init_xavier(Tensor& t, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.values_mut()) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Two-layer perceptron; the hidden layer is LeakyReLU-activated, the output
/// layer optionally so.
struct Mlp {
    Tensor w1, b1, w2, b2;
    double slope = 0.01;
    bool activate_output = false;

    static Mlp create(ParameterStore& store, const std::string& prefix, int in, int hidden, int out, Rng& rng,
                      double slope = 0.01, bool activate_output = false) {
        Mlp m;
        m.w1 = store.add(prefix + ".w1", {hidden, in});
        m.b1 = store.add(prefix + ".b1", {hidden});
        m.w2 = store.add(prefix + ".w2", {out, hidden});
        m.b2 = store.add(prefix + ".b2", {out});
        init_xavier(m.w1, in, hidden, rng);
        init_xavier(m.w2, hidden, out, rng);
        m.slope = slope;
        m.activate_output = activate_output;
        return m;
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = ad::leaky_relu(ad::add(ad::matmul(w1, x), b1), slope);
        Tensor y = ad::add(ad::matmul(w2, h), b2);
        return activate_output ? ad::leaky_relu(y, slope) : y;
    }
};

/// One GRU layer's weights: x/h maps for the update, reset, and candidate gates.
struct GruWeights {
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wh, uh, bh;

    static GruWeights create(ParameterStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
        GruWeights g;
        auto mat = [&](const char* n, int rows, int cols) {
            Tensor t = store.add(prefix + "." + n, {rows, cols});
            init_xavier(t, cols, rows, rng);
            return t;
        };
        g.wz = mat("wz", hidden, in);
        g.uz = mat("uz", hidden, hidden);
        g.bz = store.add(prefix + ".bz", {hidden});
        g.wr = mat("wr", hidden, in);
        g.ur = mat("ur", hidden, hidden);
        g.br = store.add(prefix + ".br", {hidden});
        g.wh = mat("wh", hidden, in);
        g.uh = mat("uh", hidden, hidden);
        g.bh = store.add(prefix + ".bh", {hidden});
        return g;
    }
};

/// Standard GRU update. With the update gate saturated at 1 the state passes
/// through unchanged: h' = (1-z)*cand + z*h.
inline Tensor gru_cell(const Tensor& x, const Tensor& h, const GruWeights& w) {
    using namespace ad;
    Tensor z = sigmoid(add(add(matmul(w.wz, x), matmul(w.uz, h)), w.bz));
    Tensor r = sigmoid(add(add(matmul(w.wr, x), matmul(w.ur, h)), w.br));
    Tensor cand = tanh(add(add(matmul(w.wh, x), matmul(w.uh, mul(r, h))), w.bh));
    return add(mul(affine(z, -1.0, 1.0), cand), mul(z, h));
}

struct ConvLayer {
    Tensor w, b;
    int stride = 1;
    int padding = 0;

    static ConvLayer create(ParameterStore& store, const std::string& prefix, int c_in, int c_out, int k, int stride,
                            int padding, Rng& rng) {
        ConvLayer c;
        c.w = store.add(prefix + ".w", {c_out, c_in, k, k});
        c.b = store.add(prefix + ".b", {c_out});
        init_xavier(c.w, c_in * k * k, c_out * k * k, rng);
        c.stride = stride;
        c.padding = padding;
        return c;
    }

    Tensor forward(const Tensor& x) const { return ad::conv2d(x, w, b, stride, padding); }
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double eps = 1e-5;
    double kink_threshold = 1e-3;
    int max_resamples = 20;
    /// Called to redraw x when the forward pass lands near a kink.
    std::function<void(Tensor&)> resample;
};

/// Central-difference check of d f / d x. Returns the max relative error with
/// denominator max(|analytic|, |numeric|, 1e-8). The function is re-invoked
/// with fresh inputs while any activation sits within `kink_threshold` of a
/// non-smooth point.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, const GradCheckOptions& opt = {}) {
    for (int attempt = 0;; ++attempt) {
        ad::reset_kink_margin();
        Tensor y;
        {
            x.zero_grad();
            x.set_requires_grad(true);
            y = f(x);
        }
        if (ad::kink_margin() < opt.kink_threshold && opt.resample && attempt < opt.max_resamples) {
            opt.resample(x);
            continue;
        }
        ad::backward(y);
        std::vector<double> analytic = x.grad();
        if (analytic.empty()) analytic.assign(x.numel(), 0.0);

        double max_rel = 0.0;
        auto& vals = x.values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            ad::NoGradGuard ng;
            vals[i] = keep + opt.eps;
            const double yp = f(x).scalar_value();
            vals[i] = keep - opt.eps;
            const double ym = f(x).scalar_value();
            vals[i] = keep;
            const double numeric = (yp - ym) / (2.0 * opt.eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
        }
        return max_rel;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: <prefix>.json manifest + <prefix>.bin little-endian f64 payload
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian host");

inline void save_checkpoint(const ParameterStore& store, const nlohmann::json& model_config,
                            const std::string& prefix, std::uint64_t seed, const std::string& config_hash) {
    nlohmann::json manifest;
    manifest["format"] = "scenemine-ckpt-v1";
    manifest["config_hash"] = config_hash;
    manifest["model_config"] = model_config;
    manifest["step"] = store.step();
    manifest["seed"] = seed;
    nlohmann::json params = nlohmann::json::array();
    std::string payload;
    for (const auto& p : store.params()) {
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape();
        entry["offset"] = payload.size() / sizeof(double);
        params.push_back(entry);
        const auto& v = p.tensor.values();
        const std::size_t pos = payload.size();
        payload.resize(pos + v.size() * sizeof(double));
        std::memcpy(payload.data() + pos, v.data(), v.size() * sizeof(double));
    }
    manifest["params"] = params;
    write_file_atomic(prefix + ".json", manifest.dump(2) + "\n");
    write_file_atomic(prefix + ".bin", payload);
}

struct CheckpointManifest {
    nlohmann::json model_config;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// Loads payload values into an already-constructed store; shapes must match.
inline CheckpointManifest load_checkpoint(ParameterStore& store, const std::string& prefix) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(prefix + ".json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint manifest " + prefix + ".json: " + e.what());
    }
    if (manifest.value("format", "") != "scenemine-ckpt-v1") {
        throw InputError("unrecognized checkpoint format in " + prefix + ".json");
    }
    const std::string payload = read_file(prefix + ".bin");
    const auto& params = manifest.at("params");
    if (params.size() != store.size()) {
        throw InputError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                         std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store.params_mut()[i];
        const auto& entry = params[i];
        if (entry.at("name").get<std::string>() != p.name) {
            throw InputError("checkpoint parameter order mismatch at " + p.name);
        }
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p.tensor.shape()) throw InputError("checkpoint shape mismatch for " + p.name);
        const std::size_t offset = entry.at("offset").get<std::size_t>() * sizeof(double);
        const std::size_t bytes = p.tensor.numel() * sizeof(double);
        if (offset + bytes > payload.size()) throw InputError("checkpoint payload truncated at " + p.name);
        std::memcpy(p.tensor.values_mut().data(), payload.data() + offset, bytes);
    }
    CheckpointManifest out;
    out.model_config = manifest.value("model_config", nlohmann::json::object());
    out.step = manifest.value("step", std::int64_t{0});
    out.seed = manifest.value("seed", std::uint64_t{0});
    out.config_hash = manifest.value("config_hash", "");
    store.set_step(out.step);
    return out;
}

}  // namespace scenemine::nn
