#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "flow.hpp"
#include "metrics.hpp"
#include "occupancy.hpp"
#include "random.hpp"
#include "shapevae.hpp"
#include "shapevae_train.hpp"
#include "texture.hpp"

namespace meshforge {

/// Raised for schema violations; `field()` is the dotted path of the
/// offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error("ConfigError", field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Every key the pipeline accepts, with its type and default. Values are
/// kept as typed variants; unknown keys are rejected.
class PipelineConfig {
public:
    using Value = std::variant<bool, std::int64_t, double, std::string>;

    PipelineConfig() {
        const ShapeVaeConfig m;
        const TrainConfig t;
        const ToyFlowConfig f;
        const MetricConfig e;
        def("run.seed", std::int64_t{7}, "root seed; every stage derives its own stream by name");
        def("run.threads", std::int64_t{0}, "worker cap, 0 = hardware concurrency");
        def("run.deterministic", false, "single-threaded reductions");

        def("watertight.resolution", std::int64_t{128}, "grid cells per axis over [-1,1]^3");

        def("sample.surface_points", std::int64_t{65536}, "");
        def("sample.near_points", std::int64_t{100000}, "");
        def("sample.sigma", 0.01, "near-surface noise std");
        def("sample.grid_cells", std::int64_t{64}, "stratified grid cells per axis");

        def("model.resolution", std::int64_t{m.encoder.resolution}, "triplane side R");
        def("model.depth", std::int64_t{m.encoder.depth}, "self-attention blocks");
        def("model.latent_channels", std::int64_t{m.encoder.latent_channels}, "");
        def("model.width", std::int64_t{m.encoder.width}, "");
        def("model.heads", std::int64_t{m.encoder.heads}, "");
        def("model.fourier_bands", std::int64_t{m.encoder.fourier_bands}, "");
        def("model.num_points", std::int64_t{m.encoder.num_points}, "N_P");
        def("model.decoder_channels", std::int64_t{m.decoder.channels}, "");
        def("model.decoder_hidden", std::int64_t{m.decoder.hidden}, "");

        def("data.fixtures", std::string("sphere,box,torus,csg_union"), "named procedural shapes used for training");
        def("data.random_shapes", std::int64_t{24}, "additional random procedural shapes");
        def("data.validation_shapes", std::int64_t{8}, "held-out random shapes");
        def("data.surface_points", std::int64_t{4096}, "");
        def("data.near_points", std::int64_t{16384}, "");
        def("data.grid_cells", std::int64_t{32}, "");

        def("train.coarse_epochs", std::int64_t{t.coarse_epochs}, "");
        def("train.refine_epochs", std::int64_t{t.refine_epochs}, "");
        def("train.lr", t.lr, "");
        def("train.refine_lr", t.refine_lr, "");
        def("train.lr_final_factor", t.lr_final_factor, "");
        def("train.clip_norm", t.clip_norm, "");
        def("train.batch_near", std::int64_t{t.batch_near}, "");
        def("train.batch_grid", std::int64_t{t.batch_grid}, "");
        def("train.augment", t.augment, "random azimuth per step");
        def("train.refine_resolution", std::int64_t{t.refine_resolution}, "");
        def("train.image_size", std::int64_t{t.image_size}, "");
        def("train.camera_distance", t.camera_distance, "");
        def("train.fov_degrees", t.fov_degrees, "");
        def("train.reg_rays", std::int64_t{t.reg_rays}, "");
        def("train.reg_samples", std::int64_t{t.reg_samples}, "N_s");
        def("train.eval_every", std::int64_t{t.eval_every}, "");
        def("train.divergence_factor", t.divergence_factor, "");

        def("loss.kl", t.weights.kl, "");
        def("loss.tv", t.weights.tv, "");
        def("loss.mse", t.weights.mse, "");
        def("loss.reg", t.weights.reg, "");

        def("decode.resolution", std::int64_t{64}, "marching cubes lattice nodes per axis");

        def("render.size", std::int64_t{256}, "");
        def("render.azimuth_degrees", 30.0, "");
        def("render.elevation_degrees", 20.0, "");
        def("render.distance", 3.5, "");
        def("render.fov_degrees", 40.0, "");

        def("fuse.resolution", std::int64_t{512}, "atlas side");
        def("fuse.temperature", 0.1, "");
        def("fuse.depth_bias", -1.0, "<= 0: twice the pixel footprint");
        def("fuse.discontinuity_threshold", -1.0, "<= 0: 0.05 x bbox diagonal");
        def("fuse.filter_discontinuities", true, "");
        def("fuse.erosion_radius", 0.0, "");
        def("fuse.random_erosion", false, "draw the radius from [0, erosion_radius]");

        def("flow.loc", f.schedule.loc, "");
        def("flow.scale", f.schedule.scale, "");
        def("flow.steps", std::int64_t{f.schedule.steps}, "");
        def("flow.train_steps", std::int64_t{f.train_steps}, "");
        def("flow.hidden", std::int64_t{f.hidden}, "");
        def("flow.batch", std::int64_t{f.batch}, "");
        def("flow.lr", f.lr, "");
        def("flow.target_mean", f.target_mean, "");
        def("flow.target_std", f.target_std, "");
        def("flow.samples", std::int64_t{10000}, "");

        def("eval.surface_samples", std::int64_t{static_cast<std::int64_t>(e.surface_samples)}, "");
        def("eval.fscore_threshold", e.fscore_threshold, "");
        def("eval.volume_samples", std::int64_t{static_cast<std::int64_t>(e.volume_samples)}, "");
    }

    struct Entry {
        Value value;
        Value fallback;
        std::string help;
    };

    const std::map<std::string, Entry>& entries() const { return entries_; }

    /// Sets `key` from text, converting to the declared type.
    void set(const std::string& key, const std::string& text) {
        auto& e = entry(key);
        try {
            std::visit(
                [&](auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, bool>) {
                        if (text == "true" || text == "1" || text == "yes") v = true;
                        else if (text == "false" || text == "0" || text == "no") v = false;
                        else throw ConfigError(key, "expected a boolean, got '" + text + "'");
                    } else if constexpr (std::is_same_v<V, std::int64_t>) {
                        std::size_t pos = 0;
                        v = std::stoll(text, &pos);
                        if (pos != text.size()) throw ConfigError(key, "expected an integer, got '" + text + "'");
                    } else if constexpr (std::is_same_v<V, double>) {
                        std::size_t pos = 0;
                        v = std::stod(text, &pos);
                        if (pos != text.size()) throw ConfigError(key, "expected a number, got '" + text + "'");
                    } else {
                        v = text;
                    }
                },
                e.value);
        } catch (const std::invalid_argument&) {
            throw ConfigError(key, "cannot parse '" + text + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError(key, "value out of range: '" + text + "'");
        }
    }

    void set_json(const std::string& key, const nlohmann::json& j) {
        auto& e = entry(key);
        std::visit(
            [&](auto& v) {
                using V = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<V, bool>) {
                    if (!j.is_boolean()) throw ConfigError(key, "expected a boolean");
                    v = j.get<bool>();
                } else if constexpr (std::is_same_v<V, std::int64_t>) {
                    if (!j.is_number_integer()) throw ConfigError(key, "expected an integer");
                    v = j.get<std::int64_t>();
                } else if constexpr (std::is_same_v<V, double>) {
                    if (!j.is_number()) throw ConfigError(key, "expected a number");
                    v = j.get<double>();
                } else {
                    if (!j.is_string()) throw ConfigError(key, "expected a string");
                    v = j.get<std::string>();
                }
            },
            e.value);
    }

    bool get_bool(const std::string& key) const { return as<bool>(key); }
    std::int64_t get_int(const std::string& key) const { return as<std::int64_t>(key); }
    int get_i32(const std::string& key) const { return static_cast<int>(as<std::int64_t>(key)); }
    double get_double(const std::string& key) const { return as<double>(key); }
    const std::string& get_string(const std::string& key) const { return as<std::string>(key); }

    /// Section/key text format:
    ///   # comment
    ///   [section]
    ///   key = value
    static PipelineConfig parse_text(const std::string& text) {
        PipelineConfig cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno), "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key = value");
            if (section.empty()) throw ConfigError("line " + std::to_string(lineno), "key outside any section");
            cfg.set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        cfg.validate();
        return cfg;
    }

    /// {"section": {"key": value, ...}, ...}
    static PipelineConfig parse_json(const std::string& text) {
        PipelineConfig cfg;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("<json>", e.what());
        }
        if (!j.is_object()) throw ConfigError("<json>", "top level must be an object");
        for (const auto& [section, body] : j.items()) {
            if (!body.is_object()) throw ConfigError(section, "section must be an object");
            for (const auto& [key, value] : body.items()) cfg.set_json(section + "." + key, value);
        }
        cfg.validate();
        return cfg;
    }

    static PipelineConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("<file>", "cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        const auto first = text.find_first_not_of(" \t\r\n");
        return first != std::string::npos && text[first] == '{' ? parse_json(text) : parse_text(text);
    }

    /// Range checks that do not depend on a single key.
    void validate() const {
        auto positive = [&](const std::string& k) {
            if (get_int(k) < 1) throw ConfigError(k, "must be >= 1");
        };
        auto positive_real = [&](const std::string& k) {
            if (!(get_double(k) > 0)) throw ConfigError(k, "must be > 0");
        };
        auto non_negative = [&](const std::string& k) {
            const auto& v = entries_.at(k).value;
            const double x = std::holds_alternative<double>(v) ? std::get<double>(v) : static_cast<double>(std::get<std::int64_t>(v));
            if (x < 0) throw ConfigError(k, "must be >= 0");
        };
        for (const char* k : {"watertight.resolution", "sample.surface_points", "sample.near_points", "sample.grid_cells",
                              "model.resolution", "model.latent_channels", "model.width", "model.heads",
                              "model.num_points", "model.decoder_channels", "model.decoder_hidden",
                              "data.surface_points", "data.near_points", "data.grid_cells", "train.batch_near",
                              "train.batch_grid", "train.image_size", "train.reg_samples", "render.size",
                              "fuse.resolution", "flow.steps", "flow.hidden", "flow.batch", "flow.samples",
                              "eval.surface_samples", "eval.volume_samples"})
            positive(k);
        for (const char* k : {"sample.sigma", "train.lr", "train.refine_lr", "train.camera_distance", "train.fov_degrees",
                              "render.distance", "render.fov_degrees", "fuse.temperature", "flow.scale", "flow.lr",
                              "flow.target_std", "eval.fscore_threshold"})
            positive_real(k);
        for (const char* k : {"run.threads", "model.depth", "model.fourier_bands", "data.random_shapes",
                              "data.validation_shapes", "train.coarse_epochs", "train.refine_epochs", "train.reg_rays",
                              "train.eval_every", "train.clip_norm", "flow.train_steps", "loss.kl", "loss.tv",
                              "loss.mse", "loss.reg", "fuse.erosion_radius", "train.lr_final_factor"})
            non_negative(k);
        if (get_int("model.width") % get_int("model.heads") != 0)
            throw ConfigError("model.heads", "must divide model.width");
        if (get_int("decode.resolution") < 8) throw ConfigError("decode.resolution", "must be >= 8");
        if (get_int("train.refine_resolution") < 8) throw ConfigError("train.refine_resolution", "must be >= 8");
        const auto known = [](const std::string& n) {
            for (const char* f : {"sphere", "box", "torus", "csg_union"})
                if (n == f) return true;
            return false;
        };
        std::istringstream names(get_string("data.fixtures"));
        std::string n;
        while (std::getline(names, n, ','))
            if (!trim(n).empty() && !known(trim(n))) throw ConfigError("data.fixtures", "unknown fixture '" + trim(n) + "'");
    }

    /// Canonical text with every key in sorted order, including defaults.
    std::string canonical() const {
        std::ostringstream out;
        std::string section;
        for (const auto& [key, e] : entries_) {
            const auto dot = key.find('.');
            const std::string s = key.substr(0, dot);
            if (s != section) {
                out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
                section = s;
            }
            out << key.substr(dot + 1) << " = " << to_text(e.value) << '\n';
        }
        return out.str();
    }

    std::string hash() const { return hex64(fnv1a64(canonical())); }

    ShapeVaeConfig model() const {
        ShapeVaeConfig m;
        m.encoder.resolution = get_i32("model.resolution");
        m.encoder.depth = get_i32("model.depth");
        m.encoder.latent_channels = get_i32("model.latent_channels");
        m.encoder.width = get_i32("model.width");
        m.encoder.heads = get_i32("model.heads");
        m.encoder.fourier_bands = get_i32("model.fourier_bands");
        m.encoder.num_points = get_i32("model.num_points");
        m.decoder.channels = get_i32("model.decoder_channels");
        m.decoder.hidden = get_i32("model.decoder_hidden");
        m.validate();
        return m;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.seed = static_cast<std::uint64_t>(get_int("run.seed"));
        t.coarse_epochs = get_i32("train.coarse_epochs");
        t.refine_epochs = get_i32("train.refine_epochs");
        t.lr = get_double("train.lr");
        t.refine_lr = get_double("train.refine_lr");
        t.lr_final_factor = get_double("train.lr_final_factor");
        t.clip_norm = get_double("train.clip_norm");
        t.batch_near = get_i32("train.batch_near");
        t.batch_grid = get_i32("train.batch_grid");
        t.augment = get_bool("train.augment");
        t.refine_resolution = get_i32("train.refine_resolution");
        t.image_size = get_i32("train.image_size");
        t.camera_distance = get_double("train.camera_distance");
        t.fov_degrees = get_double("train.fov_degrees");
        t.reg_rays = get_i32("train.reg_rays");
        t.reg_samples = get_i32("train.reg_samples");
        t.eval_every = get_i32("train.eval_every");
        t.divergence_factor = get_double("train.divergence_factor");
        t.weights.kl = get_double("loss.kl");
        t.weights.tv = get_double("loss.tv");
        t.weights.mse = get_double("loss.mse");
        t.weights.reg = get_double("loss.reg");
        t.weights.validate();
        return t;
    }

    SampleSetConfig samples() const {
        SampleSetConfig s;
        s.surface_points = static_cast<std::size_t>(get_int("sample.surface_points"));
        s.near_points = static_cast<std::size_t>(get_int("sample.near_points"));
        s.sigma = get_double("sample.sigma");
        s.grid_cells = get_i32("sample.grid_cells");
        return s;
    }

    SampleSetConfig training_samples() const {
        SampleSetConfig s = samples();
        s.surface_points = static_cast<std::size_t>(get_int("data.surface_points"));
        s.near_points = static_cast<std::size_t>(get_int("data.near_points"));
        s.grid_cells = get_i32("data.grid_cells");
        return s;
    }

    ToyFlowConfig flow() const {
        ToyFlowConfig f;
        f.schedule.loc = get_double("flow.loc");
        f.schedule.scale = get_double("flow.scale");
        f.schedule.steps = get_i32("flow.steps");
        f.train_steps = get_i32("flow.train_steps");
        f.hidden = get_i32("flow.hidden");
        f.batch = get_i32("flow.batch");
        f.lr = get_double("flow.lr");
        f.target_mean = get_double("flow.target_mean");
        f.target_std = get_double("flow.target_std");
        f.seed = derive_seed(static_cast<std::uint64_t>(get_int("run.seed")), "flow");
        return f;
    }

    MetricConfig metrics() const {
        MetricConfig e;
        e.surface_samples = static_cast<std::size_t>(get_int("eval.surface_samples"));
        e.fscore_threshold = get_double("eval.fscore_threshold");
        e.volume_samples = static_cast<std::size_t>(get_int("eval.volume_samples"));
        e.seed = derive_seed(static_cast<std::uint64_t>(get_int("run.seed")), "eval");
        return e;
    }

    GatherConfig gather() const {
        GatherConfig g;
        g.depth_bias = get_double("fuse.depth_bias");
        g.discontinuity_threshold = get_double("fuse.discontinuity_threshold");
        g.filter_discontinuities = get_bool("fuse.filter_discontinuities");
        return g;
    }

    static std::string hex64(std::uint64_t h) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    void def(const std::string& key, Value v, std::string help) { entries_[key] = {v, v, std::move(help)}; }

    Entry& entry(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError(key, "unknown key");
        return it->second;
    }

    template <typename V>
    const V& as(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError(key, "unknown key");
        if (!std::holds_alternative<V>(it->second.value)) throw ConfigError(key, "type mismatch");
        return std::get<V>(it->second.value);
    }

    static std::string to_text(const Value& v) {
        return std::visit(
            [](const auto& x) -> std::string {
                using V = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<V, bool>) return x ? "true" : "false";
                else if constexpr (std::is_same_v<V, std::int64_t>) return std::to_string(x);
                else if constexpr (std::is_same_v<V, double>) {
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%.17g", x);
                    return buf;
                } else return x;
            },
            v);
    }

    std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Run manifest

inline std::string hash_bytes(std::string_view bytes) { return PipelineConfig::hex64(fnv1a64(bytes)); }

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return hash_bytes(ss.str());
}

/// Record written next to every command's outputs. Output hashes are
/// FNV-1a 64 of the file bytes; timings are wall-clock seconds.
struct RunManifest {
    std::string command;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, hash
    std::vector<std::pair<std::string, std::string>> outputs;  // path, hash
    std::vector<std::pair<std::string, double>> stages;        // name, seconds
    std::vector<std::string> warnings;

    void add_input(const std::string& path) { inputs.emplace_back(path, hash_file(path)); }
    void add_output(const std::string& path) { outputs.emplace_back(path, hash_file(path)); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tool"] = "meshforge";
#ifdef MESHFORGE_VERSION
        j["version"] = MESHFORGE_VERSION;
#else
        j["version"] = "unknown";
#endif
        j["command"] = command;
        j["config_hash"] = config_hash;
        j["inputs"] = nlohmann::json::array();
        for (const auto& [p, h] : inputs) j["inputs"].push_back({{"path", p}, {"hash", h}});
        j["outputs"] = nlohmann::json::array();
        for (const auto& [p, h] : outputs) j["outputs"].push_back({{"path", p}, {"hash", h}});
        j["stages"] = nlohmann::json::array();
        for (const auto& [n, s] : stages) j["stages"].push_back({{"name", n}, {"seconds", s}});
        j["warnings"] = warnings;
        return j;
    }
};

/// Times a scope into a manifest stage entry.
class StageTimer {
public:
    StageTimer(RunManifest& m, std::string name)
        : m_(m), name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        m_.stages.emplace_back(name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count());
    }
    StageTimer(const StageTimer&) = delete;
    StageTimer& operator=(const StageTimer&) = delete;

private:
    RunManifest& m_;
    std::string name_;
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace meshforge
