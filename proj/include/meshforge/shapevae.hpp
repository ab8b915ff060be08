#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "bvh.hpp"
#include "marching_cubes.hpp"
#include "nn.hpp"
#include "occupancy.hpp"
#include "random.hpp"

namespace meshforge {

struct EncoderConfig {
    int num_points = 2048;  // N_P used for training clouds
    int resolution = 8;     // R; the encoder has 3 R^2 learnable queries
    int depth = 2;          // self-attention blocks
    int latent_channels = 16;
    int width = 32;
    int heads = 2;
    int fourier_bands = 4;

    int num_queries() const { return 3 * resolution * resolution; }
};

struct DecoderConfig {
    int channels = 32;  // feature channels after upsampling
    int hidden = 64;    // MLP width
};

struct ShapeVaeConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;

    void validate() const {
        const auto& e = encoder;
        if (e.resolution < 2 || e.depth < 0 || e.latent_channels < 1 || e.width < 1 || e.heads < 1 ||
            e.fourier_bands < 0 || e.num_points < 1)
            throw ShapeError("shape vae: invalid encoder configuration");
        if (e.width % e.heads) throw ShapeError("shape vae: width must be divisible by heads");
        if (decoder.channels < 1 || decoder.hidden < 1) throw ShapeError("shape vae: invalid decoder configuration");
    }

    /// Queries N_z = 3072 (R = 32), 10 self-attention blocks, 16 channels.
    static ShapeVaeConfig large() {
        ShapeVaeConfig c;
        c.encoder.resolution = 32;
        c.encoder.depth = 10;
        c.encoder.width = 512;
        c.encoder.heads = 8;
        c.encoder.num_points = 81920;
        c.decoder.channels = 64;
        c.decoder.hidden = 256;
        return c;
    }
};

struct LossWeights {
    double kl = 1e-6;
    double tv = 5e-3;
    double mse = 1.0;
    double reg = 0.5;
    double lpips = 0.0;  // carried for completeness, never evaluated

    void validate() const {
        for (double w : {kl, tv, mse, reg, lpips})
            if (!(w >= 0) || !std::isfinite(w)) throw DomainError("loss weights must be finite and >= 0");
    }
};

/// Query outputs of the encoder, (N_z, d_z) each. Query i belongs to plane
/// i / R^2 (xy, xz, yz) at row (i / R) % R and column i % R.
template <typename T>
struct TriplaneLatent {
    ad::BasicTensor<T> mean;
    ad::BasicTensor<T> logvar;
    ad::BasicTensor<T> sample;
    int resolution = 0;
    int channels = 0;

    /// (d_z, 3R, R) height concatenation of the planes.
    ad::BasicTensor<T> tile() const { return tile_of(sample); }
    ad::BasicTensor<T> tile_of(const ad::BasicTensor<T>& z) const {
        return ad::reshape(ad::transpose(z), {channels, 3 * resolution, resolution});
    }
    /// Plane p in 0..2 as (d_z, R, R).
    ad::BasicTensor<T> plane(int p) const { return ad::slice(tile(), 1, p * resolution, resolution); }

    /// Same latent with the sample replaced by the mean.
    TriplaneLatent deterministic() const {
        TriplaneLatent out = *this;
        out.sample = mean;
        return out;
    }
};

/// Stored as an MGCK file with tensors "mean" and "logvar".
template <typename T>
ad::Checkpoint latent_to_checkpoint(const TriplaneLatent<T>& lat) {
    ad::Checkpoint ck;
    ck.meta = {{"model", "triplane_latent"},
               {"resolution", std::to_string(lat.resolution)},
               {"channels", std::to_string(lat.channels)}};
    for (const auto& [name, t] : {std::pair{"mean", &lat.mean}, std::pair{"logvar", &lat.logvar}}) {
        std::vector<float> v(t->data().begin(), t->data().end());
        ck.tensors.emplace_back(name, ad::BasicTensor<float>::from(t->shape(), std::move(v)));
    }
    return ck;
}

/// The loaded latent's sample is its mean.
template <typename T>
TriplaneLatent<T> latent_from_checkpoint(const ad::Checkpoint& ck) {
    if (ck.meta_value("model") != "triplane_latent") throw FormatError("file is not a triplane latent");
    TriplaneLatent<T> lat;
    try {
        lat.resolution = std::stoi(ck.meta_value("resolution"));
        lat.channels = std::stoi(ck.meta_value("channels"));
    } catch (const std::exception&) {
        throw FormatError("latent: bad resolution or channels");
    }
    const ad::BasicTensor<float>* mean = nullptr;
    const ad::BasicTensor<float>* logvar = nullptr;
    for (const auto& [name, t] : ck.tensors) {
        if (name == "mean") mean = &t;
        if (name == "logvar") logvar = &t;
    }
    if (!mean || !logvar) throw FormatError("latent: missing mean or logvar");
    const ad::Shape want{3 * lat.resolution * lat.resolution, lat.channels};
    if (mean->shape() != want || logvar->shape() != want) throw FormatError("latent: tensor shape mismatch");
    lat.mean = ad::BasicTensor<T>::from(want, std::vector<T>(mean->data().begin(), mean->data().end()));
    lat.logvar = ad::BasicTensor<T>::from(want, std::vector<T>(logvar->data().begin(), logvar->data().end()));
    lat.sample = lat.mean;
    return lat;
}

/// The three planes in [-1,1]^3 and the coordinate pair each one sees.
inline constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

/// Point-cloud to triplane auto-encoder with an occupancy decoder.
template <typename T>
class ShapeVae {
public:
    explicit ShapeVae(ShapeVaeConfig cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "shapevae.init"));
        const auto& e = cfg_.encoder;
        const int pe = static_cast<int>(FourierEncoding{e.fourier_bands, true}.width());
        const int w = e.width;
        ad::add_linear(ps_, "enc.in", pe, w, rng);
        ps_.add("enc.queries", ad::glorot<T>({e.num_queries(), w}, e.num_queries(), w, rng));
        add_block(rng, "enc.cross", true);
        for (int b = 0; b < e.depth; ++b) add_block(rng, "enc.self" + std::to_string(b), false);
        ad::add_layer_norm(ps_, "enc.out_ln", w);
        ad::add_linear(ps_, "enc.mean", w, e.latent_channels, rng);
        ad::add_linear(ps_, "enc.logvar", w, e.latent_channels, rng);
        const int c = cfg_.decoder.channels, h = cfg_.decoder.hidden, dz = e.latent_channels;
        ps_.add("dec.conv0.w", ad::glorot<T>({c, dz, 3, 3}, dz * 9, c * 9, rng));
        ps_.add("dec.conv0.b", ad::BasicTensor<T>::zeros({c}));
        ps_.add("dec.conv1.w", ad::glorot<T>({c, c, 3, 3}, c * 9, c * 9, rng));
        ps_.add("dec.conv1.b", ad::BasicTensor<T>::zeros({c}));
        ad::add_linear(ps_, "dec.fc0", c + 3, h, rng);
        ad::add_linear(ps_, "dec.fc1", h, h, rng);
        ad::add_linear(ps_, "dec.out", h, 1, rng);
    }

    ShapeVae(ShapeVaeConfig cfg, ad::ParamStore<T> params) : cfg_(cfg), ps_(std::move(params)) { cfg_.validate(); }

    const ShapeVaeConfig& config() const { return cfg_; }
    ad::ParamStore<T>& params() { return ps_; }
    const ad::ParamStore<T>& params() const { return ps_; }

    template <typename U>
    ShapeVae<U> cast() const {
        return ShapeVae<U>(cfg_, ps_.template cast<U>());
    }

    /// Encodes a cloud. With `noise` the sample is mean + exp(logvar/2) * eps,
    /// otherwise it equals the mean.
    TriplaneLatent<T> encode(std::span<const Vec3> points, Rng* noise = nullptr) const {
        if (points.empty()) throw ShapeError("encode: empty point cloud");
        const auto& e = cfg_.encoder;
        const FourierEncoding enc{e.fourier_bands, true};
        const auto pe = fourier_encode(points, enc);
        const auto x_in = ad::BasicTensor<T>::from({static_cast<int>(points.size()), static_cast<int>(enc.width())},
                                                  std::vector<T>(pe.begin(), pe.end()));
        const auto h = ad::linear(ps_, "enc.in", x_in);
        auto x = block(ps_.get("enc.queries"), h, "enc.cross");
        for (int b = 0; b < e.depth; ++b) x = block(x, x, "enc.self" + std::to_string(b));
        x = ad::layer_norm(ps_, "enc.out_ln", x);
        TriplaneLatent<T> lat;
        lat.resolution = e.resolution;
        lat.channels = e.latent_channels;
        lat.mean = ad::linear(ps_, "enc.mean", x);
        lat.logvar = ad::linear(ps_, "enc.logvar", x);
        if (noise) {
            std::vector<T> eps(lat.mean.size());
            for (auto& v : eps) v = static_cast<T>(standard_normal(*noise));
            const auto std_dev = ad::exp(ad::scale(lat.logvar, T(0.5)));
            lat.sample = ad::add(lat.mean, ad::mul(std_dev, ad::BasicTensor<T>::from(lat.mean.shape(), std::move(eps))));
        } else {
            lat.sample = lat.mean;
        }
        return lat;
    }
    TriplaneLatent<T> encode(const PointCloud& cloud, Rng* noise = nullptr) const { return encode(cloud.points, noise); }

    /// Upsampled feature tile (C, 6R, 2R): x2 nearest, conv, gelu, conv.
    ad::BasicTensor<T> decode_planes(const TriplaneLatent<T>& lat) const {
        auto t = ad::upsample_nearest(lat.tile());
        t = ad::gelu(ad::conv2d(t, ps_.get("dec.conv0.w"), ps_.get("dec.conv0.b")));
        return ad::conv2d(t, ps_.get("dec.conv1.w"), ps_.get("dec.conv1.b"));
    }

    /// Occupancy logits (N, 1) at points in [-1,1]^3. Plane features are
    /// summed, concatenated with the point and decoded by the MLP.
    ad::BasicTensor<T> query_logits(const ad::BasicTensor<T>& planes, std::span<const Vec3> pts) const {
        const int side = planes.dim(1) / 3;
        std::vector<double> uv(pts.size() * 2);
        ad::BasicTensor<T> feat;
        for (int p = 0; p < 3; ++p) {
            for (std::size_t i = 0; i < pts.size(); ++i) {
                uv[2 * i] = pts[i][kPlaneAxes[p][0]];
                uv[2 * i + 1] = pts[i][kPlaneAxes[p][1]];
            }
            const auto f = ad::bilinear_sample(ad::slice(planes, 1, p * side, side), uv);
            feat = p == 0 ? f : ad::add(feat, f);
        }
        std::vector<T> xyz(pts.size() * 3);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int a = 0; a < 3; ++a) xyz[i * 3 + a] = static_cast<T>(pts[i][a]);
        const auto x = ad::BasicTensor<T>::from({static_cast<int>(pts.size()), 3}, std::move(xyz));
        auto h = ad::gelu(ad::linear(ps_, "dec.fc0", ad::concat<T>({feat, x}, 1)));
        h = ad::gelu(ad::linear(ps_, "dec.fc1", h));
        return ad::linear(ps_, "dec.out", h);
    }

    /// Occupancy probabilities without recording a graph, in batches.
    std::vector<double> occupancy(const ad::BasicTensor<T>& planes, std::span<const Vec3> pts,
                                  std::size_t batch = 8192) const {
        ad::NoGradGuard ng;
        std::vector<double> out(pts.size());
        for (std::size_t b = 0; b < pts.size(); b += batch) {
            const std::size_t n = std::min(batch, pts.size() - b);
            const auto lg = query_logits(planes, pts.subspan(b, n));
            for (std::size_t i = 0; i < n; ++i) out[b + i] = ad::sigmoid_value(static_cast<double>(lg.data()[i]));
        }
        return out;
    }

    std::vector<double> query_occupancy(const TriplaneLatent<T>& lat, std::span<const Vec3> pts) const {
        ad::NoGradGuard ng;
        return occupancy(decode_planes(lat), pts);
    }

    ad::Checkpoint to_checkpoint(std::vector<std::pair<std::string, std::string>> meta = {}) const {
        const auto& e = cfg_.encoder;
        meta.insert(meta.begin(), {{"model", "shapevae"},
                                   {"resolution", std::to_string(e.resolution)},
                                   {"depth", std::to_string(e.depth)},
                                   {"latent_channels", std::to_string(e.latent_channels)},
                                   {"width", std::to_string(e.width)},
                                   {"heads", std::to_string(e.heads)},
                                   {"fourier_bands", std::to_string(e.fourier_bands)},
                                   {"num_points", std::to_string(e.num_points)},
                                   {"decoder_channels", std::to_string(cfg_.decoder.channels)},
                                   {"decoder_hidden", std::to_string(cfg_.decoder.hidden)},
                                   {"plane_combine", "sum"}});
        return ad::to_checkpoint(ps_, std::move(meta));
    }

    static ShapeVae from_checkpoint(const ad::Checkpoint& ck) {
        if (ck.meta_value("model") != "shapevae") throw FormatError("checkpoint is not a shape vae");
        if (ck.meta_value("plane_combine") != "sum") throw FormatError("unsupported plane combination");
        auto num = [&](const char* key) {
            try {
                return std::stoi(ck.meta_value(key));
            } catch (const std::exception&) {
                throw FormatError(std::string("checkpoint: bad or missing '") + key + "'");
            }
        };
        ShapeVaeConfig cfg;
        cfg.encoder.resolution = num("resolution");
        cfg.encoder.depth = num("depth");
        cfg.encoder.latent_channels = num("latent_channels");
        cfg.encoder.width = num("width");
        cfg.encoder.heads = num("heads");
        cfg.encoder.fourier_bands = num("fourier_bands");
        cfg.encoder.num_points = num("num_points");
        cfg.decoder.channels = num("decoder_channels");
        cfg.decoder.hidden = num("decoder_hidden");
        ShapeVae m(cfg, 0);
        ad::load_checkpoint(m.ps_, ck);
        return m;
    }

private:
    void add_block(Rng& rng, const std::string& name, bool cross) {
        const int w = cfg_.encoder.width;
        ad::add_layer_norm(ps_, name + ".ln_q", w);
        if (cross) ad::add_layer_norm(ps_, name + ".ln_kv", w);
        ad::add_attention(ps_, name + ".attn", w, w, w, rng);
        ad::add_layer_norm(ps_, name + ".ln_ff", w);
        ad::add_linear(ps_, name + ".ff0", w, 2 * w, rng);
        ad::add_linear(ps_, name + ".ff1", 2 * w, w, rng);
    }

    // Pre-norm residual attention + feedforward. Self-attention when xq and
    // xkv are the same tensor.
    ad::BasicTensor<T> block(const ad::BasicTensor<T>& xq, const ad::BasicTensor<T>& xkv, const std::string& name) const {
        const bool cross = ps_.contains(name + ".ln_kv.g");
        const auto q = ad::layer_norm(ps_, name + ".ln_q", xq);
        const auto kv = cross ? ad::layer_norm(ps_, name + ".ln_kv", xkv) : q;
        auto x = ad::add(xq, ad::attention(ps_, name + ".attn", q, kv, cfg_.encoder.heads));
        const auto f = ad::linear(ps_, name + ".ff1", ad::gelu(ad::linear(ps_, name + ".ff0", ad::layer_norm(ps_, name + ".ln_ff", x))));
        return ad::add(x, f);
    }

    ShapeVaeConfig cfg_;
    ad::ParamStore<T> ps_;
};

// ---------------------------------------------------------------------------
// Differentiable iso-surface

/// Vertex positions (V, 3) of a marching-cubes surface as a function of the
/// node values. `node_values[i]` is the value at lattice node `node_ids[i]`;
/// every node referenced by an edge vertex must be present. Edge vertices
/// follow p_a + t (p_b - p_a) with t = (level - a) / (b - a); loop-centre
/// vertices are means of their loop. Topology stays fixed.
template <typename T>
ad::BasicTensor<T> iso_vertices(const ad::BasicTensor<T>& node_values, std::span<const std::uint32_t> node_ids,
                                const IsoSurface& iso, const Lattice& lat, double level) {
    if (node_values.size() != node_ids.size())
        throw ShapeError("iso_vertices: " + std::to_string(node_ids.size()) + " ids for " +
                         std::to_string(node_values.size()) + " values");
    std::unordered_map<std::uint32_t, std::uint32_t> row;
    row.reserve(node_ids.size() * 2);
    for (std::size_t i = 0; i < node_ids.size(); ++i) row.emplace(node_ids[i], static_cast<std::uint32_t>(i));
    struct EdgeRef {
        std::uint32_t ra, rb;
        Vec3 pa, pb;
    };
    const std::size_t nv = iso.sources.size();
    std::vector<EdgeRef> refs(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        const auto& s = iso.sources[v];
        if (s.centroid >= 0) continue;
        const auto ia = row.find(s.node_a), ib = row.find(s.node_b);
        if (ia == row.end() || ib == row.end()) throw ShapeError("iso_vertices: missing node value");
        refs[v] = {ia->second, ib->second, lat.position(s.node_a), lat.position(s.node_b)};
    }
    const auto& val = node_values.data();
    std::vector<T> out(nv * 3);
    for (std::size_t v = 0; v < nv; ++v) {
        const auto& s = iso.sources[v];
        if (s.centroid >= 0) {
            const auto& loop = iso.centroid_loops[static_cast<std::size_t>(s.centroid)];
            for (int a = 0; a < 3; ++a) {
                T acc = 0;
                for (auto u : loop) acc += out[u * 3 + a];
                out[v * 3 + a] = acc / static_cast<T>(loop.size());
            }
            continue;
        }
        const EdgeRef& r = refs[v];
        const double a = val[r.ra], b = val[r.rb];
        const double t = (level - a) / (b - a);
        for (int k = 0; k < 3; ++k) out[v * 3 + k] = static_cast<T>(r.pa[k] + t * (r.pb[k] - r.pa[k]));
    }
    return ad::BasicTensor<T>::make({static_cast<int>(nv), 3}, std::move(out), {node_values},
                                    [refs = std::move(refs), sources = iso.sources, loops = iso.centroid_loops,
                                     level](ad::Node<T>& self) {
        ad::Node<T>& pv = *self.parents[0];
        auto& gv = pv.ensure_grad();
        const std::size_t n = sources.size();
        // Centroids come after their loop vertices: push their gradient back first.
        std::vector<T> g(self.grad);
        for (std::size_t v = n; v-- > 0;) {
            if (sources[v].centroid < 0) continue;
            const auto& loop = loops[static_cast<std::size_t>(sources[v].centroid)];
            const T w = T(1) / static_cast<T>(loop.size());
            for (auto u : loop)
                for (int a = 0; a < 3; ++a) g[u * 3 + a] += w * g[v * 3 + a];
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (sources[v].centroid >= 0) continue;
            const EdgeRef& r = refs[v];
            const double a = pv.value[r.ra], b = pv.value[r.rb];
            const double d = b - a;
            const double dta = (level - b) / (d * d), dtb = -(level - a) / (d * d);
            double dot_g = 0;
            for (int k = 0; k < 3; ++k) dot_g += static_cast<double>(g[v * 3 + k]) * (r.pb[k] - r.pa[k]);
            gv[r.ra] += static_cast<T>(dot_g * dta);
            gv[r.rb] += static_cast<T>(dot_g * dtb);
        }
    });
}

/// Marching-cubes surface whose vertex tensor is differentiable with
/// respect to the decoder and latent.
template <typename T>
struct DiffSurface {
    IsoSurface iso;
    Lattice lattice;
    std::vector<double> grid;  // occupancy at every lattice node
    ad::BasicTensor<T> vertices;
};

/// Lattice with `resolution` nodes per axis spanning [-1,1]^3.
inline Lattice unit_lattice(int resolution) {
    return {Extent3::cube(resolution), {-1, -1, -1}, Vec3{2.0, 2.0, 2.0} / (resolution - 1)};
}

/// Differentiable vertex tensor for a fixed iso-surface: re-evaluates only
/// the nodes of crossing edges through the decoder.
template <typename T>
ad::BasicTensor<T> surface_vertices(const ShapeVae<T>& model, const ad::BasicTensor<T>& planes, const IsoSurface& iso,
                                    const Lattice& lat, double level = 0.5) {
    std::vector<std::uint32_t> ids;
    for (const auto& src : iso.sources)
        if (src.centroid < 0) {
            ids.push_back(src.node_a);
            ids.push_back(src.node_b);
        }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::vector<Vec3> nodes(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) nodes[i] = lat.position(ids[i]);
    const auto prob = ad::reshape(ad::sigmoid(model.query_logits(planes, nodes)), {static_cast<int>(ids.size())});
    return iso_vertices(prob, ids, iso, lat, level);
}

/// Queries the full lattice without a graph, runs marching cubes at `level`
/// and attaches differentiable vertex positions.
template <typename T>
DiffSurface<T> extract_surface(const ShapeVae<T>& model, const ad::BasicTensor<T>& planes, int resolution,
                               double level = 0.5) {
    if (resolution < 8) throw DomainError("extract_surface: resolution must be >= 8");
    DiffSurface<T> s;
    s.lattice = unit_lattice(resolution);
    std::vector<Vec3> pts(s.lattice.nodes.count());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = s.lattice.position(static_cast<std::uint32_t>(i));
    s.grid = model.occupancy(planes, pts);
    s.iso = marching_cubes_lattice<double>(s.lattice, s.grid, level, Inside::Above);
    s.vertices = surface_vertices(model, planes, s.iso, s.lattice, level);
    return s;
}

template <typename T>
DiffSurface<T> extract_surface(const ShapeVae<T>& model, const TriplaneLatent<T>& latent, int resolution,
                               double level = 0.5) {
    return extract_surface(model, model.decode_planes(latent), resolution, level);
}

/// Mesh of a latent at the given lattice resolution, no gradients.
template <typename T>
TriMesh decode_mesh(const ShapeVae<T>& model, const TriplaneLatent<T>& latent, int resolution, double level = 0.5) {
    ad::NoGradGuard ng;
    const auto planes = model.decode_planes(latent);
    const Lattice lat = unit_lattice(resolution);
    std::vector<Vec3> pts(lat.nodes.count());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = lat.position(static_cast<std::uint32_t>(i));
    const auto grid = model.occupancy(planes, pts);
    return marching_cubes_lattice<double>(lat, grid, level, Inside::Above).mesh;
}

// ---------------------------------------------------------------------------
// Ray-based regularization samples

struct RegulSamples {
    std::vector<Vec3> points;
    std::vector<std::size_t> ray_offsets;  // points of ray r: [ray_offsets[r], ray_offsets[r+1])
    std::size_t skipped = 0;               // rays missing the box or with an empty interval
    int samples_per_ray = 0;

    std::size_t rays() const { return ray_offsets.empty() ? 0 : ray_offsets.size() - 1; }
};

/// N_s stratified samples per ray on [t_entry, t_hit - margin], or on the
/// full box chord when the ray misses the surface. Without jitter each
/// sample sits at its stratum midpoint.
inline RegulSamples regularization_samples(std::span<const Ray> rays, const MeshBvh& surface, const Aabb& box,
                                           int samples_per_ray, double margin, std::uint64_t seed,
                                           bool jitter = true) {
    if (samples_per_ray < 1) throw DomainError("regularization_samples: need at least one sample per ray");
    RegulSamples out;
    out.samples_per_ray = samples_per_ray;
    out.ray_offsets.push_back(0);
    Rng rng(derive_seed(seed, "regul"));
    for (const Ray& ray : rays) {
        const auto span = ray_aabb(ray, box);
        if (!span || span->second <= 0) {
            ++out.skipped;
            continue;
        }
        const double t0 = std::max(0.0, span->first);
        double t1 = span->second;
        if (const auto hit = ray_mesh_first_hit(ray, surface); hit && hit->t < t1) t1 = hit->t - margin;
        if (!(t1 > t0)) {
            ++out.skipped;
            continue;
        }
        const double step = (t1 - t0) / samples_per_ray;
        for (int k = 0; k < samples_per_ray; ++k) {
            const double u = jitter ? uniform01(rng) : 0.5;
            out.points.push_back(ray.at(t0 + (k + u) * step));
        }
        out.ray_offsets.push_back(out.points.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses

/// KL(N(mean, exp(logvar)) || N(0, 1)) averaged over every latent element.
template <typename T>
ad::BasicTensor<T> kl_divergence(const TriplaneLatent<T>& lat) {
    const auto terms = ad::sub(ad::add(ad::square(lat.mean), ad::exp(lat.logvar)), ad::add_scalar(lat.logvar, T(1)));
    return ad::scale(ad::mean(terms), T(0.5));
}

/// Mean squared difference of neighbouring latent cells along both axes of
/// each plane, averaged over the three planes and two axes.
template <typename T>
ad::BasicTensor<T> total_variation(const TriplaneLatent<T>& lat) {
    const int r = lat.resolution;
    const auto tile = lat.tile_of(lat.mean);
    ad::BasicTensor<T> acc;
    for (int p = 0; p < 3; ++p) {
        const auto pl = ad::slice(tile, 1, p * r, r);
        const auto dv = ad::mean(ad::square(ad::sub(ad::slice(pl, 1, 1, r - 1), ad::slice(pl, 1, 0, r - 1))));
        const auto du = ad::mean(ad::square(ad::sub(ad::slice(pl, 2, 1, r - 1), ad::slice(pl, 2, 0, r - 1))));
        const auto s = ad::add(dv, du);
        acc = p == 0 ? s : ad::add(acc, s);
    }
    return ad::scale(acc, T(1.0 / 6.0));
}

template <typename T>
struct LossTerms {
    ad::BasicTensor<T> total;
    double bce = 0, kl = 0, tv = 0, mse = 0, reg = 0;
};

namespace vae_detail {

template <typename T>
void check_finite(const LossTerms<T>& t) {
    for (double v : {t.bce, t.kl, t.tv, t.mse, t.reg, static_cast<double>(t.total.item())})
        if (!std::isfinite(v)) throw NonFiniteLoss("loss is not finite");
}

template <typename T>
ad::BasicTensor<T> weighted(const ad::BasicTensor<T>& acc, const ad::BasicTensor<T>& term, double w) {
    return ad::add(acc, ad::scale(term, static_cast<T>(w)));
}

}  // namespace vae_detail

/// BCE + kl * KL + tv * TV.
template <typename T>
LossTerms<T> loss_coarse(const ad::BasicTensor<T>& logits, std::span<const T> labels, const TriplaneLatent<T>& lat,
                         const LossWeights& w) {
    LossTerms<T> out;
    const auto bce = ad::bce_with_logits(logits, labels);
    const auto kl = kl_divergence(lat);
    const auto tv = total_variation(lat);
    out.bce = bce.item();
    out.kl = kl.item();
    out.tv = tv.item();
    out.total = vae_detail::weighted(vae_detail::weighted(bce, kl, w.kl), tv, w.tv);
    vae_detail::check_finite(out);
    return out;
}

/// Mean squared error of rendered against target normals over the pixels
/// covered in either image (3 channels each).
template <typename T>
ad::BasicTensor<T> normal_mse(const ad::BasicTensor<T>& rendered, std::span<const double> target,
                              std::span<const std::uint8_t> rendered_mask, std::span<const std::uint8_t> target_mask) {
    const std::size_t n = rendered_mask.size();
    if (rendered.size() != n * 3 || target.size() != n * 3 || target_mask.size() != n)
        throw ShapeError("normal_mse: image sizes differ");
    std::vector<std::uint32_t> rows;
    std::vector<T> tgt;
    for (std::size_t i = 0; i < n; ++i) {
        if (!rendered_mask[i] && !target_mask[i]) continue;
        rows.push_back(static_cast<std::uint32_t>(i));
        for (int a = 0; a < 3; ++a) tgt.push_back(static_cast<T>(target[i * 3 + a]));
    }
    if (rows.empty()) return ad::BasicTensor<T>::scalar(T(0));
    const int m = static_cast<int>(rows.size());
    return ad::mse(ad::gather_rows(rendered, std::move(rows)), ad::BasicTensor<T>::from({m, 3}, std::move(tgt)));
}

/// Coarse terms + mse * normal MSE + reg * BCE(regularization logits, 0).
/// An undefined `normal_term` or `reg_logits` contributes zero.
template <typename T>
LossTerms<T> loss_refine(const ad::BasicTensor<T>& logits, std::span<const T> labels, const TriplaneLatent<T>& lat,
                         const ad::BasicTensor<T>& normal_term, const ad::BasicTensor<T>& reg_logits,
                         const LossWeights& w) {
    LossTerms<T> out = loss_coarse(logits, labels, lat, w);
    if (normal_term.defined()) {
        out.mse = normal_term.item();
        out.total = vae_detail::weighted(out.total, normal_term, w.mse);
    }
    if (reg_logits.defined() && reg_logits.size() > 0) {
        const std::vector<T> zeros(reg_logits.size(), T(0));
        const auto reg = ad::bce_with_logits(reg_logits, std::span<const T>(zeros));
        out.reg = reg.item();
        out.total = vae_detail::weighted(out.total, reg, w.reg);
    }
    vae_detail::check_finite(out);
    return out;
}

}  // namespace meshforge
