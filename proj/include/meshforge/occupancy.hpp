#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

#include "bvh.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "watertight.hpp"

namespace meshforge {

/// Points with binary occupancy labels.
struct LabeledPoints {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return points.size(); }
    double occupied_fraction() const {
        if (labels.empty()) return 0.0;
        std::size_t n = 0;
        for (auto l : labels) n += l;
        return static_cast<double>(n) / static_cast<double>(labels.size());
    }
};

/// Generalised winding number of a closed triangle mesh, evaluated with a
/// hierarchy: far clusters use their dipole approximation, near leaves are
/// summed exactly. Points within `surface_tolerance` of a
/// triangle count as inside.
class WindingNumber {
public:
    explicit WindingNumber(const TriMesh& mesh, double beta = 3.0, double surface_tolerance = 1e-9)
        : mesh_(&mesh), bvh_(mesh), beta_(beta), tol2_(surface_tolerance * surface_tolerance) {
        if (mesh.faces.empty()) throw DegenerateInput("winding number: empty mesh");
        const auto& nodes = bvh_.nodes();
        stats_.resize(nodes.size());
        for (std::size_t n = nodes.size(); n-- > 0;) {
            const auto& node = nodes[n];
            Stat s;
            if (node.leaf()) {
                double area = 0;
                Vec3 weighted{};
                for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
                    const auto t = mesh.triangle(bvh_.order()[i]);
                    const Vec3 an = cross(t[1] - t[0], t[2] - t[0]) * 0.5;
                    const double a = norm(an);
                    s.area_normal += an;
                    weighted += (t[0] + t[1] + t[2]) * (a / 3.0);
                    area += a;
                }
                s.area = area;
                s.center = area > 0 ? weighted / area : node.box.center();
            } else {
                const Stat& l = stats_[n + 1];
                const Stat& r = stats_[node.first];
                s.area = l.area + r.area;
                s.area_normal = l.area_normal + r.area_normal;
                s.center = s.area > 0 ? (l.center * l.area + r.center * r.area) / s.area : node.box.center();
            }
            const Vec3 c = s.center;
            const Vec3 far{std::max(std::abs(node.box.min.x - c.x), std::abs(node.box.max.x - c.x)),
                           std::max(std::abs(node.box.min.y - c.y), std::abs(node.box.max.y - c.y)),
                           std::max(std::abs(node.box.min.z - c.z), std::abs(node.box.max.z - c.z))};
            s.radius = norm(far);
            stats_[n] = s;
        }
    }

    /// Winding number (1 inside, 0 outside for a closed outward-facing mesh).
    double operator()(Vec3 q) const {
        const auto& nodes = bvh_.nodes();
        double omega = 0;
        std::uint32_t stack[128];
        int sp = 0;
        stack[sp++] = 0;
        while (sp > 0) {
            const std::uint32_t n = stack[--sp];
            const auto& node = nodes[n];
            const Stat& s = stats_[n];
            const Vec3 d = s.center - q;
            const double dist = norm(d);
            if (dist > beta_ * s.radius) {
                omega += dot(s.area_normal, d) / (dist * dist * dist);
                continue;
            }
            if (node.leaf()) {
                for (std::uint32_t i = node.first; i < node.first + node.count; ++i)
                    omega += solid_angle(mesh_->triangle(bvh_.order()[i]), q);
            } else {
                stack[sp++] = node.first;
                stack[sp++] = n + 1;
            }
        }
        return omega / (4 * kPi);
    }

    bool inside(Vec3 q) const {
        if (bvh_.nearest(q, tol2_, true).face != MeshBvh::kNone) return true;
        return (*this)(q) >= 0.5;
    }

    static double solid_angle(const std::array<Vec3, 3>& t, Vec3 q) {
        const Vec3 a = t[0] - q, b = t[1] - q, c = t[2] - q;
        const double la = norm(a), lb = norm(b), lc = norm(c);
        const double num = dot(a, cross(b, c));
        const double den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
        return 2.0 * std::atan2(num, den);
    }

private:
    struct Stat {
        Vec3 area_normal{};
        Vec3 center{};
        double area = 0;
        double radius = 0;
    };
    const TriMesh* mesh_;
    MeshBvh bvh_;
    double beta_;
    double tol2_;
    std::vector<Stat> stats_;
};

inline std::uint8_t point_in_mesh(Vec3 p, const TriMesh& mesh) {
    return WindingNumber(mesh).inside(p) ? 1 : 0;
}

inline std::vector<std::uint8_t> label_points(const WindingNumber& wn, std::span<const Vec3> pts) {
    std::vector<std::uint8_t> out(pts.size());
    parallel_for(pts.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = wn.inside(pts[i]) ? 1 : 0;
    }, 256);
    return out;
}

inline Vec3 clamp_unit(Vec3 p) {
    return {std::clamp(p.x, -1.0, 1.0), std::clamp(p.y, -1.0, 1.0), std::clamp(p.z, -1.0, 1.0)};
}

/// Surface samples displaced by isotropic Gaussian noise, clamped to [-1,1]^3.
inline LabeledPoints sample_near_surface(const TriMesh& mesh, std::size_t n, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0)) throw DomainError("sample_near_surface: sigma must be >= 0");
    const PointCloud base = sample_surface(mesh, n, derive_seed(seed, "surface"));
    Rng rng(derive_seed(seed, "noise"));
    LabeledPoints out;
    out.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = standard_normal(rng), dy = standard_normal(rng), dz = standard_normal(rng);
        out.points[i] = clamp_unit(base.points[i] + Vec3{dx, dy, dz} * sigma);
    }
    out.labels = label_points(WindingNumber(mesh), out.points);
    return out;
}

/// One uniform point in each cell of a cells^3 partition of [-1,1]^3.
inline LabeledPoints sample_stratified_grid(const TriMesh& mesh, int cells, std::uint64_t seed) {
    if (cells < 1) throw DomainError("sample_stratified_grid: cells_per_axis must be >= 1");
    Rng rng(seed);
    const double h = 2.0 / cells;
    LabeledPoints out;
    out.points.reserve(static_cast<std::size_t>(cells) * cells * cells);
    for (int k = 0; k < cells; ++k)
        for (int j = 0; j < cells; ++j)
            for (int i = 0; i < cells; ++i) {
                const double u = uniform01(rng), v = uniform01(rng), w = uniform01(rng);
                out.points.push_back({-1 + (i + u) * h, -1 + (j + v) * h, -1 + (k + w) * h});
            }
    out.labels = label_points(WindingNumber(mesh), out.points);
    return out;
}

struct FourierEncoding {
    int bands = 8;
    bool include_input = true;

    std::size_t width() const { return 3 * ((include_input ? 1 : 0) + 2 * static_cast<std::size_t>(bands)); }
};

/// Row-major features: [x y z] then, for k = 0..L-1,
/// [sin(2^k pi x) sin(.. y) sin(.. z) cos(2^k pi x) cos(.. y) cos(.. z)].
inline std::vector<double> fourier_encode(std::span<const Vec3> points, const FourierEncoding& enc) {
    if (enc.bands < 1) throw DomainError("fourier_encode: bands must be >= 1");
    const std::size_t w = enc.width();
    std::vector<double> out(points.size() * w);
    for (std::size_t p = 0; p < points.size(); ++p) {
        double* row = out.data() + p * w;
        const Vec3 x = points[p];
        if (enc.include_input) {
            *row++ = x.x;
            *row++ = x.y;
            *row++ = x.z;
        }
        for (int k = 0; k < enc.bands; ++k) {
            const double f = std::ldexp(kPi, k);
            for (int a = 0; a < 3; ++a) row[a] = std::sin(f * x[a]);
            for (int a = 0; a < 3; ++a) row[3 + a] = std::cos(f * x[a]);
            row += 6;
        }
    }
    return out;
}

struct SampleSetConfig {
    std::size_t surface_points = 65536;
    std::size_t near_points = 100000;
    double sigma = 0.01;
    int grid_cells = 64;
    FourierEncoding encoding;
};

struct OccupancySampleSet {
    PointCloud surface;
    LabeledPoints near;
    LabeledPoints grid;
    double sigma = 0.01;
    FourierEncoding encoding;
    std::uint64_t seed = 0;
};

inline OccupancySampleSet build_sample_set(const TriMesh& mesh, const SampleSetConfig& cfg, std::uint64_t seed) {
    OccupancySampleSet s;
    s.surface = sample_surface(mesh, cfg.surface_points, derive_seed(seed, "surface"));
    s.near = sample_near_surface(mesh, cfg.near_points, cfg.sigma, derive_seed(seed, "near"));
    s.grid = sample_stratified_grid(mesh, cfg.grid_cells, derive_seed(seed, "grid"));
    s.sigma = cfg.sigma;
    s.encoding = cfg.encoding;
    s.seed = seed;
    return s;
}

// ---------------------------------------------------------------------------
// Binary format "MGOS", version 1. See docs/formats.md.

inline void write_sample_set(std::ostream& out, const OccupancySampleSet& s) {
    using namespace io_detail;
    out.write("MGOS", 4);
    put_u32(out, 1);
    put_u64(out, s.surface.points.size());
    put_u64(out, s.near.size());
    put_u64(out, s.grid.size());
    put_f64(out, s.sigma);
    put_u32(out, static_cast<std::uint32_t>(s.encoding.bands));
    put_u32(out, s.encoding.include_input ? 1u : 0u);
    put_f64(out, kPi);  // frequency base: 2^k * base
    put_u64(out, s.seed);
    const bool normals = s.surface.normals.size() == s.surface.points.size() && !s.surface.points.empty();
    put_u32(out, normals ? 1u : 0u);
    auto put_vec = [&](Vec3 v) {
        put_f32(out, static_cast<float>(v.x));
        put_f32(out, static_cast<float>(v.y));
        put_f32(out, static_cast<float>(v.z));
    };
    for (auto p : s.surface.points) put_vec(p);
    if (normals)
        for (auto n : s.surface.normals) put_vec(n);
    for (const LabeledPoints* lp : {&s.near, &s.grid}) {
        for (auto p : lp->points) put_vec(p);
        out.write(reinterpret_cast<const char*>(lp->labels.data()), static_cast<std::streamsize>(lp->labels.size()));
    }
}

inline OccupancySampleSet read_sample_set(std::istream& in) {
    using namespace io_detail;
    expect_magic(in, "MGOS");
    if (get_u32(in) != 1) throw FormatError("MGOS: unsupported version");
    OccupancySampleSet s;
    const std::uint64_t ns = get_u64(in), nn = get_u64(in), ng = get_u64(in);
    constexpr std::uint64_t kMax = 1ull << 32;
    if (ns > kMax || nn > kMax || ng > kMax) throw FormatError("MGOS: implausible counts");
    s.sigma = get_f64(in);
    s.encoding.bands = static_cast<int>(get_u32(in));
    s.encoding.include_input = get_u32(in) != 0;
    if (get_f64(in) != kPi) throw FormatError("MGOS: unsupported frequency base");
    s.seed = get_u64(in);
    const bool normals = get_u32(in) != 0;
    auto get_vec = [&] {
        const double x = get_f32(in), y = get_f32(in), z = get_f32(in);
        const Vec3 v{x, y, z};
        if (!is_finite(v)) throw FormatError("MGOS: non-finite coordinate");
        return v;
    };
    s.surface.points.resize(ns);
    for (auto& p : s.surface.points) p = get_vec();
    if (normals) {
        s.surface.normals.resize(ns);
        for (auto& n : s.surface.normals) n = get_vec();
    }
    for (auto [lp, count] : {std::pair{&s.near, nn}, std::pair{&s.grid, ng}}) {
        lp->points.resize(count);
        for (auto& p : lp->points) p = get_vec();
        lp->labels.resize(count);
        if (!in.read(reinterpret_cast<char*>(lp->labels.data()), static_cast<std::streamsize>(count)))
            throw FormatError("MGOS: truncated labels");
        for (auto l : lp->labels)
            if (l > 1) throw FormatError("MGOS: label not in {0,1}");
    }
    return s;
}

}  // namespace meshforge
