#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "geom.hpp"
#include "mesh_ops.hpp"
#include "occupancy.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace meshforge {

/// Static kd-tree over a point set. Queries are exact.
class KdTree {
public:
    explicit KdTree(std::span<const Vec3> points) : pts_(points.begin(), points.end()) {
        if (pts_.empty()) throw DegenerateInput("kd-tree: empty point set");
        idx_.resize(pts_.size());
        std::iota(idx_.begin(), idx_.end(), 0u);
        axis_.assign(pts_.size(), 0);
        build(0, idx_.size());
    }

    std::size_t size() const { return pts_.size(); }

    /// Squared distance to the nearest point and its index.
    std::pair<double, std::uint32_t> nearest(Vec3 q) const {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        search(q, 0, idx_.size(), best, arg);
        return {best, arg};
    }

private:
    void build(std::size_t lo, std::size_t hi) {
        if (hi - lo <= 1) return;
        Aabb box;
        for (std::size_t i = lo; i < hi; ++i) box.expand(pts_[idx_[i]]);
        const Vec3 e = box.extent();
        const int axis = e.x >= e.y && e.x >= e.z ? 0 : (e.y >= e.z ? 1 : 2);
        const std::size_t mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo),
                         idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                         idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](std::uint32_t a, std::uint32_t b) { return pts_[a][axis] < pts_[b][axis]; });
        axis_[mid] = static_cast<std::uint8_t>(axis);
        build(lo, mid);
        build(mid + 1, hi);
    }

    void search(Vec3 q, std::size_t lo, std::size_t hi, double& best, std::uint32_t& arg) const {
        if (lo >= hi) return;
        const std::size_t mid = (lo + hi) / 2;
        const std::uint32_t id = idx_[mid];
        const double d2 = norm2(pts_[id] - q);
        if (d2 < best || (d2 == best && id < arg)) {
            best = d2;
            arg = id;
        }
        if (hi - lo == 1) return;
        const int axis = axis_[mid];
        const double diff = q[axis] - pts_[id][axis];
        const bool left_first = diff < 0;
        if (left_first) search(q, lo, mid, best, arg);
        else search(q, mid + 1, hi, best, arg);
        if (diff * diff <= best) {
            if (left_first) search(q, mid + 1, hi, best, arg);
            else search(q, lo, mid, best, arg);
        }
    }

    std::vector<Vec3> pts_;
    std::vector<std::uint32_t> idx_;
    std::vector<std::uint8_t> axis_;
};

/// Distance from every point of `from` to its nearest neighbour in `to`.
inline std::vector<double> nearest_distances(std::span<const Vec3> from, const KdTree& to) {
    std::vector<double> out(from.size());
    parallel_for(from.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = std::sqrt(to.nearest(from[i]).first);
    });
    return out;
}

namespace detail {
inline void require_points(std::span<const Vec3> a, std::span<const Vec3> b, const char* what) {
    if (a.empty() || b.empty()) throw DegenerateInput(std::string(what) + ": empty point cloud");
}
inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}
inline double fraction_within(const std::vector<double>& d, double threshold) {
    std::size_t n = 0;
    for (double x : d) n += x <= threshold ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(d.size());
}
inline double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }
}  // namespace detail

/// Unsquared L2 Chamfer distance: the mean nearest-neighbour distance in
/// each direction, averaged over the two directions.
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
    detail::require_points(a, b, "chamfer");
    const KdTree ta(a), tb(b);
    return 0.5 * (detail::mean(nearest_distances(a, tb)) + detail::mean(nearest_distances(b, ta)));
}
inline double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer(a.points, b.points); }

struct FScore {
    double precision = 0;
    double recall = 0;
    double fscore = 0;
};

/// Precision is the fraction of `a` within `threshold` of `b`, recall the
/// converse. Distances equal to the threshold count as matched.
inline FScore fscore_detail(std::span<const Vec3> a, std::span<const Vec3> b, double threshold) {
    detail::require_points(a, b, "fscore");
    if (!(threshold > 0)) throw DegenerateInput("fscore: threshold must be positive");
    const KdTree ta(a), tb(b);
    FScore f;
    f.precision = detail::fraction_within(nearest_distances(a, tb), threshold);
    f.recall = detail::fraction_within(nearest_distances(b, ta), threshold);
    f.fscore = detail::harmonic(f.precision, f.recall);
    return f;
}
inline double fscore(std::span<const Vec3> a, std::span<const Vec3> b, double threshold) {
    return fscore_detail(a, b, threshold).fscore;
}
inline double fscore(const PointCloud& a, const PointCloud& b, double threshold) {
    return fscore(a.points, b.points, threshold);
}

/// Region sampled by `volume_iou`: the [-1,1]^3 domain grown to cover both
/// meshes.
inline Aabb volume_domain(const TriMesh& a, const TriMesh& b) {
    Aabb box = Aabb::cube(1.0);
    box.expand(bounds(a.vertices));
    box.expand(bounds(b.vertices));
    return box;
}

/// Stratified samples: the box is cut into k^3 cells with k = ceil(cbrt(n)),
/// cells are visited in x-fastest order and each yields one jittered point
/// until n points exist.
inline std::vector<Vec3> stratified_samples(const Aabb& box, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw DomainError("stratified_samples: zero samples");
    std::size_t k = static_cast<std::size_t>(std::cbrt(static_cast<double>(n)));
    while (k * k * k < n) ++k;
    const Vec3 cell = box.extent() / static_cast<double>(k);
    Rng rng(seed);
    std::vector<Vec3> out;
    out.reserve(n);
    for (std::size_t z = 0; z < k && out.size() < n; ++z)
        for (std::size_t y = 0; y < k && out.size() < n; ++y)
            for (std::size_t x = 0; x < k && out.size() < n; ++x) {
                const double ux = uniform01(rng), uy = uniform01(rng), uz = uniform01(rng);
                out.push_back({box.min.x + (static_cast<double>(x) + ux) * cell.x,
                               box.min.y + (static_cast<double>(y) + uy) * cell.y,
                               box.min.z + (static_cast<double>(z) + uz) * cell.z});
            }
    return out;
}

struct VolumeIou {
    double iou = 0;
    double standard_error = 0;
    std::size_t samples = 0;
    std::size_t intersection = 0;
    std::size_t union_count = 0;
};

/// IoU of two occupancy masks given per-sample inside flags. The standard
/// error treats intersection hits among union hits as binomial.
inline VolumeIou iou_from_masks(std::span<const std::uint8_t> in_a, std::span<const std::uint8_t> in_b) {
    if (in_a.size() != in_b.size()) throw ShapeError("iou_from_masks: length mismatch");
    VolumeIou r;
    r.samples = in_a.size();
    for (std::size_t i = 0; i < in_a.size(); ++i) {
        r.intersection += (in_a[i] && in_b[i]) ? 1 : 0;
        r.union_count += (in_a[i] || in_b[i]) ? 1 : 0;
    }
    if (r.union_count == 0) {
        r.iou = 1.0;  // both empty
        return r;
    }
    const double u = static_cast<double>(r.union_count);
    r.iou = static_cast<double>(r.intersection) / u;
    r.standard_error = std::sqrt(r.iou * (1 - r.iou) / u);
    return r;
}

inline std::vector<std::uint8_t> inside_flags(const TriMesh& mesh, std::span<const Vec3> pts) {
    const WindingNumber wn(mesh);
    std::vector<std::uint8_t> flags(pts.size());
    parallel_for(pts.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) flags[i] = wn.inside(pts[i]) ? 1 : 0;
    }, 4096);
    return flags;
}

/// Monte-Carlo volume IoU with stratified samples over `volume_domain`.
inline VolumeIou volume_iou_detail(const TriMesh& a, const TriMesh& b, std::size_t samples,
                                   std::uint64_t seed) {
    if (!is_closed_manifold(a) || !is_closed_manifold(b))
        throw NotWatertight("volume_iou: both meshes must be closed edge-manifold");
    const auto pts = stratified_samples(volume_domain(a, b), samples, seed);
    const auto fa = inside_flags(a, pts);
    const auto fb = &a == &b ? fa : inside_flags(b, pts);
    return iou_from_masks(fa, fb);
}
inline double volume_iou(const TriMesh& a, const TriMesh& b, std::size_t samples, std::uint64_t seed) {
    return volume_iou_detail(a, b, samples, seed).iou;
}

/// Fraction of samples where (p >= cutoff) agrees with the binary label.
inline double occupancy_accuracy(std::span<const double> predicted, std::span<const std::uint8_t> labels,
                                 double cutoff = 0.5) {
    if (predicted.size() != labels.size()) throw ShapeError("occupancy_accuracy: length mismatch");
    if (predicted.empty()) throw DegenerateInput("occupancy_accuracy: no samples");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        hit += ((predicted[i] >= cutoff) == (labels[i] != 0)) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

struct MetricConfig {
    std::size_t surface_samples = 10000;
    double fscore_threshold = 0.2;
    std::size_t volume_samples = 100000;
    std::uint64_t seed = 0;
};

struct MetricReport {
    double chamfer = 0;
    double fscore = 0;
    double precision = 0;
    double recall = 0;
    double volume_iou = std::numeric_limits<double>::quiet_NaN();  // NaN when a mesh is open
    double volume_iou_se = std::numeric_limits<double>::quiet_NaN();
    double occupancy_acc = std::numeric_limits<double>::quiet_NaN();
    MetricConfig config;

    nlohmann::json to_json() const {
        auto opt = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        return {{"chamfer", chamfer},
                {"chamfer_kind", "l2_unsquared"},
                {"fscore", fscore},
                {"precision", precision},
                {"recall", recall},
                {"fscore_threshold", config.fscore_threshold},
                {"volume_iou", opt(volume_iou)},
                {"volume_iou_standard_error", opt(volume_iou_se)},
                {"occupancy_acc", opt(occupancy_acc)},
                {"surface_samples", config.surface_samples},
                {"volume_samples", config.volume_samples},
                {"seed", config.seed}};
    }
};

/// Surface metrics from `surface_samples` points per mesh, volume IoU when
/// both meshes are closed.
inline MetricReport evaluate_meshes(const TriMesh& pred, const TriMesh& gt, const MetricConfig& cfg = {}) {
    MetricReport r;
    r.config = cfg;
    const auto pa = sample_surface(pred, cfg.surface_samples, derive_seed(cfg.seed, "surface"));
    const auto pb = sample_surface(gt, cfg.surface_samples, derive_seed(cfg.seed, "surface"));
    r.chamfer = chamfer(pa, pb);
    const auto f = fscore_detail(pa.points, pb.points, cfg.fscore_threshold);
    r.precision = f.precision;
    r.recall = f.recall;
    r.fscore = f.fscore;
    if (is_closed_manifold(pred) && is_closed_manifold(gt)) {
        const auto v = volume_iou_detail(pred, gt, cfg.volume_samples, derive_seed(cfg.seed, "volume"));
        r.volume_iou = v.iou;
        r.volume_iou_se = v.standard_error;
    }
    return r;
}

}  // namespace meshforge
