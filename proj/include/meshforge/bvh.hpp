#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "geom.hpp"

namespace meshforge {

/// Closest point on triangle `t` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
inline Vec3 closest_point_on_triangle(Vec3 p, const std::array<Vec3, 3>& t) {
    const Vec3 a = t[0], b = t[1], c = t[2];
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0 && d2 <= 0) return a;
    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
    const Vec3 cp = p - c;
    const double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double point_triangle_distance2(Vec3 p, const std::array<Vec3, 3>& t) {
    return norm2(p - closest_point_on_triangle(p, t));
}

/// Bounding-volume hierarchy over a mesh's triangles with median splits on
/// the longest centroid axis. Immutable after construction; queries are
/// const and thread-safe. The mesh must outlive the hierarchy.
class MeshBvh {
public:
    struct Node {
        Aabb box;
        std::uint32_t first = 0;  // leaf: first index into order(); inner: right child
        std::uint32_t count = 0;  // 0 for inner nodes (left child is this + 1)
        bool leaf() const { return count > 0; }
    };

    struct Nearest {
        double distance2 = std::numeric_limits<double>::infinity();
        std::uint32_t face = 0;
        Vec3 point;
    };

    static constexpr std::uint32_t kLeafSize = 4;

    explicit MeshBvh(const TriMesh& mesh) : mesh_(&mesh) {
        const auto nf = mesh.faces.size();
        order_.resize(nf);
        std::iota(order_.begin(), order_.end(), 0u);
        centroids_.resize(nf);
        face_boxes_.resize(nf);
        for (std::size_t f = 0; f < nf; ++f) {
            const auto t = mesh.triangle(f);
            centroids_[f] = (t[0] + t[1] + t[2]) / 3.0;
            Aabb b;
            for (auto v : t) b.expand(v);
            face_boxes_[f] = b;
        }
        if (nf > 0) {
            nodes_.reserve(2 * nf / kLeafSize + 1);
            build(0, static_cast<std::uint32_t>(nf));
        }
    }

    const TriMesh& mesh() const { return *mesh_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<std::uint32_t>& order() const { return order_; }

    /// Nearest positive-t hit; ties in t resolve to the lower face index.
    std::optional<RayHit> first_hit(const Ray& ray,
                                    double t_max = std::numeric_limits<double>::infinity()) const {
        if (nodes_.empty()) return std::nullopt;
        std::optional<RayHit> best;
        double best_t = t_max;
        std::uint32_t stack[128];
        int sp = 0;
        stack[sp++] = 0;
        while (sp > 0) {
            const Node& node = nodes_[stack[--sp]];
            const auto span = ray_aabb(ray, node.box);
            if (!span || span->first > best_t) continue;
            if (node.leaf()) {
                for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
                    const std::uint32_t f = order_[i];
                    auto hit = intersect_triangle(ray, mesh_->triangle(f), 0.0,
                                                  std::nextafter(best_t, INFINITY));
                    if (!hit) continue;
                    if (!best || hit->t < best->t || (hit->t == best->t && f < best->face)) {
                        hit->face = f;
                        best = hit;
                        best_t = hit->t;
                    }
                }
            } else {
                const std::uint32_t self = static_cast<std::uint32_t>(&node - nodes_.data());
                stack[sp++] = node.first;
                stack[sp++] = self + 1;
            }
        }
        return best;
    }

    /// Exact closest triangle to `p`. `bound2` is an optional upper bound on
    /// the squared answer used for pruning; pass a value known to be no
    /// smaller than the true minimum (or infinity). With `strict`, nothing
    /// beyond the bound is searched and an empty result keeps face = kNone.
    static constexpr std::uint32_t kNone = 0xffffffffu;
    Nearest nearest(Vec3 p, double bound2 = std::numeric_limits<double>::infinity(), bool strict = false) const {
        Nearest best;
        best.distance2 = bound2;
        bool found = false;
        if (nodes_.empty()) return best;
        std::uint32_t stack[128];
        int sp = 0;
        stack[sp++] = 0;
        while (sp > 0) {
            const Node& node = nodes_[stack[--sp]];
            if (node.box.distance2(p) > best.distance2) continue;
            if (node.leaf()) {
                for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
                    const std::uint32_t f = order_[i];
                    if (face_boxes_[f].distance2(p) > best.distance2) continue;
                    const auto tri = mesh_->triangle(f);
                    const Vec3 q = closest_point_on_triangle(p, tri);
                    const double d2 = norm2(p - q);
                    if (d2 < best.distance2 || (!found && d2 <= best.distance2) ||
                        (d2 == best.distance2 && f < best.face)) {
                        best = {d2, f, q};
                        found = true;
                    }
                }
            } else {
                const std::uint32_t self = static_cast<std::uint32_t>(&node - nodes_.data());
                const std::uint32_t l = self + 1, r = node.first;
                const double dl = nodes_[l].box.distance2(p);
                const double dr = nodes_[r].box.distance2(p);
                if (dl < dr) {
                    stack[sp++] = r;
                    stack[sp++] = l;
                } else {
                    stack[sp++] = l;
                    stack[sp++] = r;
                }
            }
        }
        if (!found) {
            if (strict) return {bound2, kNone, {}};
            // bound was too tight; fall back to an unbounded search
            if (bound2 < std::numeric_limits<double>::infinity()) return nearest(p);
        }
        return best;
    }

private:
    std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
        const auto idx = static_cast<std::uint32_t>(nodes_.size());
        nodes_.emplace_back();
        Aabb box, cbox;
        for (std::uint32_t i = begin; i < end; ++i) {
            box.expand(face_boxes_[order_[i]]);
            cbox.expand(centroids_[order_[i]]);
        }
        nodes_[idx].box = box;
        const std::uint32_t n = end - begin;
        const Vec3 ext = cbox.extent();
        if (n <= kLeafSize || std::max({ext.x, ext.y, ext.z}) <= 0) {
            nodes_[idx].first = begin;
            nodes_[idx].count = n;
            return idx;
        }
        int axis = 0;
        if (ext.y > ext[axis]) axis = 1;
        if (ext.z > ext[axis]) axis = 2;
        const std::uint32_t mid = begin + n / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        build(begin, mid);
        const std::uint32_t right = build(mid, end);
        nodes_[idx].first = right;
        nodes_[idx].count = 0;
        return idx;
    }

    const TriMesh* mesh_;
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> order_;
    std::vector<Vec3> centroids_;
    std::vector<Aabb> face_boxes_;
};

/// Nearest positive-t intersection of `ray` with `mesh` via a hierarchy.
inline std::optional<RayHit> ray_mesh_first_hit(const Ray& ray, const MeshBvh& bvh) {
    return bvh.first_hit(ray);
}

}  // namespace meshforge
