#pragma once

// Brute-force reference implementations used only by the test suites.

#include <meshforge/bvh.hpp>
#include <meshforge/geom.hpp>

#include <boost/math/distributions/chi_squared.hpp>

namespace meshforge::oracle {

/// Exhaustive nearest hit over every triangle; ties resolve to the lower face.
inline std::optional<RayHit> first_hit(const Ray& ray, const TriMesh& mesh) {
    std::optional<RayHit> best;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        auto hit = intersect_triangle(ray, mesh.triangle(f));
        if (!hit) continue;
        if (!best || hit->t < best->t) {
            hit->face = static_cast<std::uint32_t>(f);
            best = hit;
        }
    }
    return best;
}

inline int count_hits(const Ray& ray, const TriMesh& mesh) {
    int n = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        if (intersect_triangle(ray, mesh.triangle(f))) ++n;
    return n;
}

inline double min_distance(Vec3 p, const TriMesh& mesh) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        best = std::min(best, point_triangle_distance2(p, mesh.triangle(f)));
    return std::sqrt(best);
}

/// Parity of crossings along a fixed irrational direction.
inline bool inside_by_parity(Vec3 p, const TriMesh& mesh) {
    const Ray ray = Ray::through(p, {0.5772156649, 0.3183098862, 0.7548776662});
    return count_hits(ray, mesh) % 2 == 1;
}

/// Upper-tail p-value of a Pearson chi-square statistic.
inline double chi_square_p(std::span<const double> observed, std::span<const double> expected) {
    double stat = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double d = observed[i] - expected[i];
        stat += d * d / expected[i];
    }
    const boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace meshforge::oracle
