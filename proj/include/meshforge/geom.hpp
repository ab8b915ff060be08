#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "random.hpp"

namespace meshforge {

using Face = std::array<std::uint32_t, 3>;

/// Indexed triangle mesh. `face_uvs` holds one UV per face corner and is
/// either empty or parallel to `faces`; `normals` is either empty or
/// parallel to `vertices`.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<std::array<Vec2, 3>> face_uvs;
    std::vector<Vec3> normals;

    bool has_uvs() const { return !face_uvs.empty(); }
    bool has_normals() const { return !normals.empty(); }
    bool empty() const { return faces.empty(); }

    std::array<Vec3, 3> triangle(std::size_t f) const {
        const Face& t = faces[f];
        return {vertices[t[0]], vertices[t[1]], vertices[t[2]]};
    }

    /// Throws DegenerateInput describing the first broken invariant.
    void validate() const {
        const auto nv = vertices.size();
        for (std::size_t f = 0; f < faces.size(); ++f) {
            const Face& t = faces[f];
            for (auto idx : t) {
                if (idx >= nv)
                    throw DegenerateInput("face " + std::to_string(f) + " index out of range");
            }
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw DegenerateInput("face " + std::to_string(f) + " repeats a vertex");
        }
        if (!face_uvs.empty() && face_uvs.size() != faces.size())
            throw DegenerateInput("face_uvs not parallel to faces");
        if (!normals.empty()) {
            if (normals.size() != nv) throw DegenerateInput("normals not parallel to vertices");
            for (auto n : normals)
                if (std::abs(norm(n) - 1.0) > 1e-6) throw DegenerateInput("non-unit vertex normal");
        }
    }
};

struct Aabb {
    Vec3 min{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
    Vec3 max{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity()};

    static Aabb cube(double half) { return {{-half, -half, -half}, {half, half, half}}; }

    bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
    void expand(Vec3 p) {
        min = cwise_min(min, p);
        max = cwise_max(max, p);
    }
    void expand(const Aabb& b) {
        min = cwise_min(min, b.min);
        max = cwise_max(max, b.max);
    }
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
    double diagonal() const { return norm(max - min); }
    bool contains(Vec3 p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }
    /// Squared distance from `p` to the box (0 inside).
    double distance2(Vec3 p) const {
        double d = 0;
        for (int a = 0; a < 3; ++a) {
            const double v = p[a] < min[a] ? min[a] - p[a] : (p[a] > max[a] ? p[a] - max[a] : 0.0);
            d += v * v;
        }
        return d;
    }
};

inline Aabb bounds(std::span<const Vec3> pts) {
    Aabb b;
    for (auto p : pts) b.expand(p);
    return b;
}

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit length

    static Ray through(Vec3 origin, Vec3 dir) { return {origin, normalized(dir)}; }
    Vec3 at(double t) const { return origin + direction * t; }
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // empty or parallel to points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

inline Vec3 face_normal(const std::array<Vec3, 3>& t) {
    return normalized(cross(t[1] - t[0], t[2] - t[0]));
}

inline double triangle_area(const std::array<Vec3, 3>& t) {
    return 0.5 * norm(cross(t[1] - t[0], t[2] - t[0]));
}

inline double surface_area(const TriMesh& mesh) {
    double a = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) a += triangle_area(mesh.triangle(f));
    return a;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizedMesh {
    TriMesh mesh;
    double scale = 1;  // original = normalized * scale + center
    Vec3 center;

    Vec3 to_original(Vec3 p) const { return p * scale + center; }
    Vec3 to_normalized(Vec3 p) const { return (p - center) / scale; }
};

/// Uniformly rescales about the bounding-box center so the longest axis
/// spans exactly [-1, 1].
inline NormalizedMesh normalize_mesh(const TriMesh& mesh) {
    if (mesh.vertices.empty() || mesh.faces.empty())
        throw DegenerateInput("normalize_mesh: mesh has no faces");
    const Aabb box = bounds(mesh.vertices);
    const Vec3 ext = box.extent();
    const double longest = std::max({ext.x, ext.y, ext.z});
    if (!(longest > 0)) throw DegenerateInput("normalize_mesh: zero extent on all axes");
    if (!(surface_area(mesh) > 0)) throw DegenerateInput("normalize_mesh: zero surface area");

    NormalizedMesh out;
    out.center = box.center();
    out.scale = longest * 0.5;
    out.mesh = mesh;
    for (auto& v : out.mesh.vertices) v = (v - out.center) / out.scale;
    return out;
}

// ---------------------------------------------------------------------------
// Surface sampling

struct SurfaceSamples {
    PointCloud cloud;
    std::vector<std::uint32_t> face_ids;
};

/// Area-weighted uniform sampling with per-point face normals.
inline SurfaceSamples sample_surface_with_faces(const TriMesh& mesh, std::size_t n,
                                                std::uint64_t seed) {
    std::vector<double> cdf(mesh.faces.size());
    double total = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        total += triangle_area(mesh.triangle(f));
        cdf[f] = total;
    }
    if (!(total > 0)) throw DegenerateInput("sample_surface: zero surface area");

    Rng rng(seed);
    SurfaceSamples out;
    out.cloud.points.reserve(n);
    out.cloud.normals.reserve(n);
    out.face_ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = uniform01(rng) * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
        auto f = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
            it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
        const auto tri = mesh.triangle(f);
        const double s = std::sqrt(uniform01(rng));
        const double t = uniform01(rng);
        const double b0 = 1.0 - s, b1 = s * (1.0 - t), b2 = s * t;
        out.cloud.points.push_back(tri[0] * b0 + tri[1] * b1 + tri[2] * b2);
        out.cloud.normals.push_back(face_normal(tri));
        out.face_ids.push_back(static_cast<std::uint32_t>(f));
    }
    return out;
}

inline PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
    return sample_surface_with_faces(mesh, n, seed).cloud;
}

// ---------------------------------------------------------------------------
// Ray queries

/// Slab test. A ray starting inside the box reports t_near = 0.
inline std::optional<std::pair<double, double>> ray_aabb(const Ray& ray, const Aabb& box) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a];
        const double d = ray.direction[a];
        if (d == 0.0) {
            if (o < box.min[a] || o > box.max[a]) return std::nullopt;
            continue;
        }
        double ta = (box.min[a] - o) / d;
        double tb = (box.max[a] - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

struct RayHit {
    double t = 0;
    std::uint32_t face = 0;
    Vec2 barycentric;  // weights of the face's second and third vertex
};

/// Watertight ray/triangle intersection (shear-based edge functions), double
/// sided. Rays through a shared edge hit both incident triangles, never
/// neither.
inline std::optional<RayHit> intersect_triangle(const Ray& ray, const std::array<Vec3, 3>& tri,
                                                double t_min = 0.0,
                                                double t_max = std::numeric_limits<double>::infinity()) {
    const Vec3 d = ray.direction;
    int kz = 0;
    if (std::abs(d.y) > std::abs(d[kz])) kz = 1;
    if (std::abs(d.z) > std::abs(d[kz])) kz = 2;
    int kx = (kz + 1) % 3;
    int ky = (kx + 1) % 3;
    if (d[kz] < 0) std::swap(kx, ky);
    const double sx = d[kx] / d[kz];
    const double sy = d[ky] / d[kz];
    const double sz = 1.0 / d[kz];

    const Vec3 a = tri[0] - ray.origin;
    const Vec3 b = tri[1] - ray.origin;
    const Vec3 c = tri[2] - ray.origin;
    const double ax = a[kx] - sx * a[kz], ay = a[ky] - sy * a[kz];
    const double bx = b[kx] - sx * b[kz], by = b[ky] - sy * b[kz];
    const double cx = c[kx] - sx * c[kz], cy = c[ky] - sy * c[kz];

    long double u = static_cast<long double>(cx) * by - static_cast<long double>(cy) * bx;
    long double v = static_cast<long double>(ax) * cy - static_cast<long double>(ay) * cx;
    long double w = static_cast<long double>(bx) * ay - static_cast<long double>(by) * ax;

    if ((u < 0 || v < 0 || w < 0) && (u > 0 || v > 0 || w > 0)) return std::nullopt;
    const long double det = u + v + w;
    if (det == 0) return std::nullopt;

    const long double az = sz * a[kz], bz = sz * b[kz], cz = sz * c[kz];
    const long double tn = u * az + v * bz + w * cz;
    const double t = static_cast<double>(tn / det);
    if (!(t > t_min) || !(t < t_max)) return std::nullopt;
    RayHit hit;
    hit.t = t;
    hit.barycentric = {static_cast<double>(v / det), static_cast<double>(w / det)};
    return hit;
}

// ---------------------------------------------------------------------------
// Azimuth alignment (up-axis +z, right-handed)

inline Vec3 rotate_z(Vec3 p, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

/// Rotates the cloud about +z by -view_azimuth.
inline PointCloud align_azimuth(const PointCloud& cloud, double view_azimuth) {
    PointCloud out;
    out.points.reserve(cloud.points.size());
    for (auto p : cloud.points) out.points.push_back(rotate_z(p, -view_azimuth));
    out.normals.reserve(cloud.normals.size());
    for (auto n : cloud.normals) out.normals.push_back(rotate_z(n, -view_azimuth));
    return out;
}

inline TriMesh rotate_mesh_z(const TriMesh& mesh, double angle) {
    TriMesh out = mesh;
    for (auto& v : out.vertices) v = rotate_z(v, angle);
    for (auto& n : out.normals) n = rotate_z(n, angle);
    return out;
}

inline TriMesh transform_mesh(const TriMesh& mesh, double scale, Vec3 offset) {
    TriMesh out = mesh;
    for (auto& v : out.vertices) v = v * scale + offset;
    return out;
}

}  // namespace meshforge
