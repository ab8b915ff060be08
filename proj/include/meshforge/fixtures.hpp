#pragma once

#include <functional>
#include <string>
#include <vector>

#include "marching_cubes.hpp"
#include "mesh_ops.hpp"
#include "random.hpp"

namespace meshforge::fixtures {

/// Latitude/longitude sphere with per-corner UVs (u = longitude, v = 1 at
/// the +z pole).
inline TriMesh uv_sphere(double radius = 0.8, Vec3 center = {}, int slices = 96, int stacks = 48) {
    TriMesh m;
    m.vertices.push_back(center + Vec3{0, 0, radius});
    for (int s = 1; s < stacks; ++s) {
        const double theta = kPi * s / stacks;
        for (int i = 0; i < slices; ++i) {
            const double phi = 2 * kPi * i / slices;
            m.vertices.push_back(center + radius * Vec3{std::sin(theta) * std::cos(phi),
                                                        std::sin(theta) * std::sin(phi), std::cos(theta)});
        }
    }
    m.vertices.push_back(center + Vec3{0, 0, -radius});
    const auto north = 0u;
    const auto south = static_cast<std::uint32_t>(m.vertices.size() - 1);
    auto ring = [&](int s, int i) {
        return static_cast<std::uint32_t>(1 + (s - 1) * slices + ((i % slices) + slices) % slices);
    };
    auto uv = [&](int s, int i) { return Vec2{static_cast<double>(i) / slices, 1.0 - static_cast<double>(s) / stacks}; };
    for (int i = 0; i < slices; ++i) {
        m.faces.push_back({north, ring(1, i), ring(1, i + 1)});
        m.face_uvs.push_back({Vec2{(i + 0.5) / slices, 1.0}, uv(1, i), uv(1, i + 1)});
    }
    for (int s = 1; s + 1 < stacks; ++s)
        for (int i = 0; i < slices; ++i) {
            m.faces.push_back({ring(s, i), ring(s + 1, i), ring(s + 1, i + 1)});
            m.face_uvs.push_back({uv(s, i), uv(s + 1, i), uv(s + 1, i + 1)});
            m.faces.push_back({ring(s, i), ring(s + 1, i + 1), ring(s, i + 1)});
            m.face_uvs.push_back({uv(s, i), uv(s + 1, i + 1), uv(s, i + 1)});
        }
    for (int i = 0; i < slices; ++i) {
        m.faces.push_back({south, ring(stacks - 1, i + 1), ring(stacks - 1, i)});
        m.face_uvs.push_back({Vec2{(i + 0.5) / slices, 0.0}, uv(stacks - 1, i + 1), uv(stacks - 1, i)});
    }
    return m;
}

/// Appends a planar quad given counter-clockwise (seen from outside) corners.
inline void add_quad(TriMesh& m, Vec3 a, Vec3 b, Vec3 c, Vec3 d,
                     std::array<Vec2, 4> uv = {Vec2{0, 0}, Vec2{1, 0}, Vec2{1, 1}, Vec2{0, 1}}) {
    const auto base = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), {a, b, c, d});
    m.faces.push_back({base, base + 1, base + 2});
    m.faces.push_back({base, base + 2, base + 3});
    m.face_uvs.push_back({uv[0], uv[1], uv[2]});
    m.face_uvs.push_back({uv[0], uv[2], uv[3]});
}

/// Closed box with shared corner vertices.
inline TriMesh box(Vec3 lo = {-0.7, -0.5, -0.4}, Vec3 hi = {0.7, 0.5, 0.4}) {
    TriMesh m;
    for (int c = 0; c < 8; ++c)
        m.vertices.push_back({(c & 1) ? hi.x : lo.x, (c & 2) ? hi.y : lo.y, (c & 4) ? hi.z : lo.z});
    auto quad = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
        m.faces.push_back({a, b, c});
        m.faces.push_back({a, c, d});
    };
    quad(0, 2, 3, 1);  // -z
    quad(4, 5, 7, 6);  // +z
    quad(0, 1, 5, 4);  // -y
    quad(2, 6, 7, 3);  // +y
    quad(0, 4, 6, 2);  // -x
    quad(1, 3, 7, 5);  // +x
    return m;
}

/// Torus around +z.
inline TriMesh torus(double major = 0.6, double minor = 0.25, Vec3 center = {}, int nu = 64, int nv = 32) {
    TriMesh m;
    for (int i = 0; i < nu; ++i) {
        const double u = 2 * kPi * i / nu;
        for (int j = 0; j < nv; ++j) {
            const double v = 2 * kPi * j / nv;
            const double rr = major + minor * std::cos(v);
            m.vertices.push_back(center + Vec3{rr * std::cos(u), rr * std::sin(u), minor * std::sin(v)});
        }
    }
    auto id = [&](int i, int j) { return static_cast<std::uint32_t>((i % nu) * nv + (j % nv)); };
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return m;
}

/// Cylinder along +z; `caps = false` gives an open tube.
inline TriMesh cylinder(double radius = 0.5, double z0 = -0.7, double z1 = 0.7, bool caps = true,
                        int segments = 64, Vec3 center = {}) {
    TriMesh m;
    for (int i = 0; i < segments; ++i) {
        const double a = 2 * kPi * i / segments;
        m.vertices.push_back(center + Vec3{radius * std::cos(a), radius * std::sin(a), z0});
    }
    for (int i = 0; i < segments; ++i) {
        const double a = 2 * kPi * i / segments;
        m.vertices.push_back(center + Vec3{radius * std::cos(a), radius * std::sin(a), z1});
    }
    auto b = [&](int i) { return static_cast<std::uint32_t>(i % segments); };
    auto t = [&](int i) { return static_cast<std::uint32_t>(segments + i % segments); };
    for (int i = 0; i < segments; ++i) {
        m.faces.push_back({b(i), b(i + 1), t(i + 1)});
        m.faces.push_back({b(i), t(i + 1), t(i)});
    }
    if (caps) {
        const auto cb = static_cast<std::uint32_t>(m.vertices.size());
        m.vertices.push_back(center + Vec3{0, 0, z0});
        const auto ct = cb + 1;
        m.vertices.push_back(center + Vec3{0, 0, z1});
        for (int i = 0; i < segments; ++i) {
            m.faces.push_back({cb, b(i + 1), b(i)});
            m.faces.push_back({ct, t(i), t(i + 1)});
        }
    }
    return m;
}

/// Square sheet at z = 0 with a square hole; open boundary on both loops.
inline TriMesh holed_plane(double outer = 0.8, double inner = 0.3) {
    TriMesh m;
    const double o = outer, i = inner;
    m.vertices = {{-o, -o, 0}, {o, -o, 0}, {o, o, 0}, {-o, o, 0},
                  {-i, -i, 0}, {i, -i, 0}, {i, i, 0}, {-i, i, 0}};
    for (std::uint32_t k = 0; k < 4; ++k) {
        const std::uint32_t a = k, b = (k + 1) % 4, c = 4 + (k + 1) % 4, d = 4 + k;
        m.faces.push_back({a, b, c});
        m.faces.push_back({a, c, d});
    }
    return m;
}

inline TriMesh flipped(TriMesh m) {
    for (auto& f : m.faces) std::swap(f[1], f[2]);
    for (auto& fu : m.face_uvs) std::swap(fu[1], fu[2]);
    return m;
}

/// Two concentric closed spheres; the inner one faces inward so the pair
/// bounds a hollow solid with an enclosed void.
inline TriMesh nested_shells(double outer = 0.8, double inner = 0.45) {
    const TriMesh a = uv_sphere(outer, {}, 64, 32);
    const TriMesh b = flipped(uv_sphere(inner, {}, 48, 24));
    TriMesh m = merge_meshes({&a, &b});
    m.face_uvs.clear();
    return m;
}

/// Closed mesh of an implicit solid (inside where `sdf < 0`) sampled on an
/// n^3 node lattice over [-1,1]^3.
inline TriMesh from_sdf(const std::function<double(Vec3)>& sdf, int n = 64) {
    Lattice lat{Extent3::cube(n), {-1, -1, -1}, Vec3{2.0, 2.0, 2.0} / (n - 1)};
    std::vector<double> field(lat.nodes.count());
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) field[lat.nodes.index(i, j, k)] = -sdf(lat.position(i, j, k));
    return marching_cubes_lattice<double>(lat, field, 0.0, Inside::Above).mesh;
}

inline double sdf_sphere(Vec3 p, Vec3 c, double r) { return norm(p - c) - r; }
inline double sdf_box(Vec3 p, Vec3 c, Vec3 half) {
    const Vec3 q{std::abs(p.x - c.x) - half.x, std::abs(p.y - c.y) - half.y, std::abs(p.z - c.z) - half.z};
    const Vec3 qp = cwise_max(q, {});
    return norm(qp) + std::min(std::max({q.x, q.y, q.z}), 0.0);
}

/// Union of a sphere and a box, contoured from the exact CSG distance.
inline TriMesh csg_union(int n = 64) {
    return from_sdf(
        [](Vec3 p) {
            return std::min(sdf_sphere(p, {-0.3, 0, 0}, 0.5), sdf_box(p, {0.3, 0.0, 0.0}, {0.4, 0.35, 0.35}));
        },
        n);
}

/// Random solid built as a union of 1-3 spheres, boxes and z-axis tori.
/// Parts stay within xy-radius 0.9 and |z| <= 0.9 so the shape survives any
/// rotation about +z inside [-1,1]^3.
inline TriMesh random_shape(std::uint64_t seed, int n = 40) {
    Rng rng(seed);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    struct Part {
        int kind;
        Vec3 c;
        Vec3 s;
    };
    std::vector<Part> parts;
    const int count = 1 + static_cast<int>(uniform01(rng) * 3);
    for (int i = 0; i < count; ++i) {
        const double ang = u(0, 2 * kPi), rad = i == 0 ? u(0, 0.15) : u(0.1, 0.3);
        const Vec3 c{rad * std::cos(ang), rad * std::sin(ang), u(-0.25, 0.25)};
        const int kind = static_cast<int>(uniform01(rng) * 3);
        if (kind == 0) parts.push_back({0, c, {u(0.25, 0.5), 0, 0}});
        else if (kind == 1) parts.push_back({1, c, {u(0.15, 0.35), u(0.15, 0.35), u(0.15, 0.4)}});
        else parts.push_back({2, c, {u(0.28, 0.42), u(0.1, 0.17), 0}});
    }
    return from_sdf(
        [parts](Vec3 p) {
            double d = std::numeric_limits<double>::infinity();
            for (const auto& part : parts) {
                if (part.kind == 0) d = std::min(d, sdf_sphere(p, part.c, part.s.x));
                else if (part.kind == 1) d = std::min(d, sdf_box(p, part.c, part.s));
                else {
                    const Vec3 q = p - part.c;
                    const double ring = std::hypot(q.x, q.y) - part.s.x;
                    d = std::min(d, std::hypot(ring, q.z) - part.s.y);
                }
            }
            return d;
        },
        n);
}

/// Two disjoint spheres.
inline TriMesh two_spheres(double r = 0.35, double offset = 0.5) {
    const TriMesh a = uv_sphere(r, {-offset, 0, 0}, 48, 24);
    const TriMesh b = uv_sphere(r, {offset, 0, 0}, 48, 24);
    return merge_meshes({&a, &b});
}

/// Unit square [-1,1]^2 at z = 0 facing +z, UV covering [0,1]^2.
inline TriMesh uv_quad(double half = 1.0, double z = 0.0) {
    TriMesh m;
    add_quad(m, {-half, -half, z}, {half, -half, z}, {half, half, z}, {-half, half, z});
    return m;
}

/// Small front quad in front of a large rear quad, both facing +z with
/// disjoint UV charts (front in u < 0.5, rear in u > 0.5).
inline TriMesh two_quads(double front_half = 0.4, double front_z = 0.3, double rear_half = 0.9,
                         double rear_z = -0.3) {
    TriMesh m;
    const double f = front_half, r = rear_half;
    add_quad(m, {-f, -f, front_z}, {f, -f, front_z}, {f, f, front_z}, {-f, f, front_z},
             {Vec2{0.0, 0.0}, Vec2{0.5, 0.0}, Vec2{0.5, 1.0}, Vec2{0.0, 1.0}});
    add_quad(m, {-r, -r, rear_z}, {r, -r, rear_z}, {r, r, rear_z}, {-r, r, rear_z},
             {Vec2{0.5, 0.0}, Vec2{1.0, 0.0}, Vec2{1.0, 1.0}, Vec2{0.5, 1.0}});
    return m;
}

struct NamedMesh {
    std::string name;
    TriMesh mesh;
    bool watertight_input = true;
};

/// The procedural fixture set used by the watertight and evaluation suites.
inline std::vector<NamedMesh> standard_fixtures() {
    return {
        {"sphere", uv_sphere(0.8), true},
        {"box", box(), true},
        {"torus", torus(), true},
        {"csg_union", csg_union(), true},
        {"open_cylinder", cylinder(0.5, -0.7, 0.7, false), false},
        {"nested_shells", nested_shells(), true},
        {"holed_plane", holed_plane(), false},
    };
}

}  // namespace meshforge::fixtures
