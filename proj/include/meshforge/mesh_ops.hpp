#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "geom.hpp"

namespace meshforge {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0u); }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) std::swap(a, b);
        parent_[a] = b;
    }

private:
    std::vector<std::uint32_t> parent_;
};

inline std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

/// Number of faces incident to every undirected edge.
inline std::unordered_map<std::uint64_t, int> edge_face_counts(const TriMesh& mesh) {
    std::unordered_map<std::uint64_t, int> counts;
    counts.reserve(mesh.faces.size() * 2);
    for (const auto& f : mesh.faces)
        for (int j = 0; j < 3; ++j) ++counts[edge_key(f[j], f[(j + 1) % 3])];
    return counts;
}

struct TopologyReport {
    std::size_t vertices = 0;  // referenced by at least one face
    std::size_t edges = 0;
    std::size_t faces = 0;
    std::size_t boundary_edges = 0;     // one incident face
    std::size_t nonmanifold_edges = 0;  // three or more incident faces
    std::size_t components = 0;

    bool closed_manifold() const { return faces > 0 && boundary_edges == 0 && nonmanifold_edges == 0; }
    long long euler() const {
        return static_cast<long long>(vertices) - static_cast<long long>(edges) +
               static_cast<long long>(faces);
    }
};

/// Connected components of faces joined through shared vertices. Returns the
/// component id per face; ids are dense from 0 in order of first face.
inline std::vector<std::uint32_t> face_components(const TriMesh& mesh, std::size_t* count = nullptr) {
    DisjointSets ds(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        ds.unite(f[0], f[1]);
        ds.unite(f[1], f[2]);
    }
    std::unordered_map<std::uint32_t, std::uint32_t> ids;
    std::vector<std::uint32_t> out(mesh.faces.size());
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto root = ds.find(mesh.faces[i][0]);
        auto it = ids.try_emplace(root, static_cast<std::uint32_t>(ids.size())).first;
        out[i] = it->second;
    }
    if (count) *count = ids.size();
    return out;
}

inline std::size_t count_components(const TriMesh& mesh) {
    std::size_t n = 0;
    face_components(mesh, &n);
    return n;
}

inline TopologyReport analyze_topology(const TriMesh& mesh) {
    TopologyReport r;
    r.faces = mesh.faces.size();
    std::vector<char> used(mesh.vertices.size(), 0);
    for (const auto& f : mesh.faces)
        for (auto v : f) used[v] = 1;
    r.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
    for (const auto& [key, n] : edge_face_counts(mesh)) {
        ++r.edges;
        if (n == 1) ++r.boundary_edges;
        if (n > 2) ++r.nonmanifold_edges;
    }
    r.components = count_components(mesh);
    return r;
}

inline bool is_closed_manifold(const TriMesh& mesh) { return analyze_topology(mesh).closed_manifold(); }

/// Enclosed volume by the divergence theorem (positive for outward faces).
inline double signed_volume(const TriMesh& mesh) {
    double v = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto t = mesh.triangle(f);
        v += dot(t[0], cross(t[1], t[2]));
    }
    return v / 6.0;
}

/// Merges vertices with bit-identical positions; face UVs are kept.
inline TriMesh weld_exact(const TriMesh& mesh) {
    struct Hash {
        std::size_t operator()(const Vec3& p) const {
            auto h = std::hash<double>{};
            return h(p.x) ^ (h(p.y) * 31) ^ (h(p.z) * 131);
        }
    };
    std::unordered_map<Vec3, std::uint32_t, Hash> ids;
    std::vector<std::uint32_t> remap(mesh.vertices.size());
    TriMesh out;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        auto [it, fresh] = ids.try_emplace(mesh.vertices[i], static_cast<std::uint32_t>(out.vertices.size()));
        if (fresh) out.vertices.push_back(mesh.vertices[i]);
        remap[i] = it->second;
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        Face t{remap[mesh.faces[f][0]], remap[mesh.faces[f][1]], remap[mesh.faces[f][2]]};
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        out.faces.push_back(t);
        if (mesh.has_uvs()) out.face_uvs.push_back(mesh.face_uvs[f]);
    }
    return out;
}

/// Concatenates meshes, offsetting indices.
inline TriMesh merge_meshes(std::initializer_list<const TriMesh*> parts) {
    TriMesh out;
    bool uvs = true;
    for (auto* p : parts) uvs = uvs && p->has_uvs();
    for (auto* p : parts) {
        const auto base = static_cast<std::uint32_t>(out.vertices.size());
        out.vertices.insert(out.vertices.end(), p->vertices.begin(), p->vertices.end());
        for (auto f : p->faces) out.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
        if (uvs) out.face_uvs.insert(out.face_uvs.end(), p->face_uvs.begin(), p->face_uvs.end());
    }
    return out;
}

/// Area-weighted per-vertex normals from face geometry.
inline std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
    std::vector<Vec3> n(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto t = mesh.triangle(f);
        const Vec3 a = cross(t[1] - t[0], t[2] - t[0]);
        for (auto v : mesh.faces[f]) n[v] += a;
    }
    for (auto& v : n) {
        v = normalized(v);
        if (norm2(v) == 0) v = {0, 0, 1};
    }
    return n;
}

}  // namespace meshforge
