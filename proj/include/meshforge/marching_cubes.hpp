#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "geom.hpp"

namespace meshforge {

/// Which side of the threshold counts as the solid. Triangles are oriented
/// with normals pointing out of the solid.
enum class Inside { Above, Below };

/// Where a marching-cubes vertex came from. Edge vertices sit at
/// node_a + t * (node_b - node_a) with t = (level - value_a) / (value_b - value_a).
/// Loop-centre vertices (`centroid >= 0`) are the mean of the edge vertices
/// listed in IsoSurface::centroid_loops[centroid].
struct IsoVertexSource {
    std::uint32_t node_a = 0;
    std::uint32_t node_b = 0;
    double t = 0;
    std::int32_t centroid = -1;
};

struct IsoSurface {
    TriMesh mesh;
    std::vector<IsoVertexSource> sources;  // parallel to mesh.vertices
    std::vector<std::vector<std::uint32_t>> centroid_loops;
};

/// Lattice of sample nodes: positions are origin + (i, j, k) * spacing and
/// values are stored x-fastest.
struct Lattice {
    Extent3 nodes;
    Vec3 origin;
    Vec3 spacing;

    Vec3 position(int i, int j, int k) const {
        return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
    }
    Vec3 position(std::uint32_t linear) const {
        const auto nx = static_cast<std::uint32_t>(nodes.nx);
        const auto ny = static_cast<std::uint32_t>(nodes.ny);
        return position(static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
                        static_cast<int>(linear / (nx * ny)));
    }
};

namespace mc_detail {

struct CubeTopology {
    // edge e joins corners edge_corner[e][0] -> edge_corner[e][1]
    std::array<std::array<int, 2>, 12> edge_corner{};
    // faces: 4 corners in counter-clockwise order seen from outside
    std::array<std::array<int, 4>, 6> face_corner{};
    // edge index between face corners j and j+1
    std::array<std::array<int, 4>, 6> face_edge{};
};

inline const CubeTopology& topology() {
    static const CubeTopology topo = [] {
        CubeTopology t;
        int e = 0;
        for (int axis = 0; axis < 3; ++axis)
            for (int c = 0; c < 8; ++c)
                if (!(c & (1 << axis))) t.edge_corner[e++] = {c, c | (1 << axis)};
        auto find_edge = [&](int a, int b) {
            for (int i = 0; i < 12; ++i) {
                const auto& ec = t.edge_corner[i];
                if ((ec[0] == a && ec[1] == b) || (ec[0] == b && ec[1] == a)) return i;
            }
            return -1;
        };
        int f = 0;
        for (int axis = 0; axis < 3; ++axis) {
            const int u = (axis + 1) % 3, v = (axis + 2) % 3;
            for (int side = 0; side < 2; ++side) {
                std::array<std::array<int, 2>, 4> uv = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
                if (side == 0) uv = {{{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
                for (int j = 0; j < 4; ++j)
                    t.face_corner[f][j] = (side << axis) | (uv[j][0] << u) | (uv[j][1] << v);
                for (int j = 0; j < 4; ++j)
                    t.face_edge[f][j] = find_edge(t.face_corner[f][j], t.face_corner[f][(j + 1) % 4]);
                ++f;
            }
        }
        return t;
    }();
    return topo;
}

/// True when cube edges a and b lie on a common face.
inline bool share_face(int a, int b) {
    const auto& t = topology();
    for (const auto& fe : t.face_edge) {
        bool ha = false, hb = false;
        for (int e : fe) {
            ha = ha || e == a;
            hb = hb || e == b;
        }
        if (ha && hb) return true;
    }
    return false;
}

}  // namespace mc_detail

/// Marching cubes over a node lattice. Cube polygons are traced face by face
/// with the asymptotic decider on ambiguous faces, so neighbouring cubes
/// always agree and the welded output has no cracks. Vertices are
/// deduplicated per lattice edge.
template <typename T>
IsoSurface marching_cubes_lattice(const Lattice& lat, std::span<const T> values, double level,
                                  Inside inside = Inside::Above) {
    const Extent3 n = lat.nodes;
    if (n.nx < 2 || n.ny < 2 || n.nz < 2) throw DegenerateInput("marching_cubes: need >= 2 nodes per axis");
    if (values.size() != n.count()) throw ShapeError("marching_cubes: value count does not match lattice");

    const auto& topo = mc_detail::topology();
    IsoSurface out;
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

    const std::size_t sx = 1, sy = static_cast<std::size_t>(n.nx),
                      sz = static_cast<std::size_t>(n.nx) * static_cast<std::size_t>(n.ny);
    const std::size_t corner_offset[8] = {0, sx, sy, sx + sy, sz, sx + sz, sy + sz, sx + sy + sz};
    const int axis_of_edge[12] = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};

    for (int k = 0; k + 1 < n.nz; ++k) {
        for (int j = 0; j + 1 < n.ny; ++j) {
            for (int i = 0; i + 1 < n.nx; ++i) {
                const std::size_t base = n.index(i, j, k);
                double val[8];
                bool above[8];
                int count_above = 0;
                for (int c = 0; c < 8; ++c) {
                    val[c] = static_cast<double>(values[base + corner_offset[c]]) - level;
                    above[c] = val[c] > 0;
                    count_above += above[c];
                }
                if (count_above == 0 || count_above == 8) continue;

                std::array<std::int64_t, 12> vid;
                vid.fill(-1);
                auto vertex_on_edge = [&](int e) -> std::uint32_t {
                    if (vid[e] >= 0) return static_cast<std::uint32_t>(vid[e]);
                    const int ca = topo.edge_corner[e][0], cb = topo.edge_corner[e][1];
                    const auto na = static_cast<std::uint32_t>(base + corner_offset[ca]);
                    const auto nb = static_cast<std::uint32_t>(base + corner_offset[cb]);
                    const std::uint64_t key = static_cast<std::uint64_t>(na) * 3 + axis_of_edge[e];
                    auto [it, fresh] =
                        edge_vertex.try_emplace(key, static_cast<std::uint32_t>(out.mesh.vertices.size()));
                    if (fresh) {
                        const double t = val[ca] / (val[ca] - val[cb]);
                        const Vec3 pa = lat.position(na), pb = lat.position(nb);
                        out.mesh.vertices.push_back(pa + (pb - pa) * t);
                        out.sources.push_back({na, nb, t});
                    }
                    vid[e] = it->second;
                    return it->second;
                };

                // successor of each crossing edge along the oriented boundary loop
                std::array<int, 12> next;
                next.fill(-1);
                for (int f = 0; f < 6; ++f) {
                    int pos[4];
                    bool down[4];  // crossing goes above -> below in CCW order
                    int m = 0;
                    for (int q = 0; q < 4; ++q) {
                        const int c0 = topo.face_corner[f][q], c1 = topo.face_corner[f][(q + 1) % 4];
                        if (above[c0] != above[c1]) {
                            pos[m] = q;
                            down[m] = above[c0];
                            ++m;
                        }
                    }
                    if (m == 0) continue;
                    bool connect_above = false;
                    if (m == 4) {
                        const double v0 = val[topo.face_corner[f][0]], v1 = val[topo.face_corner[f][1]];
                        const double v2 = val[topo.face_corner[f][2]], v3 = val[topo.face_corner[f][3]];
                        const double den = v0 + v2 - v1 - v3;
                        if (den != 0) connect_above = (v0 * v2 - v1 * v3) / den > 0;
                    }
                    for (int s = 0; s < m; ++s) {
                        if (down[s]) continue;
                        const int target = (m == 2) ? (s + 1) % 2 : (connect_above ? (s + 3) % 4 : (s + 1) % 4);
                        next[topo.face_edge[f][pos[s]]] = topo.face_edge[f][pos[target]];
                    }
                }

                std::array<bool, 12> seen{};
                for (int e0 = 0; e0 < 12; ++e0) {
                    if (next[e0] < 0 || seen[e0]) continue;
                    std::array<std::uint32_t, 12> loop;
                    std::array<int, 12> loop_edge;
                    int len = 0;
                    int e = e0;
                    while (!seen[e]) {
                        seen[e] = true;
                        loop_edge[len] = e;
                        loop[len++] = vertex_on_edge(e);
                        e = next[e];
                    }
                    auto emit = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c) {
                        if (inside == Inside::Above)
                            out.mesh.faces.push_back({a, b, c});
                        else
                            out.mesh.faces.push_back({a, c, b});
                    };
                    // Fan from a root whose diagonals never join two vertices
                    // on a common cube face; such an edge could coincide with
                    // a diagonal of the neighbouring cube.
                    int root = -1;
                    for (int r = 0; r < len && root < 0; ++r) {
                        bool ok = true;
                        for (int q = 2; q + 1 < len && ok; ++q)
                            ok = !mc_detail::share_face(loop_edge[r], loop_edge[(r + q) % len]);
                        if (ok) root = r;
                    }
                    if (root >= 0) {
                        for (int q = 1; q + 1 < len; ++q)
                            emit(loop[root], loop[(root + q) % len], loop[(root + q + 1) % len]);
                        continue;
                    }
                    const auto centre = static_cast<std::uint32_t>(out.mesh.vertices.size());
                    Vec3 c{};
                    for (int q = 0; q < len; ++q) c += out.mesh.vertices[loop[q]];
                    out.mesh.vertices.push_back(c / len);
                    IsoVertexSource src;
                    src.centroid = static_cast<std::int32_t>(out.centroid_loops.size());
                    out.sources.push_back(src);
                    out.centroid_loops.emplace_back(loop.begin(), loop.begin() + len);
                    for (int q = 0; q < len; ++q) emit(centre, loop[q], loop[(q + 1) % len]);
                }
            }
        }
    }
    if (out.mesh.faces.empty()) throw EmptySurface("marching_cubes: level is not crossed anywhere");
    return out;
}

}  // namespace meshforge
