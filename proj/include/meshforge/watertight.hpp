#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "bvh.hpp"
#include "marching_cubes.hpp"
#include "parallel.hpp"

namespace meshforge {

/// Dense cell-centred scalar field over an axis-aligned domain, x-fastest.
struct ScalarGrid {
    Extent3 resolution;
    Aabb domain;
    std::vector<float> values;

    ScalarGrid() = default;
    ScalarGrid(Extent3 res, Aabb dom, float fill = 0.0f)
        : resolution(res), domain(dom), values(res.count(), fill) {}

    Vec3 spacing() const {
        const Vec3 e = domain.extent();
        return {e.x / resolution.nx, e.y / resolution.ny, e.z / resolution.nz};
    }
    Vec3 cell_center(int i, int j, int k) const {
        const Vec3 h = spacing();
        return {domain.min.x + (i + 0.5) * h.x, domain.min.y + (j + 0.5) * h.y,
                domain.min.z + (k + 0.5) * h.z};
    }
    float& at(int i, int j, int k) { return values[resolution.index(i, j, k)]; }
    float at(int i, int j, int k) const { return values[resolution.index(i, j, k)]; }

    /// Cell centres as a marching-cubes lattice.
    Lattice lattice() const { return {resolution, cell_center(0, 0, 0), spacing()}; }
};

/// Connected components of the empty cells. Label 0 is the region reachable
/// from the domain boundary; 1..cavities are enclosed voids. Solid cells
/// carry kSolid.
struct LabelGrid {
    static constexpr std::uint32_t kSolid = 0xffffffffu;
    Extent3 resolution;
    std::vector<std::uint32_t> labels;
    std::uint32_t cavities = 0;
    bool has_outside = false;
};

/// Exact unsigned distance from every cell centre to the nearest triangle.
/// Values beyond `clamp` are stored as `clamp`.
inline ScalarGrid udf_grid(const TriMesh& mesh, Extent3 resolution, const Aabb& domain,
                           double clamp = std::numeric_limits<double>::infinity()) {
    if (mesh.faces.empty()) throw DegenerateInput("udf_grid: empty mesh");
    if (resolution.nx < 1 || resolution.ny < 1 || resolution.nz < 1)
        throw DegenerateInput("udf_grid: resolution must be positive");
    ScalarGrid grid(resolution, domain);
    const MeshBvh bvh(mesh);
    const Vec3 h = grid.spacing();
    const auto slabs = static_cast<std::size_t>(resolution.nz);
    parallel_for(slabs, [&](std::size_t kb, std::size_t ke) {
        for (auto k = static_cast<int>(kb); k < static_cast<int>(ke); ++k) {
            for (int j = 0; j < resolution.ny; ++j) {
                std::int64_t prev_face = -1;
                for (int i = 0; i < resolution.nx; ++i) {
                    const Vec3 p = grid.cell_center(i, j, k);
                    // distance to the previous cell's nearest face is a valid upper bound
                    double bound2 = clamp * clamp;
                    if (prev_face >= 0)
                        bound2 = std::min(bound2, point_triangle_distance2(
                                                      p, mesh.triangle(static_cast<std::uint32_t>(prev_face))) *
                                                          (1.0 + 1e-12) + 1e-300);
                    const auto nearest = bvh.nearest(p, bound2, true);
                    if (nearest.face == MeshBvh::kNone) {
                        grid.at(i, j, k) = static_cast<float>(clamp);
                        prev_face = -1;
                        continue;
                    }
                    grid.at(i, j, k) = static_cast<float>(std::min(std::sqrt(nearest.distance2), clamp));
                    prev_face = nearest.face;
                }
            }
        }
    }, 1);
    return grid;
}

/// 6-connected labelling of cells with value > threshold.
inline LabelGrid label_empty_components(const ScalarGrid& grid, double threshold) {
    const Extent3 r = grid.resolution;
    LabelGrid out;
    out.resolution = r;
    out.labels.assign(r.count(), LabelGrid::kSolid);
    constexpr std::uint32_t kUnvisited = 0xfffffffeu;
    for (std::size_t c = 0; c < r.count(); ++c)
        if (grid.values[c] > threshold) out.labels[c] = kUnvisited;

    std::vector<std::uint32_t> queue;
    auto flood = [&](std::vector<std::uint32_t> seeds, std::uint32_t label) {
        queue = std::move(seeds);
        for (auto s : queue) out.labels[s] = label;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::uint32_t c = queue[head];
            const int i = static_cast<int>(c % static_cast<std::uint32_t>(r.nx));
            const int j = static_cast<int>((c / static_cast<std::uint32_t>(r.nx)) % static_cast<std::uint32_t>(r.ny));
            const int k = static_cast<int>(c / (static_cast<std::uint32_t>(r.nx) * static_cast<std::uint32_t>(r.ny)));
            const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k},
                                  {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= r.nx || q[1] >= r.ny || q[2] >= r.nz) continue;
                const auto n = static_cast<std::uint32_t>(r.index(q[0], q[1], q[2]));
                if (out.labels[n] != kUnvisited) continue;
                out.labels[n] = label;
                queue.push_back(n);
            }
        }
    };

    std::vector<std::uint32_t> boundary;
    for (int k = 0; k < r.nz; ++k)
        for (int j = 0; j < r.ny; ++j)
            for (int i = 0; i < r.nx; ++i) {
                const bool on_boundary = i == 0 || j == 0 || k == 0 || i == r.nx - 1 ||
                                         j == r.ny - 1 || k == r.nz - 1;
                const auto c = static_cast<std::uint32_t>(r.index(i, j, k));
                if (on_boundary && out.labels[c] == kUnvisited) boundary.push_back(c);
            }
    out.has_outside = !boundary.empty();
    if (out.has_outside) flood(std::move(boundary), 0);

    std::uint32_t next = 1;
    for (std::size_t c = 0; c < r.count(); ++c)
        if (out.labels[c] == kUnvisited) flood({static_cast<std::uint32_t>(c)}, next++);
    out.cavities = next - 1;
    return out;
}

/// Marks every empty cell (value > threshold) not reachable from the domain
/// boundary as solid by setting it to 0.
inline ScalarGrid fill_internal_cavities(const ScalarGrid& grid, double threshold) {
    const LabelGrid labels = label_empty_components(grid, threshold);
    ScalarGrid out = grid;
    if (!labels.has_outside) return out;
    for (std::size_t c = 0; c < out.values.size(); ++c)
        if (labels.labels[c] != LabelGrid::kSolid && labels.labels[c] != 0) out.values[c] = 0.0f;
    return out;
}

/// Iso-surface of a cell-centred grid; vertices lie on the lattice edges
/// joining cell centres.
inline TriMesh marching_cubes(const ScalarGrid& grid, double threshold, Inside inside = Inside::Above) {
    return marching_cubes_lattice<float>(grid.lattice(), grid.values, threshold, inside).mesh;
}

struct WatertightOptions {
    int padding_cells = 3;  // empty margin around [-1,1]^3 so the shell never touches the domain edge
};

/// Unsigned distance field, cavity fill and marching cubes, all at threshold
/// 2/resolution over [-1,1]^3 (padded).
inline TriMesh watertight_convert(const TriMesh& mesh, int resolution, WatertightOptions opt = {}) {
    if (resolution < 2) throw DegenerateInput("watertight_convert: resolution must be >= 2");
    const double h = 2.0 / resolution;
    const double half = 1.0 + opt.padding_cells * h;
    const int cells = resolution + 2 * opt.padding_cells;
    const double threshold = 2.0 / resolution;
    // only values within a cell or so of the threshold reach the contour
    const ScalarGrid udf = udf_grid(mesh, Extent3::cube(cells), Aabb::cube(half), threshold + 3 * h);
    const ScalarGrid filled = fill_internal_cavities(udf, threshold);
    return marching_cubes(filled, threshold, Inside::Below);
}

// ---------------------------------------------------------------------------
// Binary format: "MGSG", u32 nx, ny, nz, then nx*ny*nz little-endian f32.

namespace io_detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32(std::ostream& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
}
inline float get_f32(std::istream& in) {
    const std::uint32_t u = get_u32(in);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}
inline void put_f64(std::ostream& out, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    put_u32(out, static_cast<std::uint32_t>(u));
    put_u32(out, static_cast<std::uint32_t>(u >> 32));
}
inline double get_f64(std::istream& in) {
    const std::uint64_t lo = get_u32(in);
    const std::uint64_t hi = get_u32(in);
    const std::uint64_t u = lo | (hi << 32);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}
inline std::uint64_t get_u64(std::istream& in) {
    const std::uint64_t lo = get_u32(in);
    const std::uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}
inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char m[4];
    if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0)
        throw FormatError(std::string("bad magic, expected ") + magic);
}
}  // namespace io_detail

inline void write_scalar_grid(std::ostream& out, const ScalarGrid& grid) {
    out.write("MGSG", 4);
    io_detail::put_u32(out, static_cast<std::uint32_t>(grid.resolution.nx));
    io_detail::put_u32(out, static_cast<std::uint32_t>(grid.resolution.ny));
    io_detail::put_u32(out, static_cast<std::uint32_t>(grid.resolution.nz));
    for (float v : grid.values) io_detail::put_f32(out, v);
}

/// The format does not carry the domain; callers supply it.
inline ScalarGrid read_scalar_grid(std::istream& in, const Aabb& domain = Aabb::cube(1.0)) {
    io_detail::expect_magic(in, "MGSG");
    Extent3 r;
    r.nx = static_cast<int>(io_detail::get_u32(in));
    r.ny = static_cast<int>(io_detail::get_u32(in));
    r.nz = static_cast<int>(io_detail::get_u32(in));
    ScalarGrid grid(r, domain);
    for (auto& v : grid.values) {
        v = io_detail::get_f32(in);
        if (!std::isfinite(v)) throw FormatError("MGSG: non-finite value");
    }
    return grid;
}

}  // namespace meshforge
