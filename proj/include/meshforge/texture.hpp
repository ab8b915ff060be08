#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "geom.hpp"
#include "image_io.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "renderer.hpp"

namespace meshforge {

/// Texel (i, j) has its centre at u = (i + 0.5) / W, v = 1 - (j + 0.5) / H,
/// so row 0 is the top of the texture (v = 1).
inline Vec2 texel_uv(int i, int j, int width, int height) {
    return {(i + 0.5) / width, 1.0 - (j + 0.5) / height};
}

struct Candidate {
    Vec3 color{};
    double weight = 0;
    bool valid = false;
};

/// UV-space workspace. Per-texel vectors are row-major with W * H entries;
/// `candidates[v][t]` is view v's candidate for texel t.
struct UvAtlas {
    int width = 0;
    int height = 0;
    std::vector<Vec3> position;          // NaN outside charts
    std::vector<Vec3> normal;            // NaN outside charts
    std::vector<std::uint8_t> chart;     // 1 inside some UV triangle
    std::vector<std::int32_t> face;      // -1 outside charts
    std::vector<std::int32_t> island;    // UV island of `face`, -1 outside charts
    std::vector<std::vector<Candidate>> candidates;
    std::vector<Vec3> color;             // fused colour, valid where `visible`
    std::vector<std::uint8_t> visible;   // at least one valid candidate

    std::size_t texels() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * width + i; }
};

namespace detail {
inline Vec3 nan3() {
    const double n = std::numeric_limits<double>::quiet_NaN();
    return {n, n, n};
}
}  // namespace detail

/// Groups faces into UV islands: faces sharing a mesh edge whose two
/// corners carry identical UVs on both sides.
inline std::vector<std::int32_t> uv_islands(const TriMesh& mesh, std::int32_t* count = nullptr) {
    if (!mesh.has_uvs()) throw MissingUVs("uv_islands: mesh has no UV coordinates");
    const std::size_t nf = mesh.faces.size();
    std::vector<std::size_t> parent(nf);
    for (std::size_t f = 0; f < nf; ++f) parent[f] = f;
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    struct Side {
        std::size_t face;
        Vec2 ua, ub;  // UVs at the lower and higher vertex index
    };
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<Side>> edges;
    for (std::size_t f = 0; f < nf; ++f)
        for (int k = 0; k < 3; ++k) {
            std::uint32_t a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
            Vec2 ua = mesh.face_uvs[f][k], ub = mesh.face_uvs[f][(k + 1) % 3];
            if (a > b) {
                std::swap(a, b);
                std::swap(ua, ub);
            }
            edges[{a, b}].push_back({f, ua, ub});
        }
    for (const auto& [key, sides] : edges)
        for (std::size_t i = 1; i < sides.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (sides[i].ua == sides[j].ua && sides[i].ub == sides[j].ub)
                    parent[find(sides[i].face)] = find(sides[j].face);
    std::vector<std::int32_t> id(nf, -1);
    std::map<std::size_t, std::int32_t> relabel;
    for (std::size_t f = 0; f < nf; ++f) {
        const auto r = find(f);
        auto it = relabel.find(r);
        if (it == relabel.end()) it = relabel.emplace(r, static_cast<std::int32_t>(relabel.size())).first;
        id[f] = it->second;
    }
    if (count) *count = static_cast<std::int32_t>(relabel.size());
    return id;
}

/// Rasterizes every face into UV space and stores the interpolated surface
/// point and the face normal at each covered texel centre. A texel centre on
/// a shared UV edge belongs to the lowest-numbered face.
inline UvAtlas bake_uv_geometry(const TriMesh& mesh, int width, int height) {
    if (!mesh.has_uvs()) throw MissingUVs("bake_uv_geometry: mesh has no UV coordinates");
    if (width < 1 || height < 1) throw DomainError("bake_uv_geometry: resolution must be positive");
    UvAtlas a;
    a.width = width;
    a.height = height;
    const std::size_t n = a.texels();
    a.position.assign(n, detail::nan3());
    a.normal.assign(n, detail::nan3());
    a.chart.assign(n, 0);
    a.face.assign(n, -1);
    a.island.assign(n, -1);
    const auto islands = uv_islands(mesh);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& uv = mesh.face_uvs[f];
        const auto tri = mesh.triangle(f);
        const double det = (uv[1].x - uv[0].x) * (uv[2].y - uv[0].y) - (uv[2].x - uv[0].x) * (uv[1].y - uv[0].y);
        if (std::abs(det) < 1e-300) continue;
        const Vec3 nf = face_normal(tri);
        const double umin = std::min({uv[0].x, uv[1].x, uv[2].x}), umax = std::max({uv[0].x, uv[1].x, uv[2].x});
        const double vmin = std::min({uv[0].y, uv[1].y, uv[2].y}), vmax = std::max({uv[0].y, uv[1].y, uv[2].y});
        const int i0 = std::max(0, static_cast<int>(std::floor(umin * width - 0.5)));
        const int i1 = std::min(width - 1, static_cast<int>(std::ceil(umax * width - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor((1 - vmax) * height - 0.5)));
        const int j1 = std::min(height - 1, static_cast<int>(std::ceil((1 - vmin) * height - 0.5)));
        const double eps = 1e-12;
        for (int j = j0; j <= j1; ++j)
            for (int i = i0; i <= i1; ++i) {
                const std::size_t t = a.index(i, j);
                if (a.chart[t]) continue;
                const Vec2 p = texel_uv(i, j, width, height);
                const double b1 = ((p.x - uv[0].x) * (uv[2].y - uv[0].y) - (uv[2].x - uv[0].x) * (p.y - uv[0].y)) / det;
                const double b2 = ((uv[1].x - uv[0].x) * (p.y - uv[0].y) - (p.x - uv[0].x) * (uv[1].y - uv[0].y)) / det;
                const double b0 = 1 - b1 - b2;
                if (b0 < -eps || b1 < -eps || b2 < -eps) continue;
                a.chart[t] = 1;
                a.face[t] = static_cast<std::int32_t>(f);
                a.island[t] = islands[f];
                a.position[t] = tri[0] * b0 + tri[1] * b1 + tri[2] * b2;
                a.normal[t] = nf;
            }
    }
    return a;
}

/// Colour image plus z-depth map (+inf on background) for one camera.
struct View {
    Camera camera;
    Image color;
    std::vector<double> depth;
};

/// Renders a view whose colour at each covered pixel is `shade(face,
/// position)`; the background is black.
inline View render_view(const TriMesh& mesh, const Camera& cam,
                        const std::function<Vec3(std::int32_t, Vec3)>& shade) {
    const GBuffer g = rasterize(mesh, cam);
    View v;
    v.camera = cam;
    v.color = Image(cam.width, cam.height, 3);
    v.depth = g.depth;
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        const Vec3 c = shade(g.face[i], g.position[i]);
        for (int k = 0; k < 3; ++k) v.color.data[i * 3 + static_cast<std::size_t>(k)] = static_cast<float>(c[k]);
    }
    return v;
}

/// 1 where the pixel lies on a depth jump: some 8-neighbour inside the image
/// differs by more than `threshold` or is background. Background pixels are
/// excluded as well.
inline std::vector<std::uint8_t> depth_discontinuity_mask(std::span<const double> depth, int width, int height,
                                                         double threshold) {
    if (!(threshold > 0)) throw DomainError("depth_discontinuity_mask: threshold must be positive");
    if (depth.size() != static_cast<std::size_t>(width) * height) throw ShapeError("depth map size mismatch");
    std::vector<std::uint8_t> out(depth.size(), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            const double d = depth[i];
            if (!std::isfinite(d)) {
                out[i] = 1;
                continue;
            }
            for (int dy = -1; dy <= 1 && !out[i]; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                    const double e = depth[static_cast<std::size_t>(ny) * width + nx];
                    if (!std::isfinite(e) || std::abs(e - d) > threshold) {
                        out[i] = 1;
                        break;
                    }
                }
        }
    return out;
}

/// World-space size of one pixel at the camera's target distance.
inline double pixel_footprint(const Camera& cam) {
    if (cam.orthographic) return 2 * cam.ortho_half_height / cam.height;
    return 2 * cam.distance() * std::tan(cam.fov_y / 2) / cam.height;
}

/// Bilinear sample between pixel centres, clamped at the border.
inline Vec3 sample_bilinear(const Image& img, double px, double py) {
    const double fx = std::clamp(px - 0.5, 0.0, static_cast<double>(img.width - 1));
    const double fy = std::clamp(py - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double tx = fx - x0, ty = fy - y0;
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        const double top = (1 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
        const double bot = (1 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
        out[c] = (1 - ty) * top + ty * bot;
    }
    return out;
}

struct GatherConfig {
    double depth_bias = -1;            // <= 0: twice the view's pixel footprint
    double discontinuity_threshold = -1;  // <= 0: 0.05 x bounding-box diagonal of the baked surface
    bool filter_discontinuities = true;
    double min_weight = 1e-3;          // weaker candidates are dropped
};

/// Projects every chart texel into every view. A candidate is valid when
/// it lands inside the image, in front of the camera, on a covered pixel
/// whose depth agrees within the bias, that pixel is not on a depth jump,
/// and the facing weight max(0, n.v) reaches `min_weight`.
inline void gather_candidates(UvAtlas& atlas, std::span<const View> views, const GatherConfig& cfg = {}) {
    if (views.empty()) throw DomainError("gather_candidates: no views");
    Aabb box;
    for (std::size_t t = 0; t < atlas.texels(); ++t)
        if (atlas.chart[t]) box.expand(atlas.position[t]);
    const double disc = cfg.discontinuity_threshold > 0 ? cfg.discontinuity_threshold
                                                         : (box.valid() ? 0.05 * box.diagonal() : 1.0);
    atlas.candidates.assign(views.size(), std::vector<Candidate>(atlas.texels()));
    for (std::size_t v = 0; v < views.size(); ++v) {
        const View& view = views[v];
        const Camera& cam = view.camera;
        if (view.color.width != cam.width || view.color.height != cam.height || view.color.channels != 3 ||
            view.depth.size() != static_cast<std::size_t>(cam.width) * cam.height)
            throw ShapeError("gather_candidates: view images do not match the camera");
        const double bias = cfg.depth_bias > 0 ? cfg.depth_bias : 2 * pixel_footprint(cam);
        std::vector<std::uint8_t> jump;
        if (cfg.filter_discontinuities) jump = depth_discontinuity_mask(view.depth, cam.width, cam.height, disc);
        auto& out = atlas.candidates[v];
        parallel_for(atlas.texels(), [&](std::size_t b, std::size_t e) {
            for (std::size_t t = b; t < e; ++t) {
                if (!atlas.chart[t]) continue;
                const Vec3 p = atlas.position[t];
                const auto pr = cam.project(p);
                if (!(pr.depth > 0) || pr.px < 0 || pr.py < 0 || pr.px >= cam.width || pr.py >= cam.height) continue;
                const int x = static_cast<int>(pr.px), y = static_cast<int>(pr.py);
                const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
                const double d = view.depth[pix];
                if (!std::isfinite(d) || std::abs(pr.depth - d) > bias) continue;
                if (!jump.empty() && jump[pix]) continue;
                const Vec3 to_cam = cam.orthographic ? cam.basis().forward * -1.0 : normalized(cam.position - p);
                const double w = std::max(0.0, dot(atlas.normal[t], to_cam));
                if (w < cfg.min_weight) continue;
                out[t] = {sample_bilinear(view.color, pr.px, pr.py), w, true};
            }
        }, 256);
    }
}

/// Softmax over valid candidates of weight / temperature. Texels with no
/// valid candidate stay invisible with colour zero.
inline void fuse(UvAtlas& atlas, double temperature = 0.1) {
    if (!(temperature > 0)) throw DomainError("fuse: temperature must be positive");
    atlas.color.assign(atlas.texels(), Vec3{});
    atlas.visible.assign(atlas.texels(), 0);
    for (std::size_t t = 0; t < atlas.texels(); ++t) {
        double wmax = -std::numeric_limits<double>::infinity();
        for (const auto& view : atlas.candidates)
            if (view[t].valid) wmax = std::max(wmax, view[t].weight);
        if (!std::isfinite(wmax)) continue;
        double z = 0;
        Vec3 c{};
        for (const auto& view : atlas.candidates) {
            if (!view[t].valid) continue;
            const double e = std::exp((view[t].weight - wmax) / temperature);
            z += e;
            c += view[t].color * e;
        }
        atlas.color[t] = c / z;
        atlas.visible[t] = 1;
    }
}

// ---------------------------------------------------------------------------
// Masks

struct Offset {
    int dx, dy;
    friend bool operator==(Offset, Offset) = default;
};

/// Integer offsets with dx^2 + dy^2 <= r^2.
inline std::vector<Offset> disc_element(double radius) {
    if (radius < 0) throw DomainError("disc_element: negative radius");
    std::vector<Offset> out;
    const int r = static_cast<int>(std::floor(radius));
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= radius * radius) out.push_back({dx, dy});
    return out;
}

inline std::vector<Offset> minkowski_sum(std::span<const Offset> a, std::span<const Offset> b) {
    std::vector<Offset> out;
    for (auto p : a)
        for (auto q : b) {
            const Offset s{p.dx + q.dx, p.dy + q.dy};
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        }
    return out;
}

/// Erosion by an arbitrary structuring element; pixels outside the image
/// count as 0.
inline std::vector<std::uint8_t> erode_with(std::span<const std::uint8_t> mask, int width, int height,
                                           std::span<const Offset> element) {
    if (mask.size() != static_cast<std::size_t>(width) * height) throw ShapeError("erode: mask size mismatch");
    std::vector<std::uint8_t> out(mask.size(), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            bool keep = mask[static_cast<std::size_t>(y) * width + x] != 0;
            for (std::size_t k = 0; keep && k < element.size(); ++k) {
                const int nx = x + element[k].dx, ny = y + element[k].dy;
                keep = nx >= 0 && ny >= 0 && nx < width && ny < height &&
                       mask[static_cast<std::size_t>(ny) * width + nx] != 0;
            }
            out[static_cast<std::size_t>(y) * width + x] = keep ? 1 : 0;
        }
    return out;
}

/// Disc erosion. With a seed the radius is drawn uniformly from [0, radius].
inline std::vector<std::uint8_t> erode_mask(std::span<const std::uint8_t> mask, int width, int height,
                                           double radius, std::optional<std::uint64_t> seed = std::nullopt) {
    if (radius < 0) throw DomainError("erode_mask: negative radius");
    double r = radius;
    if (seed) {
        Rng rng(*seed);
        r = uniform01(rng) * radius;
    }
    return erode_with(mask, width, height, disc_element(r));
}

// ---------------------------------------------------------------------------
// Inpainting condition and fallback fill

/// Nine channels per texel: normal, position, masked colour. Chart texels
/// that need inpainting carry -1 in the colour channels; texels outside
/// every chart are 0 in all channels. `inpaint` is 1 exactly where the -1
/// fill was written.
struct InpaintCondition {
    Image condition;  // 9 channels
    Image inpaint;    // 1 channel
    Image normal() const { return channels(0); }
    Image position() const { return channels(3); }
    Image masked_color() const { return channels(6); }

    Image channels(int first) const {
        Image out(condition.width, condition.height, 3);
        for (std::size_t t = 0; t < static_cast<std::size_t>(condition.width) * condition.height; ++t)
            for (int c = 0; c < 3; ++c)
                out.data[t * 3 + static_cast<std::size_t>(c)] = condition.data[t * 9 + static_cast<std::size_t>(first + c)];
        return out;
    }
};

/// Builds the condition after eroding the visibility mask by `erosion_radius`
/// (randomized when `seed` is given).
inline InpaintCondition export_inpaint_condition(const UvAtlas& atlas, double erosion_radius = 0,
                                                 std::optional<std::uint64_t> seed = std::nullopt) {
    if (atlas.visible.size() != atlas.texels()) throw DomainError("export_inpaint_condition: atlas not fused");
    const auto vis = erode_mask(atlas.visible, atlas.width, atlas.height, erosion_radius, seed);
    InpaintCondition out{Image(atlas.width, atlas.height, 9), Image(atlas.width, atlas.height, 1)};
    for (std::size_t t = 0; t < atlas.texels(); ++t) {
        if (!atlas.chart[t]) continue;
        float* px = &out.condition.data[t * 9];
        for (int c = 0; c < 3; ++c) {
            px[c] = static_cast<float>(atlas.normal[t][c]);
            px[3 + c] = static_cast<float>(atlas.position[t][c]);
            px[6 + c] = vis[t] ? static_cast<float>(atlas.color[t][c]) : -1.0f;
        }
        out.inpaint.data[t] = vis[t] ? 0.0f : 1.0f;
    }
    return out;
}

/// Charts: 4-connected texel components within one UV island; -1 outside
/// charts.
inline std::vector<std::int32_t> chart_components(const UvAtlas& atlas, std::int32_t* count = nullptr) {
    std::vector<std::int32_t> id(atlas.texels(), -1);
    std::int32_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < atlas.texels(); ++s) {
        if (!atlas.chart[s] || id[s] >= 0) continue;
        id[s] = next;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t t = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(t % atlas.width), y = static_cast<int>(t / atlas.width);
            const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[0] >= atlas.width || q[1] >= atlas.height) continue;
                const std::size_t u = atlas.index(q[0], q[1]);
                if (atlas.chart[u] && id[u] < 0 && atlas.island[u] == atlas.island[t]) {
                    id[u] = next;
                    stack.push_back(u);
                }
            }
        }
        ++next;
    }
    if (count) *count = next;
    return id;
}

struct HoleFillReport {
    std::size_t filled = 0;
    std::vector<std::string> warnings;
};

/// Fills invisible chart texels with the colour of the nearest visible texel
/// of the same chart, nearest meaning fewest 4-neighbour steps inside the
/// chart (ties go to the source found first in row-major order). A chart
/// without any visible texel takes the mean visible colour of the atlas and
/// produces a warning.
inline HoleFillReport fallback_hole_fill(UvAtlas& atlas) {
    if (atlas.visible.size() != atlas.texels()) throw DomainError("fallback_hole_fill: atlas not fused");
    HoleFillReport rep;
    std::int32_t ncharts = 0;
    const auto chart_id = chart_components(atlas, &ncharts);
    std::vector<std::uint8_t> chart_has_visible(static_cast<std::size_t>(ncharts), 0);
    Vec3 global{};
    std::size_t nvis = 0;
    std::deque<std::size_t> queue;
    std::vector<std::uint8_t> done(atlas.texels(), 0);
    for (std::size_t t = 0; t < atlas.texels(); ++t) {
        if (!atlas.chart[t] || !atlas.visible[t]) continue;
        chart_has_visible[static_cast<std::size_t>(chart_id[t])] = 1;
        global += atlas.color[t];
        ++nvis;
        done[t] = 1;
        queue.push_back(t);
    }
    while (!queue.empty()) {
        const std::size_t t = queue.front();
        queue.pop_front();
        const int x = static_cast<int>(t % atlas.width), y = static_cast<int>(t / atlas.width);
        const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
        for (const auto& q : nb) {
            if (q[0] < 0 || q[1] < 0 || q[0] >= atlas.width || q[1] >= atlas.height) continue;
            const std::size_t u = atlas.index(q[0], q[1]);
            if (!atlas.chart[u] || done[u] || chart_id[u] != chart_id[t]) continue;
            done[u] = 1;
            atlas.color[u] = atlas.color[t];
            ++rep.filled;
            queue.push_back(u);
        }
    }
    const Vec3 mean = nvis ? global / static_cast<double>(nvis) : Vec3{};
    for (std::int32_t c = 0; c < ncharts; ++c) {
        if (chart_has_visible[static_cast<std::size_t>(c)]) continue;
        rep.warnings.push_back("chart " + std::to_string(c) + " has no visible texel; filled with the atlas mean colour");
        for (std::size_t t = 0; t < atlas.texels(); ++t)
            if (chart_id[t] == c) {
                atlas.color[t] = mean;
                ++rep.filled;
            }
    }
    return rep;
}

}  // namespace meshforge
