#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvh.hpp"
#include "image_io.hpp"
#include "mesh_ops.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace meshforge {

/// Pinhole (or orthographic) camera. Camera space is right-handed with the
/// view direction along -z; pixel rows run top to bottom.
struct Camera {
    Vec3 position{0, -2, 0};
    Vec3 target{0, 0, 0};
    Vec3 up{0, 0, 1};
    double fov_y = 40.0 * kPi / 180.0;  // radians, perspective only
    bool orthographic = false;
    double ortho_half_height = 1.0;
    int width = 64;
    int height = 64;

    struct Basis {
        Vec3 right, up, forward;
    };

    Basis basis() const {
        const Vec3 f = target - position;
        if (norm(f) == 0) throw DegenerateInput("camera: position equals target");
        const Vec3 fw = normalized(f);
        Vec3 r = cross(fw, up);
        if (norm(r) < 1e-9) r = cross(fw, std::abs(fw.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{0, 1, 0});
        r = normalized(r);
        return {r, cross(r, fw), fw};
    }

    double distance() const { return norm(target - position); }

    /// Ray through the centre of pixel (px, py), or any sub-pixel location.
    Ray pixel_ray(double px, double py) const {
        const Basis b = basis();
        const double aspect = static_cast<double>(width) / height;
        const double sx = (2 * px / width - 1), sy = (1 - 2 * py / height);
        if (orthographic) {
            const Vec3 o = position + b.right * (sx * ortho_half_height * aspect) + b.up * (sy * ortho_half_height);
            return {o, b.forward};
        }
        const double t = std::tan(fov_y / 2);
        return {position, normalized(b.forward + b.right * (sx * t * aspect) + b.up * (sy * t))};
    }

    /// Continuous pixel coordinates and z-depth of a world point; z-depth is
    /// the distance along the view axis (<= 0 means behind the camera).
    struct Projection {
        double px, py, depth;
    };
    Projection project(Vec3 p) const {
        const Basis b = basis();
        const Vec3 d = p - position;
        const double z = dot(d, b.forward);
        const double aspect = static_cast<double>(width) / height;
        double sx, sy;
        if (orthographic) {
            sx = dot(d, b.right) / (ortho_half_height * aspect);
            sy = dot(d, b.up) / ortho_half_height;
        } else {
            const double t = std::tan(fov_y / 2);
            sx = dot(d, b.right) / (z * t * aspect);
            sy = dot(d, b.up) / (z * t);
        }
        return {(sx + 1) * 0.5 * width, (1 - sy) * 0.5 * height, z};
    }

    /// World direction into camera coordinates (x right, y up, z towards the viewer).
    Vec3 to_camera(Vec3 dir) const {
        const Basis b = basis();
        return {dot(dir, b.right), dot(dir, b.up), -dot(dir, b.forward)};
    }
};

/// Camera on a sphere around `target` at the given azimuth (about +z, from
/// +x) and elevation, both in radians.
inline Camera orbit_camera(double azimuth, double elevation, double distance, int size = 64,
                           double fov_y = 40.0 * kPi / 180.0, Vec3 target = {}) {
    Camera c;
    c.position = target + Vec3{std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                               std::sin(elevation)} * distance;
    c.target = target;
    c.fov_y = fov_y;
    c.width = c.height = size;
    return c;
}

inline nlohmann::json camera_to_json(const Camera& c) {
    return {{"position", {c.position.x, c.position.y, c.position.z}},
            {"target", {c.target.x, c.target.y, c.target.z}},
            {"up", {c.up.x, c.up.y, c.up.z}},
            {"fov_y_degrees", c.fov_y * 180.0 / kPi},
            {"orthographic", c.orthographic},
            {"ortho_half_height", c.ortho_half_height},
            {"width", c.width},
            {"height", c.height}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    auto vec = [&](const char* key) {
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != 3) throw FormatError(std::string("camera: ") + key + " must be a 3-vector");
        return Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    try {
        Camera c;
        c.position = vec("position");
        c.target = vec("target");
        if (j.contains("up")) c.up = vec("up");
        c.fov_y = j.value("fov_y_degrees", 40.0) * kPi / 180.0;
        c.orthographic = j.value("orthographic", false);
        c.ortho_half_height = j.value("ortho_half_height", 1.0);
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        if (c.width <= 0 || c.height <= 0) throw FormatError("camera: resolution must be positive");
        if (!(c.fov_y > 0 && c.fov_y < kPi)) throw FormatError("camera: fov must be in (0, 180) degrees");
        c.basis();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("camera: ") + e.what());
    }
}

/// Per-pixel geometry. Background pixels have infinite depth, face -1 and a
/// zero normal.
struct GBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<Vec3> normal;    // world space, unit on covered pixels
    std::vector<Vec3> position;  // world-space surface point
    std::vector<std::int32_t> face;
    std::vector<Vec2> barycentric;

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    bool covered(std::size_t i) const { return face[i] >= 0; }
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

enum class NormalMode { Face, Vertex };

/// Visible surface at every pixel centre. Visibility is resolved by casting
/// the pixel-centre ray against the mesh hierarchy, which is equivalent to a
/// z-buffer sampled at pixel centres. No back-face culling.
inline GBuffer rasterize(const TriMesh& mesh, const Camera& cam, NormalMode mode = NormalMode::Face,
                         const MeshBvh* prebuilt = nullptr) {
    if (mesh.faces.empty()) throw DegenerateInput("rasterize: empty mesh");
    std::unique_ptr<MeshBvh> own;
    if (!prebuilt) own = std::make_unique<MeshBvh>(mesh);
    const MeshBvh& bvh = prebuilt ? *prebuilt : *own;
    std::vector<Vec3> vnormals;
    if (mode == NormalMode::Vertex) vnormals = mesh.normals.size() == mesh.vertices.size() ? mesh.normals : vertex_normals(mesh);
    GBuffer g;
    g.width = cam.width;
    g.height = cam.height;
    const std::size_t n = g.pixels();
    g.depth.assign(n, std::numeric_limits<double>::infinity());
    g.normal.assign(n, Vec3{});
    g.position.assign(n, Vec3{});
    g.face.assign(n, -1);
    g.barycentric.assign(n, Vec2{});
    const Vec3 forward = cam.basis().forward;
    parallel_for(static_cast<std::size_t>(cam.height), [&](std::size_t yb, std::size_t ye) {
        for (auto y = static_cast<int>(yb); y < static_cast<int>(ye); ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Ray ray = cam.pixel_ray(x + 0.5, y + 0.5);
                const auto hit = ray_mesh_first_hit(ray, bvh);
                if (!hit) continue;
                const std::size_t i = g.index(x, y);
                const Vec3 p = ray.at(hit->t);
                g.face[i] = static_cast<std::int32_t>(hit->face);
                g.position[i] = p;
                g.depth[i] = dot(p - cam.position, forward);
                g.barycentric[i] = hit->barycentric;
                if (mode == NormalMode::Face) {
                    g.normal[i] = face_normal(mesh.triangle(hit->face));
                } else {
                    const auto& f = mesh.faces[hit->face];
                    const double b1 = hit->barycentric.x, b2 = hit->barycentric.y;
                    g.normal[i] = normalized(vnormals[f[0]] * (1 - b1 - b2) + vnormals[f[1]] * b1 + vnormals[f[2]] * b2);
                }
            }
    }, 4);
    return g;
}

/// (D - bias) / scale with bias = cam_distance - diagonal and scale =
/// cam_distance - bias (the diagonal up to one rounding), clamped to [0,1];
/// background maps to 1. Both ends of the range are exact.
inline std::vector<double> normalize_depth(std::span<const double> depth, double cam_distance, const Aabb& bbox) {
    const double diag = bbox.diagonal();
    if (!(diag > 0)) throw DegenerateInput("normalize_depth: zero-diagonal bounding box");
    if (!(cam_distance > diag / 2)) throw DomainError("normalize_depth: camera inside the bounding sphere");
    const double bias = cam_distance - diag;
    const double scale = cam_distance - bias;
    std::vector<double> out(depth.size());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (!std::isfinite(depth[i])) {
            out[i] = 1.0;
            continue;
        }
        out[i] = std::clamp((depth[i] - bias) / scale, 0.0, 1.0);
    }
    return out;
}

/// max(0, n . v) with v the unit direction from the surface point to the camera.
inline std::vector<double> view_weight(const GBuffer& g, const Camera& cam) {
    std::vector<double> w(g.pixels(), 0.0);
    const Vec3 forward = cam.basis().forward;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!g.covered(i)) continue;
        const Vec3 v = cam.orthographic ? forward * -1.0 : normalized(cam.position - g.position[i]);
        w[i] = std::clamp(dot(g.normal[i], v), 0.0, 1.0);
    }
    return w;
}

/// Flat-shaded world-space normal image (H*W, 3) whose values depend
/// differentiably on the vertex tensor (V, 3). The pixel-to-face assignment
/// comes from `g` and is held fixed; uncovered pixels are zero.
template <typename T>
ad::BasicTensor<T> render_normal_map_diff(const ad::BasicTensor<T>& vertices, const std::vector<Face>& faces,
                                          const GBuffer& g) {
    if (vertices.ndim() != 2 || vertices.dim(1) != 3)
        throw ShapeError("render_normal_map_diff: vertices must be (V,3), got " + ad::shape_str(vertices.shape()));
    const auto& v = vertices.data();
    const std::size_t nf = faces.size();
    std::vector<T> fn(nf * 3, T(0));
    std::vector<char> used(nf, 0);
    for (std::size_t i = 0; i < g.pixels(); ++i)
        if (g.covered(i)) used[static_cast<std::size_t>(g.face[i])] = 1;
    auto edges = [&](std::size_t f, T e1[3], T e2[3]) {
        for (int a = 0; a < 3; ++a) {
            e1[a] = v[faces[f][1] * 3 + a] - v[faces[f][0] * 3 + a];
            e2[a] = v[faces[f][2] * 3 + a] - v[faces[f][0] * 3 + a];
        }
    };
    for (std::size_t f = 0; f < nf; ++f) {
        if (!used[f]) continue;
        T e1[3], e2[3];
        edges(f, e1, e2);
        const T c[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
        const T len = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        if (len > 0)
            for (int a = 0; a < 3; ++a) fn[f * 3 + a] = c[a] / len;
    }
    std::vector<T> out(g.pixels() * 3, T(0));
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        for (int a = 0; a < 3; ++a) out[i * 3 + a] = fn[static_cast<std::size_t>(g.face[i]) * 3 + a];
    }
    std::vector<std::int32_t> pix_face(g.face);
    return ad::BasicTensor<T>::make({static_cast<int>(g.pixels()), 3}, std::move(out), {vertices},
                                    [faces, pix_face = std::move(pix_face), nf](ad::Node<T>& self) {
        ad::Node<T>& pv = *self.parents[0];
        const auto& v = pv.value;
        auto& gv = pv.ensure_grad();
        std::vector<T> gface(nf * 3, T(0));
        for (std::size_t i = 0; i < pix_face.size(); ++i) {
            if (pix_face[i] < 0) continue;
            for (int a = 0; a < 3; ++a) gface[static_cast<std::size_t>(pix_face[i]) * 3 + a] += self.grad[i * 3 + a];
        }
        for (std::size_t f = 0; f < nf; ++f) {
            const T* gn = &gface[f * 3];
            if (gn[0] == 0 && gn[1] == 0 && gn[2] == 0) continue;
            T e1[3], e2[3];
            for (int a = 0; a < 3; ++a) {
                e1[a] = v[faces[f][1] * 3 + a] - v[faces[f][0] * 3 + a];
                e2[a] = v[faces[f][2] * 3 + a] - v[faces[f][0] * 3 + a];
            }
            const T c[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
            const T len = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
            if (!(len > 0)) continue;
            const T n[3] = {c[0] / len, c[1] / len, c[2] / len};
            const T ndg = n[0] * gn[0] + n[1] * gn[1] + n[2] * gn[2];
            T gc[3];
            for (int a = 0; a < 3; ++a) gc[a] = (gn[a] - n[a] * ndg) / len;
            // c = e1 x e2: dc/de1 . gc = e2 x gc, dc/de2 . gc = gc x e1
            const T g1[3] = {e2[1] * gc[2] - e2[2] * gc[1], e2[2] * gc[0] - e2[0] * gc[2], e2[0] * gc[1] - e2[1] * gc[0]};
            const T g2[3] = {gc[1] * e1[2] - gc[2] * e1[1], gc[2] * e1[0] - gc[0] * e1[2], gc[0] * e1[1] - gc[1] * e1[0]};
            for (int a = 0; a < 3; ++a) {
                gv[faces[f][1] * 3 + a] += g1[a];
                gv[faces[f][2] * 3 + a] += g2[a];
                gv[faces[f][0] * 3 + a] -= g1[a] + g2[a];
            }
        }
    });
}

/// Normal image of a fixed mesh as plain values (H*W*3), matching the layout
/// of render_normal_map_diff.
inline std::vector<double> normal_image(const GBuffer& g) {
    std::vector<double> out(g.pixels() * 3, 0.0);
    for (std::size_t i = 0; i < g.pixels(); ++i)
        for (int a = 0; a < 3; ++a) out[i * 3 + a] = g.normal[i][a];
    return out;
}

inline Image depth_image(const GBuffer& g) {
    Image img(g.width, g.height, 1);
    for (std::size_t i = 0; i < g.pixels(); ++i)
        img.data[i] = std::isfinite(g.depth[i]) ? static_cast<float>(g.depth[i]) : std::numeric_limits<float>::infinity();
    return img;
}

/// Normals mapped to [0,1] RGB for previews (background black).
inline Image normal_preview(const GBuffer& g) {
    Image img(g.width, g.height, 3);
    for (std::size_t i = 0; i < g.pixels(); ++i)
        if (g.covered(i))
            for (int a = 0; a < 3; ++a) img.data[i * 3 + a] = static_cast<float>(0.5 * (g.normal[i][a] + 1));
    return img;
}

inline Image mask_image(const GBuffer& g) {
    Image img(g.width, g.height, 1);
    for (std::size_t i = 0; i < g.pixels(); ++i) img.data[i] = g.covered(i) ? 1.0f : 0.0f;
    return img;
}

}  // namespace meshforge
