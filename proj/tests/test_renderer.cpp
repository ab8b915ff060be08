#include <gtest/gtest.h>

#include <filesystem>

#include <meshforge/fixtures.hpp>
#include <meshforge/renderer.hpp>

#include "gradcheck.hpp"

using namespace meshforge;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("meshforge_renderer_" + name);
}

// Pixel ray from first principles: look-at frame and pinhole model.
Ray oracle_ray(const Camera& cam, double px, double py) {
    const Vec3 f = normalized(cam.target - cam.position);
    Vec3 r = cross(f, cam.up);
    if (norm(r) < 1e-9) r = cross(f, std::abs(f.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{0, 1, 0});
    r = normalized(r);
    const Vec3 u = cross(r, f);
    const double half_h = std::tan(cam.fov_y / 2);
    const double half_w = half_h * cam.width / cam.height;
    const double x = (px / cam.width * 2 - 1) * half_w;
    const double y = (1 - py / cam.height * 2) * half_h;
    return {cam.position, normalized(f + r * x + u * y)};
}

// Linear scan over every triangle, nearest hit wins.
std::optional<RayHit> brute_first_hit(const Ray& ray, const TriMesh& mesh) {
    std::optional<RayHit> best;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        auto h = intersect_triangle(ray, mesh.triangle(f));
        if (h && (!best || h->t < best->t)) {
            best = h;
            best->face = static_cast<std::uint32_t>(f);
        }
    }
    return best;
}

}  // namespace

TEST(Renderer, FrontQuadNormalsInCameraSpace) {
    const TriMesh quad = fixtures::uv_quad(1.0);
    Camera cam;
    cam.position = {0, 0, 2};
    cam.width = cam.height = 32;
    const GBuffer g = rasterize(quad, cam);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        ++covered;
        const Vec3 n = cam.to_camera(g.normal[i]);
        EXPECT_NEAR(n.x, 0.0, 1e-12);
        EXPECT_NEAR(n.y, 0.0, 1e-12);
        EXPECT_NEAR(n.z, 1.0, 1e-12);
        EXPECT_NEAR(g.depth[i], 2.0, 1e-12);
    }
    EXPECT_GT(covered, g.pixels() / 2);
}

TEST(Renderer, BackgroundConvention) {
    const TriMesh quad = fixtures::uv_quad(0.2);
    Camera cam;
    cam.position = {0, 0, 3};
    cam.width = cam.height = 16;
    const GBuffer g = rasterize(quad, cam);
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (g.covered(i)) {
            EXPECT_TRUE(std::isfinite(g.depth[i]));
            EXPECT_NEAR(norm(g.normal[i]), 1.0, 1e-12);
        } else {
            EXPECT_TRUE(std::isinf(g.depth[i]));
            EXPECT_EQ(g.normal[i], (Vec3{0, 0, 0}));
        }
    }
    EXPECT_TRUE(g.covered(g.index(8, 8)));
    EXPECT_FALSE(g.covered(0));
}

TEST(Renderer, NearerQuadWinsContestedPixels) {
    const TriMesh m = fixtures::two_quads();
    Camera cam;
    cam.position = {0, 0, 3};
    cam.width = cam.height = 48;
    const GBuffer g = rasterize(m, cam);
    std::size_t front = 0, rear = 0;
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        const Vec3 p = g.position[i];
        if (std::abs(p.x) < 0.39 && std::abs(p.y) < 0.39) {
            EXPECT_LT(g.face[i], 2) << "rear face visible through the front quad";
            EXPECT_NEAR(g.depth[i], 2.7, 1e-9);
            ++front;
        } else if (g.face[i] >= 2) {
            EXPECT_NEAR(g.depth[i], 3.3, 1e-9);
            ++rear;
        }
    }
    EXPECT_GT(front, 0u);
    EXPECT_GT(rear, 0u);
}

TEST(Renderer, SphereCentreDepth) {
    const double r = 0.8;
    const TriMesh s = fixtures::uv_sphere(r);
    for (Vec3 pos : {Vec3{0, -2, 0}, Vec3{2, 0, 0}, Vec3{1.2, 1.2, 1.0}}) {
        Camera cam;
        cam.position = pos;
        cam.width = cam.height = 65;
        const GBuffer g = rasterize(s, cam);
        const double chord = r * (1 - std::cos(kPi / 48));
        EXPECT_NEAR(g.depth[g.index(32, 32)], cam.distance() - r, chord) << pos;
    }
}

TEST(Renderer, MatchesPerPixelRayCasting) {
    const TriMesh meshes[] = {fixtures::torus(), fixtures::nested_shells(), fixtures::two_quads()};
    Rng rng(11);
    for (const auto& mesh : meshes) {
        Camera cam = orbit_camera(0.7, 0.4, 2.5, 96);
        cam.height = 72;
        const GBuffer g = rasterize(mesh, cam);
        std::size_t hits = 0;
        for (int k = 0; k < 1000; ++k) {
            const int x = static_cast<int>(uniform01(rng) * cam.width);
            const int y = static_cast<int>(uniform01(rng) * cam.height);
            const Ray ray = oracle_ray(cam, x + 0.5, y + 0.5);
            const auto hit = brute_first_hit(ray, mesh);
            const std::size_t i = g.index(x, y);
            ASSERT_EQ(hit.has_value(), g.covered(i)) << x << "," << y;
            if (!hit) continue;
            ++hits;
            EXPECT_EQ(static_cast<std::int32_t>(hit->face), g.face[i]);
            const double zdepth = hit->t * dot(ray.direction, normalized(cam.target - cam.position));
            EXPECT_NEAR(zdepth, g.depth[i], 1e-5);
        }
        EXPECT_GT(hits, 100u);
    }
}

TEST(Renderer, ProjectInvertsPixelRay) {
    Camera cam = orbit_camera(1.1, -0.3, 3.0, 40);
    cam.height = 30;
    for (double px : {0.5, 7.25, 39.5})
        for (double py : {0.5, 12.0, 29.5}) {
            const Ray ray = cam.pixel_ray(px, py);
            const auto pr = cam.project(ray.at(2.0));
            EXPECT_NEAR(pr.px, px, 1e-9);
            EXPECT_NEAR(pr.py, py, 1e-9);
        }
    cam.orthographic = true;
    const Ray ray = cam.pixel_ray(3.5, 20.5);
    const auto pr = cam.project(ray.at(1.3));
    EXPECT_NEAR(pr.px, 3.5, 1e-9);
    EXPECT_NEAR(pr.py, 20.5, 1e-9);
}

TEST(Renderer, OrthographicQuad) {
    Camera cam;
    cam.position = {0, 0, 5};
    cam.orthographic = true;
    cam.ortho_half_height = 1.0;
    cam.width = cam.height = 20;
    const GBuffer g = rasterize(fixtures::uv_quad(0.5), cam);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < g.pixels(); ++i) covered += g.covered(i);
    EXPECT_EQ(covered, 100u);
}

TEST(Renderer, VertexNormalsInterpolate) {
    const TriMesh s = fixtures::uv_sphere(0.8);
    Camera cam;
    cam.width = cam.height = 33;
    const GBuffer g = rasterize(s, cam, NormalMode::Vertex);
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        EXPECT_NEAR(norm(g.normal[i]), 1.0, 1e-12);
        EXPECT_GT(dot(g.normal[i], normalized(g.position[i])), 0.999);
    }
}

TEST(NormalizeDepth, EndpointsAreExact) {
    Rng rng(5);
    for (int k = 0; k < 200; ++k) {
        const Vec3 lo{-uniform01(rng), -uniform01(rng), -uniform01(rng)};
        const Vec3 hi{uniform01(rng), uniform01(rng), uniform01(rng) + 1e-3};
        const Aabb box{lo, hi};
        const double d = box.diagonal() * (0.51 + 3 * uniform01(rng));
        const std::vector<double> depth = {d, d - box.diagonal()};
        const auto out = normalize_depth(depth, d, box);
        EXPECT_EQ(out[0], 1.0);
        EXPECT_EQ(out[1], 0.0);
    }
}

TEST(NormalizeDepth, MidpointBackgroundAndErrors) {
    const Aabb box = Aabb::cube(0.5);
    const double inf = std::numeric_limits<double>::infinity();
    const std::vector<double> depth = {2 - std::sqrt(3.0) / 2, inf, 100.0, -5.0};
    const auto out = normalize_depth(depth, 2.0, box);
    EXPECT_NEAR(out[0], 0.5, 1e-15);
    EXPECT_EQ(out[1], 1.0);
    EXPECT_EQ(out[2], 1.0);
    EXPECT_EQ(out[3], 0.0);
    EXPECT_THROW(normalize_depth(depth, 2.0, Aabb{{1, 1, 1}, {1, 1, 1}}), DegenerateInput);
    EXPECT_THROW(normalize_depth(depth, 0.5, box), DomainError);
}

TEST(NormalizeDepth, AffineAndOrderPreserving) {
    const Aabb box = Aabb::cube(0.5);
    std::vector<double> depth;
    for (int i = 0; i <= 50; ++i) depth.push_back(2 - std::sqrt(3.0) + i * std::sqrt(3.0) / 50);
    const auto out = normalize_depth(depth, 2.0, box);
    for (std::size_t i = 1; i < out.size(); ++i) {
        EXPECT_GT(out[i], out[i - 1]);
        EXPECT_NEAR(out[i] - out[i - 1], 1.0 / 50, 1e-12);
    }
}

TEST(ViewWeight, CosineOfIncidence) {
    Camera cam;
    cam.position = {0, 0, 2};
    cam.width = 3;
    cam.height = 1;
    GBuffer g;
    g.width = 3;
    g.height = 1;
    g.depth = {2, 2, 2};
    g.face = {0, 0, 0};
    g.barycentric.assign(3, Vec2{});
    g.position.assign(3, Vec3{0, 0, 0});
    g.normal = {Vec3{0, 0, 1}, Vec3{1, 0, 0}, Vec3{std::sin(kPi / 3), 0, std::cos(kPi / 3)}};
    const auto w = view_weight(g, cam);
    EXPECT_NEAR(w[0], 1.0, 1e-12);
    EXPECT_NEAR(w[1], 0.0, 1e-12);
    EXPECT_NEAR(w[2], 0.5, 1e-6);
}

TEST(ViewWeight, BoundedOnRender) {
    const GBuffer g = rasterize(fixtures::torus(), orbit_camera(0.3, 0.9, 2.0, 48));
    const auto w = view_weight(g, orbit_camera(0.3, 0.9, 2.0, 48));
    for (std::size_t i = 0; i < w.size(); ++i) {
        EXPECT_GE(w[i], 0.0);
        EXPECT_LE(w[i], 1.0);
        if (!g.covered(i)) EXPECT_EQ(w[i], 0.0);
    }
}

namespace {

ad::TensorD vertex_tensor(const TriMesh& m) {
    std::vector<double> v;
    for (auto p : m.vertices) v.insert(v.end(), {p.x, p.y, p.z});
    return ad::TensorD::from({static_cast<int>(m.vertices.size()), 3}, std::move(v));
}

}  // namespace

TEST(NormalMapDiff, MatchesRasterizedFaceNormals) {
    const TriMesh m = fixtures::torus(0.6, 0.25, {}, 24, 12);
    const Camera cam = orbit_camera(0.2, 0.5, 2.2, 40);
    const GBuffer g = rasterize(m, cam);
    const auto img = render_normal_map_diff(vertex_tensor(m), m.faces, g);
    const auto ref = normal_image(g);
    ASSERT_EQ(img.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(img.data()[i], ref[i], 1e-12);
}

TEST(NormalMapDiff, FlatTriangleIsConstant) {
    TriMesh m;
    m.vertices = {{-0.5, -0.4, 0.1}, {0.6, -0.3, -0.1}, {0.0, 0.5, 0.2}};
    m.faces = {{0, 1, 2}};
    Camera cam;
    cam.position = {0.1, 0.2, 2};
    cam.width = cam.height = 24;
    const GBuffer g = rasterize(m, cam);
    const auto img = render_normal_map_diff(vertex_tensor(m), m.faces, g);
    const Vec3 n = face_normal(m.triangle(0));
    std::size_t covered = 0;
    for (std::size_t i = 0; i < g.pixels(); ++i) {
        if (!g.covered(i)) continue;
        ++covered;
        for (int a = 0; a < 3; ++a) EXPECT_EQ(img.data()[i * 3 + a], n[a]);
    }
    EXPECT_GT(covered, 20u);
}

TEST(NormalMapDiff, TranslationInvariant) {
    const TriMesh m = fixtures::uv_sphere(0.6, {}, 24, 12);
    Camera cam;
    cam.position = {0, -3, 0};
    cam.width = cam.height = 48;
    TriMesh moved = m;
    for (auto& p : moved.vertices) p += Vec3{0.13, 0, 0.07};
    const GBuffer g = rasterize(m, cam);
    const auto a = render_normal_map_diff(vertex_tensor(m), m.faces, g);
    const auto b = render_normal_map_diff(vertex_tensor(moved), m.faces, g);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(NormalMapDiff, GradientMatchesFiniteDifferences) {
    const TriMesh m = fixtures::uv_sphere(0.6, {}, 16, 8);
    const TriMesh target = fixtures::box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    const Camera cam = orbit_camera(0.4, 0.3, 2.0, 32);
    const GBuffer g = rasterize(m, cam);
    const auto tgt_img = normal_image(rasterize(target, cam));
    const auto tgt = ad::TensorD::from({static_cast<int>(g.pixels()), 3}, tgt_img);
    // Single vertex of interest in its own leaf; the rest are constants.
    const std::uint32_t vid = m.faces[static_cast<std::size_t>(g.face[g.index(16, 16)])][0];
    const ad::TensorD rest = vertex_tensor(m);
    const ad::TensorD v0 = ad::TensorD::from({1, 3}, {m.vertices[vid].x, m.vertices[vid].y, m.vertices[vid].z});
    auto f = [&](std::vector<ad::TensorD>& in) {
        std::vector<ad::TensorD> rows;
        const int nv = static_cast<int>(m.vertices.size());
        const int id = static_cast<int>(vid);
        if (id > 0) rows.push_back(ad::slice(rest, 0, 0, id));
        rows.push_back(in[0]);
        if (id + 1 < nv) rows.push_back(ad::slice(rest, 0, id + 1, nv - id - 1));
        const auto verts = ad::concat(rows, 0);
        return ad::mse(render_normal_map_diff(verts, m.faces, g), tgt);
    };
    const auto r = oracle::grad_check(f, {v0}, 1e-6);
    EXPECT_LE(r.max_rel_error, 5e-2);
    EXPECT_GT(r.max_abs_grad, 0.0);
}

TEST(ImageIo, PfmRoundTripKeepsRowOrder) {
    Image img(5, 3, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.25f * static_cast<float>(i) - 3.0f;
    img.at(0, 0, 0) = std::numeric_limits<float>::infinity();
    const auto p = tmp_path("rgb.pfm");
    write_pfm(p.string(), img);
    const Image back = read_pfm(p.string());
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.channels, 3);
    EXPECT_EQ(back.data, img.data);
    std::filesystem::remove(p);
}

TEST(ImageIo, PfmRejectsTruncation) {
    const auto p = tmp_path("bad.pfm");
    {
        std::ofstream out(p, std::ios::binary);
        out << "Pf\n4 4\n-1.0\n" << std::string(10, '\0');
    }
    EXPECT_THROW(read_pfm(p.string()), FormatError);
    std::filesystem::remove(p);
}

TEST(ImageIo, PngRoundTrip) {
    Image img(7, 4, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 256) / 255.0f;
    const auto p = tmp_path("rgb.png");
    write_png(p.string(), img);
    const Image back = read_png(p.string());
    ASSERT_EQ(back.data.size(), img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-6);
    std::filesystem::remove(p);
}

TEST(CameraJson, RoundTripAndValidation) {
    Camera cam = orbit_camera(0.9, 0.2, 2.5, 80);
    cam.height = 60;
    const Camera back = camera_from_json(camera_to_json(cam));
    EXPECT_NEAR(norm(back.position - cam.position), 0.0, 1e-15);
    EXPECT_NEAR(back.fov_y, cam.fov_y, 1e-15);
    EXPECT_EQ(back.width, 80);
    EXPECT_EQ(back.height, 60);
    auto j = camera_to_json(cam);
    j["fov_y_degrees"] = 180.0;
    EXPECT_THROW(camera_from_json(j), FormatError);
    j = camera_to_json(cam);
    j["target"] = j["position"];
    EXPECT_THROW(camera_from_json(j), DegenerateInput);
    j = camera_to_json(cam);
    j.erase("width");
    EXPECT_THROW(camera_from_json(j), FormatError);
}
