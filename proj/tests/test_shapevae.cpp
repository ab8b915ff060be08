#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include <meshforge/fixtures.hpp>
#include <meshforge/shapevae_train.hpp>

#include "grad_suite.hpp"

using namespace meshforge;
using ad::TensorD;

namespace {

ShapeVaeConfig small_config() {
    ShapeVaeConfig c;
    c.encoder.resolution = 4;
    c.encoder.depth = 1;
    c.encoder.latent_channels = 4;
    c.encoder.width = 8;
    c.encoder.heads = 2;
    c.encoder.fourier_bands = 2;
    c.encoder.num_points = 128;
    c.decoder.channels = 6;
    c.decoder.hidden = 8;
    return c;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double r = 0.9) {
    Rng rng(seed);
    std::vector<Vec3> p(n);
    for (auto& q : p) q = {r * (2 * uniform01(rng) - 1), r * (2 * uniform01(rng) - 1), r * (2 * uniform01(rng) - 1)};
    return p;
}

TensorD sqrt_t(const TensorD& a) {
    return ad::unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

// Total area of a triangle mesh from its vertex tensor, built from primitives.
TensorD area_of(const TensorD& v, const std::vector<Face>& faces) {
    std::vector<std::uint32_t> ia, ib, ic;
    for (const auto& f : faces) {
        ia.push_back(f[0]);
        ib.push_back(f[1]);
        ic.push_back(f[2]);
    }
    const auto a = ad::gather_rows(v, ia);
    const auto e1 = ad::sub(ad::gather_rows(v, ib), a);
    const auto e2 = ad::sub(ad::gather_rows(v, ic), a);
    auto col = [](const TensorD& t, int c) { return ad::slice(t, 1, c, 1); };
    const auto cx = ad::sub(ad::mul(col(e1, 1), col(e2, 2)), ad::mul(col(e1, 2), col(e2, 1)));
    const auto cy = ad::sub(ad::mul(col(e1, 2), col(e2, 0)), ad::mul(col(e1, 0), col(e2, 2)));
    const auto cz = ad::sub(ad::mul(col(e1, 0), col(e2, 1)), ad::mul(col(e1, 1), col(e2, 0)));
    const auto len = sqrt_t(ad::add(ad::add(ad::square(cx), ad::square(cy)), ad::square(cz)));
    return ad::scale(ad::sum(len), 0.5);
}

}  // namespace

TEST(ShapeVae, ToyLatentShapes) {
    ShapeVae<float> model({}, 1);
    const auto lat = model.encode(random_points(2048, 3));
    EXPECT_EQ(lat.mean.shape(), (ad::Shape{192, 16}));
    EXPECT_EQ(lat.logvar.shape(), (ad::Shape{192, 16}));
    EXPECT_EQ(lat.tile().shape(), (ad::Shape{16, 24, 8}));
    for (int p = 0; p < 3; ++p) EXPECT_EQ(lat.plane(p).shape(), (ad::Shape{16, 8, 8}));
    EXPECT_EQ(model.decode_planes(lat).shape(), (ad::Shape{32, 48, 16}));
}

TEST(ShapeVae, TileStacksPlanesTopToBottom) {
    TriplaneLatent<double> lat;
    lat.resolution = 2;
    lat.channels = 1;
    std::vector<double> v(12);
    for (int i = 0; i < 12; ++i) v[static_cast<std::size_t>(i)] = i;
    lat.mean = lat.sample = TensorD::from({12, 1}, v);
    for (int p = 0; p < 3; ++p) {
        const auto pl = lat.plane(p);
        for (int k = 0; k < 4; ++k) EXPECT_EQ(pl.data()[static_cast<std::size_t>(k)], 4 * p + k);
    }
}

TEST(ShapeVae, EncodingIsPermutationInvariant) {
    ShapeVae<double> model(small_config(), 5);
    auto pts = random_points(300, 8);
    const auto a = model.encode(pts);
    Rng rng(2);
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto b = model.encode(pts);
    for (std::size_t i = 0; i < a.mean.size(); ++i) EXPECT_NEAR(a.mean.data()[i], b.mean.data()[i], 1e-6);
}

TEST(ShapeVae, ReparameterizedSampleUsesLogvar) {
    ShapeVae<double> model(small_config(), 5);
    const auto pts = random_points(64, 9);
    Rng rng(4);
    const auto lat = model.encode(pts, &rng);
    Rng replay(4);
    for (std::size_t i = 0; i < lat.mean.size(); ++i) {
        const double eps = standard_normal(replay);
        EXPECT_NEAR(lat.sample.data()[i], lat.mean.data()[i] + std::exp(0.5 * lat.logvar.data()[i]) * eps, 1e-12);
    }
    const auto det = model.encode(pts);
    EXPECT_EQ(det.sample.data(), det.mean.data());
}

TEST(ShapeVae, UntrainedOccupancyInOpenInterval) {
    ShapeVae<float> model({}, 11);
    const auto lat = model.encode(random_points(512, 1));
    auto q = random_points(2000, 2, 1.0);
    q.push_back({1, 1, 1});
    q.push_back({-1, -1, -1});
    for (double p : model.query_occupancy(lat, q)) {
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
    const std::vector<Vec3> outside = {{0, 0, 1.01}};
    EXPECT_THROW(model.query_occupancy(lat, outside), DomainError);
}

TEST(ShapeVae, BilinearReproducesPlaneNodes) {
    ShapeVae<double> model(small_config(), 5);
    const auto planes = model.decode_planes(model.encode(random_points(64, 4)));
    const int c = planes.dim(0), side = planes.dim(2);
    for (int p = 0; p < 3; ++p) {
        const auto pl = ad::slice(planes, 1, p * side, side);
        std::vector<double> uv;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) uv.insert(uv.end(), {-1.0 + 2.0 * x / (side - 1), -1.0 + 2.0 * y / (side - 1)});
        const auto f = ad::bilinear_sample(pl, uv);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int k = 0; k < c; ++k)
                    EXPECT_NEAR(f.data()[static_cast<std::size_t>((y * side + x) * c + k)],
                                pl.data()[static_cast<std::size_t>((k * side + y) * side + x)], 1e-6);
    }
}

TEST(ShapeVae, CheckpointRoundTrip) {
    ShapeVae<float> model(small_config(), 21);
    std::stringstream buf;
    ad::write_checkpoint(buf, model.to_checkpoint({{"note", "x"}}));
    const auto ck = ad::read_checkpoint(buf);
    EXPECT_EQ(ck.meta_value("plane_combine"), "sum");
    const auto back = ShapeVae<float>::from_checkpoint(ck);
    const auto pts = random_points(50, 1);
    const auto a = model.query_occupancy(model.encode(pts), pts);
    const auto b = back.query_occupancy(back.encode(pts), pts);
    EXPECT_EQ(a, b);
    auto bad = ck;
    bad.meta[0].second = "other";
    EXPECT_THROW(ShapeVae<float>::from_checkpoint(bad), FormatError);
}

TEST(IsoSurface, EdgeMidpointAndGradient) {
    const Lattice lat{Extent3::cube(2), {0, 0, 0}, {1, 1, 1}};
    std::vector<double> vals(8, 0.0);
    vals[0] = 1.0;
    const IsoSurface iso = marching_cubes_lattice<double>(lat, vals, 0.5, Inside::Above);
    ASSERT_EQ(iso.mesh.vertices.size(), 3u);
    std::vector<std::uint32_t> ids(8);
    for (std::uint32_t i = 0; i < 8; ++i) ids[i] = i;
    const auto v = iso_vertices(TensorD::from({8}, vals), ids, iso, lat, 0.5);
    for (std::size_t i = 0; i < 3; ++i) {
        const Vec3 p{v.data()[i * 3], v.data()[i * 3 + 1], v.data()[i * 3 + 2]};
        EXPECT_NEAR(norm(p), 0.5, 1e-12);
        EXPECT_NEAR(std::max({p.x, p.y, p.z}), 0.5, 1e-12);
    }
    auto f = [&](std::vector<TensorD>& in) { return oracle::probe(iso_vertices(in[0], ids, iso, lat, 0.5)); };
    const auto r = oracle::grad_check(f, {TensorD::from({8}, vals)}, 1e-6);
    EXPECT_LE(r.max_rel_error, 1e-4);
    // Each vertex sits on an edge from node 0 (value 1) to a node of value 0;
    // its coordinate along that edge moves by 0.5 per unit of node 0's value.
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& src = iso.sources[k];
        const int comp = (src.node_a ^ src.node_b) == 1 ? 0 : (src.node_a ^ src.node_b) == 2 ? 1 : 2;
        auto x = TensorD::from({8}, vals, true);
        ad::sum(ad::slice(ad::slice(iso_vertices(x, ids, iso, lat, 0.5), 0, static_cast<int>(k), 1), 1, comp, 1)).backward();
        EXPECT_NEAR(x.grad()[0], 0.5, 1e-12);
    }
}

TEST(IsoSurface, AnalyticSphereVertices) {
    const int n = 32;
    const Lattice lat = unit_lattice(n);
    std::vector<double> vals(lat.nodes.count());
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = 1.0 / (1.0 + std::exp(-20.0 * (0.6 - norm(lat.position(static_cast<std::uint32_t>(i))))));
    const IsoSurface iso = marching_cubes_lattice<double>(lat, vals, 0.5, Inside::Above);
    std::vector<std::uint32_t> ids(vals.size());
    for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto v = iso_vertices(TensorD::from({static_cast<int>(vals.size())}, vals), ids, iso, lat, 0.5);
    const double diag = std::sqrt(3.0) * lat.spacing.x;
    for (std::size_t i = 0; i < iso.mesh.vertices.size(); ++i) {
        const Vec3 p{v.data()[i * 3], v.data()[i * 3 + 1], v.data()[i * 3 + 2]};
        EXPECT_LT(std::abs(norm(p) - 0.6), diag);
        EXPECT_NEAR(norm(p - iso.mesh.vertices[i]), 0.0, 1e-12);
    }
}

TEST(IsoSurface, AreaGradientMatchesFiniteDifferences) {
    const int n = 8;
    const Lattice lat = unit_lattice(n);
    Rng rng(17);
    std::vector<double> vals(lat.nodes.count());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const Vec3 p = lat.position(static_cast<std::uint32_t>(i));
        vals[i] = 1.0 / (1.0 + std::exp(-4.0 * (0.7 - norm(p - Vec3{0.1, 0, 0})))) + 0.05 * (uniform01(rng) - 0.5);
    }
    const IsoSurface iso = marching_cubes_lattice<double>(lat, vals, 0.5, Inside::Above);
    ASSERT_GT(iso.mesh.faces.size(), 20u);
    std::vector<std::uint32_t> ids(vals.size());
    for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
    auto f = [&](std::vector<TensorD>& in) { return area_of(iso_vertices(in[0], ids, iso, lat, 0.5), iso.mesh.faces); };
    const auto r = oracle::grad_check(f, {TensorD::from({static_cast<int>(vals.size())}, vals)}, 1e-6);
    EXPECT_LE(r.max_rel_error, 1e-2);
    EXPECT_GT(r.max_abs_grad, 0.0);
}

TEST(IsoSurface, ExtractSurfaceMatchesGridMesh) {
    ShapeVae<double> model(small_config(), 3);
    const auto lat = model.encode(random_points(64, 4));
    const auto planes = model.decode_planes(lat);
    try {
        const auto s = extract_surface(model, planes, 12);
        ASSERT_EQ(s.vertices.size(), s.iso.mesh.vertices.size() * 3);
        for (std::size_t i = 0; i < s.iso.mesh.vertices.size(); ++i)
            for (int a = 0; a < 3; ++a) EXPECT_NEAR(s.vertices.data()[i * 3 + a], s.iso.mesh.vertices[i][a], 1e-9);
    } catch (const EmptySurface&) {
        // an untrained decoder may not cross the level; the sphere test covers the geometry
    }
    EXPECT_THROW(extract_surface(model, planes, 7), DomainError);
}

TEST(Regularization, StratifiedMidpoints) {
    const TriMesh quad = fixtures::uv_quad(0.5, 0.0);
    const MeshBvh bvh(quad);
    const Aabb box = Aabb::cube(1.0);
    const std::vector<Ray> rays = {Ray{{0, 0, -2}, {0, 0, 1}}};
    const auto s = regularization_samples(rays, bvh, box, 4, 0.0, 1, false);
    ASSERT_EQ(s.points.size(), 4u);
    const double expect[] = {1.125, 1.375, 1.625, 1.875};
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(s.points[static_cast<std::size_t>(k)].z + 2.0, expect[k], 1e-12);
    const double eps = 0.1;
    const auto m = regularization_samples(rays, bvh, box, 4, eps, 1, false);
    for (int k = 0; k < 4; ++k)
        EXPECT_NEAR(m.points[static_cast<std::size_t>(k)].z + 2.0, 1.0 + (k + 0.5) * (1.0 - eps) / 4, 1e-12);
}

TEST(Regularization, MissesAndJitter) {
    const TriMesh quad = fixtures::uv_quad(0.5, 0.0);
    const MeshBvh bvh(quad);
    const Aabb box = Aabb::cube(1.0);
    const std::vector<Ray> rays = {Ray{{0.8, 0, -2}, {0, 0, 1}}, Ray{{3, 3, -2}, {0, 0, 1}}, Ray{{0.1, 0.2, -2}, {0, 0, 1}}};
    const auto s = regularization_samples(rays, bvh, box, 128, 0.05, 3);
    EXPECT_EQ(s.skipped, 1u);
    ASSERT_EQ(s.rays(), 2u);
    // miss: the whole chord z in [-1, 1]
    double lo = 9, hi = -9;
    for (std::size_t i = s.ray_offsets[0]; i < s.ray_offsets[1]; ++i) {
        lo = std::min(lo, s.points[i].z);
        hi = std::max(hi, s.points[i].z);
    }
    EXPECT_LT(lo, -1 + 2.0 / 128);
    EXPECT_GT(hi, 1 - 2.0 / 128);
    // hit: strictly before the surface minus the margin, one sample per stratum
    const double step = (1.0 - 0.05) / 128;
    for (std::size_t i = s.ray_offsets[1]; i < s.ray_offsets[2]; ++i) {
        const double t = s.points[i].z + 1.0;
        const auto k = static_cast<double>(i - s.ray_offsets[1]);
        EXPECT_GE(t, k * step - 1e-12);
        EXPECT_LE(t, (k + 1) * step + 1e-12);
        EXPECT_LT(s.points[i].z, -0.05 + 1e-12);
    }
    EXPECT_THROW(regularization_samples(rays, bvh, box, 0, 0.0, 1), DomainError);
}

TEST(Losses, ComponentEdgeCases) {
    TriplaneLatent<double> lat;
    lat.resolution = 3;
    lat.channels = 2;
    lat.mean = TensorD::zeros({27, 2});
    lat.logvar = TensorD::zeros({27, 2});
    lat.sample = lat.mean;
    EXPECT_EQ(kl_divergence(lat).item(), 0.0);
    EXPECT_EQ(total_variation(lat).item(), 0.0);
    lat.mean = TensorD::from({27, 2}, std::vector<double>(54, 0.7));
    EXPECT_NEAR(total_variation(lat).item(), 0.0, 1e-15);
    EXPECT_NEAR(kl_divergence(lat).item(), 0.5 * 0.49, 1e-15);

    const double big = std::log((1 - 1e-7) / 1e-7);
    const std::vector<double> labels = {1, 0, 1, 1, 0};
    std::vector<double> lg;
    for (double l : labels) lg.push_back(l > 0 ? big : -big);
    const auto terms = loss_coarse(TensorD::from({5, 1}, lg), std::span<const double>(labels), lat, LossWeights{});
    EXPECT_LE(terms.bce, 1e-6);

    const std::vector<double> nrm = {0, 0, 1, 0, 1, 0};
    const std::vector<std::uint8_t> mask = {1, 1};
    const auto same = normal_mse(TensorD::from({2, 3}, nrm), nrm, mask, mask);
    EXPECT_EQ(same.item(), 0.0);
    const auto reg = TensorD::from({4, 1}, {-10, -10, -10, -10});
    const auto refine = loss_refine(TensorD::from({5, 1}, lg), std::span<const double>(labels), lat, same, reg, LossWeights{});
    EXPECT_LE(refine.reg, 1e-4);
    EXPECT_EQ(refine.mse, 0.0);
}

TEST(Losses, TotalIsWeightedSum) {
    ShapeVae<double> model(small_config(), 2);
    Rng rng(1);
    const auto lat = model.encode(random_points(64, 5), &rng);
    const auto planes = model.decode_planes(lat);
    const auto pts = random_points(40, 6);
    std::vector<double> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = norm(pts[i]) < 0.6;
    const auto logits = model.query_logits(planes, pts);
    const auto reg = model.query_logits(planes, random_points(10, 7));
    const auto normals = TensorD::from({2, 3}, {0.0, 0.6, 0.8, 1.0, 0.0, 0.0});
    const std::vector<double> target = {0, 0, 1, 0, 1, 0};
    const std::vector<std::uint8_t> rm = {1, 1}, tm = {1, 0};
    const auto mse = normal_mse(normals, target, rm, tm);
    LossWeights w;
    w.kl = 0.3;
    w.tv = 0.2;
    w.mse = 0.7;
    w.reg = 0.4;
    const auto t = loss_refine(logits, std::span<const double>(labels), lat, mse, reg, w);
    for (double c : {t.bce, t.kl, t.tv, t.mse, t.reg}) EXPECT_GE(c, 0.0);
    EXPECT_NEAR(t.total.item(), t.bce + w.kl * t.kl + w.tv * t.tv + w.mse * t.mse + w.reg * t.reg, 1e-12);
    // normal MSE over the union mask, 3 channels per pixel
    EXPECT_NEAR(t.mse, ((0.0 + 0.36 + 0.04) + (1.0 + 1.0 + 0.0)) / 6.0, 1e-12);
}

TEST(Losses, NonFiniteIsRejected) {
    TriplaneLatent<double> lat;
    lat.resolution = 2;
    lat.channels = 1;
    lat.mean = lat.sample = TensorD::zeros({12, 1});
    lat.logvar = TensorD::zeros({12, 1});
    const std::vector<double> labels = {1};
    const auto nan = TensorD::from({1, 1}, {std::nan("")});
    EXPECT_THROW(loss_coarse(nan, std::span<const double>(labels), lat, LossWeights{}), NonFiniteLoss);
    LossWeights bad;
    bad.reg = -1;
    EXPECT_THROW(bad.validate(), DomainError);
}

// End-to-end refine objective with frozen topology, visibility and ray
// samples, differentiated with respect to five decoder weights.
TEST(Losses, RefineGradientMatchesFiniteDifferences) {
    EXPECT_LE(oracle::refine_end_to_end_error(), 1e-2);
}

TEST(Training, DeterministicAndLogged) {
    SampleSetConfig sc;
    sc.surface_points = 256;
    sc.near_points = 512;
    sc.grid_cells = 8;
    std::vector<ShapeRecord> shapes = {make_shape_record("sphere", fixtures::uv_sphere(0.6, {}, 24, 12), sc, 1),
                                       make_shape_record("box", fixtures::box(), sc, 2)};
    TrainConfig tc;
    tc.batch_near = 64;
    tc.batch_grid = 64;
    tc.refine_resolution = 12;
    tc.image_size = 16;
    tc.reg_rays = 4;
    tc.reg_samples = 8;
    auto run = [&] {
        ShapeVae<float> model(small_config(), 4);
        Trainer<float> tr(model, shapes, tc);
        std::vector<std::string> lines;
        tr.log = [&](const EpochRecord& r) { lines.push_back(r.to_json().dump()); };
        tr.run_coarse(2);
        tr.run_refine(1);
        std::stringstream ck;
        ad::write_checkpoint(ck, model.to_checkpoint());
        return std::make_pair(lines, ck.str());
    };
    const auto a = run();
    const auto b = run();
    ASSERT_EQ(a.first.size(), 3u);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    const auto last = nlohmann::json::parse(a.first.back());
    EXPECT_EQ(last["stage"], "refine");
    EXPECT_TRUE(last.contains("acc"));
    EXPECT_TRUE(last.contains("viou"));
}

TEST(Training, DivergenceAborts) {
    SampleSetConfig sc;
    sc.surface_points = 128;
    sc.near_points = 256;
    sc.grid_cells = 6;
    std::vector<ShapeRecord> shapes = {make_shape_record("sphere", fixtures::uv_sphere(0.6, {}, 24, 12), sc, 1)};
    TrainConfig tc;
    tc.batch_near = 32;
    tc.batch_grid = 32;
    tc.lr = 0.5;
    tc.clip_norm = 0;
    tc.divergence_factor = 1.0 + 1e-9;
    ShapeVae<float> model(small_config(), 4);
    Trainer<float> tr(model, shapes, tc);
    bool diverged = false;
    try {
        tr.run_coarse(30);
    } catch (const Divergence&) {
        diverged = true;
    }
    EXPECT_TRUE(diverged);
}
