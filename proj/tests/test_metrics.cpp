#include <gtest/gtest.h>

#include <meshforge/fixtures.hpp>
#include <meshforge/metrics.hpp>

#include "oracles.hpp"

using namespace meshforge;

namespace {

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed, double spread = 1.0) {
    Rng rng(seed);
    std::vector<Vec3> pts(n);
    for (auto& p : pts)
        p = {spread * (2 * uniform01(rng) - 1), spread * (2 * uniform01(rng) - 1), spread * (2 * uniform01(rng) - 1)};
    return pts;
}

std::vector<double> brute_nn(std::span<const Vec3> from, std::span<const Vec3> to) {
    std::vector<double> d(from.size());
    for (std::size_t i = 0; i < from.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (auto q : to) best = std::min(best, norm2(from[i] - q));
        d[i] = std::sqrt(best);
    }
    return d;
}

double brute_chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    return 0.5 * (mean(brute_nn(a, b)) + mean(brute_nn(b, a)));
}

double brute_fscore(std::span<const Vec3> a, std::span<const Vec3> b, double thr) {
    auto frac = [thr](const std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += x <= thr ? 1 : 0;
        return n / static_cast<double>(v.size());
    };
    const double p = frac(brute_nn(a, b)), r = frac(brute_nn(b, a));
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

double parity_iou(const TriMesh& a, const TriMesh& b, std::span<const Vec3> pts) {
    std::size_t inter = 0, uni = 0;
    for (auto p : pts) {
        const bool ia = oracle::inside_by_parity(p, a), ib = oracle::inside_by_parity(p, b);
        inter += ia && ib;
        uni += ia || ib;
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

}  // namespace

TEST(KdTree, MatchesBruteForceExactly) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto pts = random_cloud(700, s);
        const auto queries = random_cloud(300, 100 + s, 1.3);
        const KdTree tree(pts);
        const auto d = nearest_distances(queries, tree);
        EXPECT_EQ(d, brute_nn(queries, pts));
    }
    const auto sphere = sample_surface(fixtures::uv_sphere(), 2000, 3).points;
    const auto probe = sample_surface(fixtures::torus(), 500, 4).points;
    EXPECT_EQ(nearest_distances(probe, KdTree(sphere)), brute_nn(probe, sphere));
}

TEST(Chamfer, Basics) {
    const auto a = random_cloud(100, 1);
    EXPECT_EQ(chamfer(a, a), 0.0);
    const std::vector<Vec3> p{{0, 0, 0}}, q{{1, 0, 0}};
    EXPECT_DOUBLE_EQ(chamfer(p, q), 1.0);
    EXPECT_THROW(chamfer(std::vector<Vec3>{}, q), DegenerateInput);
}

TEST(Chamfer, MatchesBruteForceOn20Instances) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_cloud(512, 2 * s);
        const auto b = random_cloud(512, 2 * s + 1, 0.8);
        EXPECT_NEAR(chamfer(a, b), brute_chamfer(a, b), 1e-9);
        EXPECT_EQ(chamfer(a, b), chamfer(b, a));
    }
}

TEST(Chamfer, ZeroOnlyForEqualSets) {
    auto a = random_cloud(50, 9);
    auto b = a;
    std::reverse(b.begin(), b.end());
    EXPECT_EQ(chamfer(a, b), 0.0);
    b[7].x += 1e-6;
    EXPECT_GT(chamfer(a, b), 0.0);
}

TEST(FScore, Basics) {
    const auto a = random_cloud(200, 5);
    EXPECT_EQ(fscore(a, a, 0.01), 1.0);
    std::vector<Vec3> far = a;
    for (auto& p : far) p.x += 10;
    EXPECT_EQ(fscore(a, far, 0.2), 0.0);
    EXPECT_THROW(fscore(a, a, 0.0), DegenerateInput);
    EXPECT_THROW(fscore(a, std::vector<Vec3>{}, 0.2), DegenerateInput);
}

TEST(FScore, OffsetCubesMatchBruteForce) {
    const TriMesh c0 = fixtures::box({0, 0, 0}, {1, 1, 1});
    const TriMesh c1 = fixtures::box({0.1, 0, 0}, {1.1, 1, 1});
    const auto a = sample_surface(c0, 3000, 1).points;
    const auto b = sample_surface(c1, 3000, 2).points;
    const double f = fscore(a, b, 0.2);
    EXPECT_NEAR(f, brute_fscore(a, b, 0.2), 1e-6);
    EXPECT_EQ(f, 1.0);
    const double tight = fscore(a, b, 0.05);
    EXPECT_NEAR(tight, brute_fscore(a, b, 0.05), 1e-6);
    EXPECT_GT(tight, 0.5);
    EXPECT_LT(tight, 1.0);
}

TEST(FScore, MatchesBruteForceAndIsSymmetric) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_cloud(400, 50 + s);
        const auto b = random_cloud(300, 80 + s, 0.7);
        const double thr = 0.05 + 0.01 * static_cast<double>(s);
        EXPECT_NEAR(fscore(a, b, thr), brute_fscore(a, b, thr), 1e-6);
        EXPECT_DOUBLE_EQ(fscore(a, b, thr), fscore(b, a, thr));
    }
}

TEST(VolumeIou, SelfAndDisjoint) {
    const TriMesh s = fixtures::uv_sphere(0.6);
    EXPECT_EQ(volume_iou(s, s, 20000, 1), 1.0);
    const TriMesh copy = s;
    EXPECT_EQ(volume_iou(s, copy, 20000, 1), 1.0);
    const TriMesh a = fixtures::box({-0.9, -0.5, -0.5}, {-0.1, 0.5, 0.5});
    const TriMesh b = fixtures::box({0.1, -0.5, -0.5}, {0.9, 0.5, 0.5});
    EXPECT_EQ(volume_iou(a, b, 20000, 1), 0.0);
}

TEST(VolumeIou, RejectsOpenMeshes) {
    EXPECT_THROW(volume_iou(fixtures::holed_plane(), fixtures::uv_sphere(), 1000, 1), NotWatertight);
    EXPECT_THROW(volume_iou(fixtures::uv_sphere(), fixtures::cylinder(0.5, -0.7, 0.7, false), 1000, 1),
                 NotWatertight);
}

TEST(VolumeIou, OffsetCubeWithinThreeStandardErrors) {
    const TriMesh a = fixtures::box({-1, -1, -1}, {1, 1, 1});
    const TriMesh b = fixtures::box({-0.9, -1, -1}, {1.1, 1, 1});
    const auto r = volume_iou_detail(a, b, 1000000, 42);
    const double expected = 1.9 / 2.1;
    EXPECT_GT(r.standard_error, 0.0);
    EXPECT_LE(std::abs(r.iou - expected), 3 * r.standard_error) << r.iou << " se " << r.standard_error;
    EXPECT_EQ(r.samples, 1000000u);
}

TEST(VolumeIou, MatchesParityOracleOn20Instances) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const TriMesh a = fixtures::random_shape(300 + s, 24);
        const TriMesh b = fixtures::random_shape(400 + s, 24);
        const std::size_t n = 3000;
        const std::uint64_t seed = 7 + s;
        const auto pts = stratified_samples(volume_domain(a, b), n, seed);
        EXPECT_NEAR(volume_iou(a, b, n, seed), parity_iou(a, b, pts), 1e-6) << "instance " << s;
    }
}

TEST(VolumeIou, StratifiedSamplesCoverEveryCell) {
    const Aabb box = Aabb::cube(1.0);
    const auto pts = stratified_samples(box, 1000, 3);
    ASSERT_EQ(pts.size(), 1000u);
    std::vector<int> hits(1000, 0);
    for (auto p : pts) {
        const int x = static_cast<int>((p.x + 1) * 5), y = static_cast<int>((p.y + 1) * 5),
                  z = static_cast<int>((p.z + 1) * 5);
        ++hits[static_cast<std::size_t>(x + 10 * (y + 10 * z))];
    }
    for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(OccupancyAccuracy, Cases) {
    const std::vector<std::uint8_t> labels{1, 0, 1, 0};
    EXPECT_EQ(occupancy_accuracy(std::vector<double>{0.9, 0.1, 0.5, 0.49}, labels), 1.0);
    EXPECT_EQ(occupancy_accuracy(std::vector<double>{0.1, 0.9, 0.2, 0.8}, labels), 0.0);
    EXPECT_THROW(occupancy_accuracy(std::vector<double>{0.5}, labels), ShapeError);

    Rng rng(11);
    const std::size_t n = 100000;
    std::vector<double> pred(n);
    std::vector<std::uint8_t> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
        pred[i] = uniform01(rng);
        lab[i] = i % 2;
    }
    const double acc = occupancy_accuracy(pred, lab);
    EXPECT_NEAR(acc, 0.5, 3 * std::sqrt(0.25 / static_cast<double>(n)));
}

TEST(MetricReport, IdenticalMeshesAndJson) {
    const TriMesh s = fixtures::uv_sphere();
    MetricConfig cfg;
    cfg.surface_samples = 2000;
    cfg.volume_samples = 8000;
    cfg.seed = 5;
    const auto r = evaluate_meshes(s, s, cfg);
    EXPECT_EQ(r.chamfer, 0.0);
    EXPECT_EQ(r.fscore, 1.0);
    EXPECT_EQ(r.volume_iou, 1.0);
    const auto j = r.to_json();
    EXPECT_EQ(j["chamfer_kind"], "l2_unsquared");
    EXPECT_EQ(j["seed"], 5);
    const auto open = evaluate_meshes(fixtures::holed_plane(), fixtures::holed_plane(), cfg);
    EXPECT_TRUE(open.to_json()["volume_iou"].is_null());
}
