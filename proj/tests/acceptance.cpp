// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include <meshforge/config.hpp>
#include <meshforge/fixtures.hpp>
#include <meshforge/flow.hpp>
#include <meshforge/metrics.hpp>
#include <meshforge/shapevae_train.hpp>
#include <meshforge/texture.hpp>
#include <meshforge/watertight.hpp>

#include "grad_suite.hpp"
#include "oracles.hpp"

using namespace meshforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// 1 ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    std::string worst_name;
    std::vector<std::string> failed;
    const auto cases = oracle::primitive_grad_cases();
    for (const auto& c : cases) {
        if (c.result.max_rel_error > worst) {
            worst = c.result.max_rel_error;
            worst_name = c.name;
        }
        if (!(c.result.max_rel_error <= 1e-3) || !(c.result.max_abs_grad > 0)) failed.push_back(c.name);
    }
    const double e2e = oracle::refine_end_to_end_error();
    const double secs = seconds_since(t0);
    std::string detail = std::to_string(cases.size()) + " primitives, worst rel err " + num(worst) + " (" +
                         worst_name + "); loss_refine rel err " + num(e2e) + "; " + num(secs, 3) + " s";
    for (const auto& f : failed) detail += "; failed " + f;
    return {failed.empty() && e2e <= 1e-2 && secs < 60, detail};
}

// 2 ---------------------------------------------------------------------------

Outcome watertight_guarantee() {
    bool ok = true;
    std::string detail;
    double slowest = 0;
    for (const auto& fx : fixtures::standard_fixtures()) {
        const auto t0 = std::chrono::steady_clock::now();
        const TriMesh out = watertight_convert(fx.mesh, 128);
        const double secs = seconds_since(t0);
        slowest = std::max(slowest, secs);
        const auto topo = analyze_topology(out);
        const bool closed = topo.closed_manifold();
        ok = ok && closed && secs < 10;
        if (!closed) detail += fx.name + " not closed; ";
        if (fx.name == "nested_shells") {
            // the inner shell bounds the cavity; it must be gone
            const bool one = topo.components == 1;
            ok = ok && one;
            detail += "nested_shells components " + std::to_string(topo.components) + "; ";
        }
    }
    detail += "7 fixtures checked, slowest " + num(slowest, 3) + " s";
    return {ok, detail};
}

// 3, 4, 5 -----------------------------------------------------------------------

struct ToyTraining {
    double seconds = 0;
    double coarse_iou = 0, refine_iou = 0, control_iou = 0, refine_no_reg_iou = 0;
    double coarse_train_iou = 0, refine_train_iou = 0;
    std::vector<std::string> fixture_names;
    std::vector<std::size_t> gt_components, reg_components, no_reg_components, coarse_components;
    ad::Checkpoint refined;
    ShapeDataset data;
    std::string error;
};

std::vector<std::size_t> fixture_components(const ShapeVae<float>& model, const std::vector<ShapeRecord>& shapes,
                                            std::size_t count, int resolution) {
    std::vector<std::size_t> out;
    ad::NoGradGuard ng;
    const auto np = static_cast<std::size_t>(model.config().encoder.num_points);
    for (std::size_t k = 0; k < count; ++k) {
        const auto& pts = shapes[k].samples.surface.points;
        const auto lat = model.encode(std::span<const Vec3>(pts.data(), std::min(np, pts.size())));
        try {
            out.push_back(count_components(decode_mesh(model, lat, resolution)));
        } catch (const EmptySurface&) {
            out.push_back(0);
        }
    }
    return out;
}

std::string list(const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "]";
}

ToyTraining run_toy_training() {
    ToyTraining r;
    const PipelineConfig cfg;
    TrainConfig tc = cfg.train();
    tc.eval_every = 0;
    const auto t0 = std::chrono::steady_clock::now();
    const auto names = [&] {
        std::vector<std::string> v;
        std::istringstream in(cfg.get_string("data.fixtures"));
        for (std::string n; std::getline(in, n, ',');) v.push_back(PipelineConfig::trim(n));
        return v;
    }();
    r.fixture_names = names;
    r.data = build_dataset(names, cfg.get_i32("data.random_shapes"), cfg.get_i32("data.validation_shapes"),
                           cfg.training_samples(), derive_seed(static_cast<std::uint64_t>(cfg.get_int("run.seed")), "data"));
    std::cerr << "[toy] data ready in " << num(seconds_since(t0), 3) << " s, " << r.data.train.size() << " train / "
              << r.data.validation.size() << " held-out shapes\n";
    auto progress = [](const EpochRecord& e) {
        if (e.epoch % 10 == 0) std::cerr << "[toy] " << e.stage << " epoch " << e.epoch << " loss " << e.loss << "\n";
    };
    const int decode_res = cfg.get_i32("decode.resolution");
    const std::size_t nfx = names.size();
    for (std::size_t k = 0; k < nfx; ++k) r.gt_components.push_back(count_components(r.data.train[k].mesh));

    ShapeVae<float> model(cfg.model(), derive_seed(static_cast<std::uint64_t>(cfg.get_int("run.seed")), "model"));
    {
        Trainer<float> tr(model, r.data.train, tc);
        tr.log = progress;
        tr.run_coarse(tc.coarse_epochs);
    }
    const ad::Checkpoint coarse = model.to_checkpoint();
    r.coarse_iou = evaluate(model, r.data.validation).viou;
    r.coarse_train_iou = evaluate(model, r.data.train).viou;
    r.coarse_components = fixture_components(model, r.data.train, nfx, decode_res);
    std::cerr << "[toy] coarse held-out IoU " << r.coarse_iou << " at " << num(seconds_since(t0), 4) << " s\n";

    {
        Trainer<float> tr(model, r.data.train, tc);
        tr.log = progress;
        tr.run_refine(tc.refine_epochs);
    }
    r.seconds = seconds_since(t0);
    r.refine_iou = evaluate(model, r.data.validation).viou;
    r.refine_train_iou = evaluate(model, r.data.train).viou;
    r.reg_components = fixture_components(model, r.data.train, nfx, decode_res);
    r.refined = model.to_checkpoint();
    std::cerr << "[toy] refine held-out IoU " << r.refine_iou << " at " << num(r.seconds, 4) << " s\n";

    {
        auto ablate = ShapeVae<float>::from_checkpoint(coarse);
        TrainConfig no_reg = tc;
        no_reg.weights.reg = 0.0;
        Trainer<float> tr(ablate, r.data.train, no_reg);
        tr.log = progress;
        tr.run_refine(tc.refine_epochs);
        r.refine_no_reg_iou = evaluate(ablate, r.data.validation).viou;
        r.no_reg_components = fixture_components(ablate, r.data.train, nfx, decode_res);
    }
    {
        // same number of extra steps without the render and ray terms
        auto control = ShapeVae<float>::from_checkpoint(coarse);
        Trainer<float> tr(control, r.data.train, tc);
        tr.log = progress;
        tr.run_coarse(tc.refine_epochs, tc.refine_lr);
        r.control_iou = evaluate(control, r.data.validation).viou;
    }
    return r;
}

Outcome refine_trend(const ToyTraining& t) {
    const double gain = t.refine_iou - t.coarse_iou;
    std::string detail = "held-out IoU coarse " + num(t.coarse_iou) + " -> refine " + num(t.refine_iou) + " (gain " +
                         num(gain, 3) + "); continued coarse at refine lr " + num(t.control_iou) + "; train IoU " +
                         num(t.coarse_train_iou) + " -> " + num(t.refine_train_iou) +
                         "; toy training " + num(t.seconds, 4) + " s";
    return {gain >= 0.01 && t.seconds < 1800, detail};
}

Outcome floater_ablation(const ToyTraining& t) {
    bool reg_matches = true, no_reg_has_floaters = false;
    for (std::size_t k = 0; k < t.gt_components.size(); ++k) {
        reg_matches = reg_matches && t.reg_components[k] == t.gt_components[k];
        no_reg_has_floaters = no_reg_has_floaters || t.no_reg_components[k] > t.gt_components[k];
    }
    std::string names;
    for (const auto& n : t.fixture_names) names += (names.empty() ? "" : ",") + n;
    return {reg_matches && no_reg_has_floaters,
            "components over {" + names + "}: ground truth " + list(t.gt_components) + ", reg 0.5 " +
                list(t.reg_components) + ", reg 0 " + list(t.no_reg_components) + ", coarse " +
                list(t.coarse_components)};
}

Outcome covariance(const ToyTraining& t) {
    const auto model = ShapeVae<float>::from_checkpoint(t.refined);
    const double base = evaluate(model, t.data.validation).viou;
    Rng rng(derive_seed(7, "acceptance.azimuth"));
    double worst = 1;
    for (int k = 0; k < 8; ++k) {
        const double az = 2 * kPi * uniform01(rng);
        worst = std::min(worst, evaluate(model, t.data.validation, az).viou);
    }
    return {worst >= base - 0.02, "unrotated IoU " + num(base) + ", worst of 8 azimuths " + num(worst)};
}

// 6 ---------------------------------------------------------------------------

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed, double spread) {
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

Outcome metric_oracles() {
    double chamfer_err = 0, fscore_err = 0, iou_err = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_cloud(500, 2 * s, 1.0), b = random_cloud(400, 2 * s + 1, 0.8);
        const auto ab = brute_nn(a, b), ba = brute_nn(b, a);
        double ma = 0, mb = 0, pa = 0, pb = 0;
        const double thr = 0.05 + 0.01 * static_cast<double>(s);
        for (double d : ab) {
            ma += d;
            pa += d <= thr;
        }
        for (double d : ba) {
            mb += d;
            pb += d <= thr;
        }
        const double cd = 0.5 * (ma / static_cast<double>(ab.size()) + mb / static_cast<double>(ba.size()));
        const double p = pa / static_cast<double>(ab.size()), r = pb / static_cast<double>(ba.size());
        const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        chamfer_err = std::max(chamfer_err, std::abs(chamfer(a, b) - cd));
        fscore_err = std::max(fscore_err, std::abs(fscore(a, b, thr) - f));

        const TriMesh ma_mesh = fixtures::random_shape(300 + s, 24), mb_mesh = fixtures::random_shape(400 + s, 24);
        const std::size_t n = 3000;
        const auto pts = stratified_samples(volume_domain(ma_mesh, mb_mesh), n, 7 + s);
        std::size_t inter = 0, uni = 0;
        for (auto q : pts) {
            const bool ia = oracle::inside_by_parity(q, ma_mesh), ib = oracle::inside_by_parity(q, mb_mesh);
            inter += ia && ib;
            uni += ia || ib;
        }
        const double oracle_iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
        iou_err = std::max(iou_err, std::abs(volume_iou(ma_mesh, mb_mesh, n, 7 + s) - oracle_iou));
    }
    const TriMesh c0 = fixtures::box({-1, -1, -1}, {1, 1, 1}), c1 = fixtures::box({-0.9, -1, -1}, {1.1, 1, 1});
    const auto cube = volume_iou_detail(c0, c1, 1000000, 42);
    const double dev = std::abs(cube.iou - 1.9 / 2.1);
    const bool ok = chamfer_err <= 1e-6 && fscore_err <= 1e-6 && iou_err <= 1e-6 && dev <= 3 * cube.standard_error;
    return {ok, "20 instances, max err chamfer " + num(chamfer_err, 3) + ", fscore " + num(fscore_err, 3) +
                    ", volume IoU " + num(iou_err, 3) + "; offset cube IoU " + num(cube.iou, 6) + " vs " +
                    num(1.9 / 2.1, 6) + " (" + num(dev / cube.standard_error, 3) + " SE)"};
}

// 7 ---------------------------------------------------------------------------

Outcome fusion_correctness() {
    bool ok = true;
    std::string detail;
    // single orthographic view of the axis-aligned quad
    {
        const TriMesh q = fixtures::uv_quad();
        const int n = 32;
        Camera cam;
        cam.position = {0, 0, 3};
        cam.up = {0, 1, 0};
        cam.orthographic = true;
        cam.width = cam.height = n;
        View v;
        v.camera = cam;
        v.color = Image(n, n, 3);
        Rng rng(8);
        for (auto& x : v.color.data) x = static_cast<float>(uniform01(rng));
        v.depth = rasterize(q, cam).depth;
        auto a = bake_uv_geometry(q, n, n);
        gather_candidates(a, std::span<const View>(&v, 1));
        fuse(a, 0.1);
        double err = 0;
        bool all = true;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const auto t = a.index(i, j);
                all = all && a.visible[t];
                for (int c = 0; c < 3; ++c) err = std::max(err, std::abs(a.color[t][c] - v.color.at(i, j, c)));
            }
        ok = ok && all && err <= 1e-9;
        detail += "back-projection max err " + num(err, 3) + "; ";
    }
    // two-quad fixture from four elevated views
    const TriMesh m = fixtures::two_quads();
    const auto shade = [](std::int32_t f, Vec3) { return f < 2 ? Vec3{1, 0, 0} : Vec3{0, 0, 1}; };
    std::vector<View> views;
    for (int k = 0; k < 4; ++k)
        views.push_back(render_view(m, orbit_camera(kPi / 4 + k * kPi / 2, 55 * kPi / 180, 3.0, 96), shade));
    auto run = [&](bool filter) {
        GatherConfig g;
        g.filter_discontinuities = filter;
        auto a = bake_uv_geometry(m, 128, 128);
        gather_candidates(a, views, g);
        fuse(a, 0.1);
        return a;
    };
    std::size_t hull_violations = 0;
    auto contaminated = [&](const UvAtlas& a) {
        std::size_t n = 0;
        for (std::size_t t = 0; t < a.texels(); ++t) {
            if (!a.visible[t]) continue;
            for (int c = 0; c < 3; ++c) {
                double lo = 1e300, hi = -1e300;
                for (const auto& view : a.candidates)
                    if (view[t].valid) {
                        lo = std::min(lo, view[t].color[c]);
                        hi = std::max(hi, view[t].color[c]);
                    }
                if (a.color[t][c] < lo - 1e-12 || a.color[t][c] > hi + 1e-12) ++hull_violations;
            }
            if (a.face[t] >= 2 && a.color[t].x > 1e-6) ++n;
        }
        return n;
    };
    const auto filtered = run(true), raw = run(false);
    const std::size_t cf = contaminated(filtered), cr = contaminated(raw);
    ok = ok && hull_violations == 0 && cf == 0 && cr > 0;
    detail += "hull violations " + std::to_string(hull_violations) + "; contaminated rear texels filtered " +
              std::to_string(cf) + ", unfiltered " + std::to_string(cr);
    return {ok, detail};
}

// 8 ---------------------------------------------------------------------------

Outcome depth_normalization() {
    Rng rng(5);
    std::size_t exact = 0;
    const std::size_t trials = 1000;
    for (std::size_t k = 0; k < trials; ++k) {
        const Vec3 lo{-uniform01(rng), -uniform01(rng), -uniform01(rng)};
        const Vec3 hi{uniform01(rng), uniform01(rng), uniform01(rng) + 1e-3};
        const Aabb box{lo, hi};
        const double d = box.diagonal() * (0.51 + 3 * uniform01(rng));
        const std::vector<double> depth = {d, d - box.diagonal()};
        const auto out = normalize_depth(depth, d, box);
        exact += out[0] == 1.0 && out[1] == 0.0;
    }
    return {exact == trials, std::to_string(exact) + "/" + std::to_string(trials) + " random boxes bit-exact at both ends"};
}

// 9 ---------------------------------------------------------------------------

Outcome rectified_flow() {
    // oracle velocity v = (x - x0) / t
    Rng rng(12);
    std::vector<double> x0(1000);
    for (auto& v : x0) v = 3 * standard_normal(rng) + 1;
    const VelocityField oracle_v = [&](std::span<const double> x, double t) {
        std::vector<double> v(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) v[i] = (x[i] - x0[i]) / t;
        return v;
    };
    FlowSchedule one;
    one.steps = 1;
    const auto s1 = euler_sample(oracle_v, x0.size(), one, 99);
    double err = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) err = std::max(err, std::abs(s1[i] - x0[i]));

    const FlowSchedule s;
    const std::size_t n = 100000;
    const auto t = sample_timesteps(s, n, 17);
    const int bins = 40;
    std::vector<double> observed(bins, 0.0), expected(bins);
    for (double v : t) observed[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(v * bins)))] += 1;
    for (int b = 0; b < bins; ++b)
        expected[static_cast<std::size_t>(b)] =
            static_cast<double>(n) * (logit_normal_cdf((b + 1.0) / bins, s) - logit_normal_cdf(double(b) / bins, s));
    const double p = oracle::chi_square_p(observed, expected);

    const ToyFlowConfig cfg;
    const auto model = train_toy_flow(cfg);
    const auto samples = euler_sample(model, 10000, cfg.schedule, 2024);
    double m = 0, var = 0;
    for (double x : samples) m += x;
    m /= static_cast<double>(samples.size());
    for (double x : samples) var += (x - m) * (x - m);
    const double sd = std::sqrt(var / static_cast<double>(samples.size() - 1));
    const bool ok = err <= 1e-12 && p > 0.01 && std::abs(m - cfg.target_mean) <= 0.1 * cfg.target_mean &&
                    std::abs(sd - cfg.target_std) <= 0.2 * cfg.target_std;
    return {ok, "one-step oracle err " + num(err, 3) + "; chi-square p " + num(p, 3) + "; toy mean " + num(m) +
                    " (target " + num(cfg.target_mean) + "), std " + num(sd) + " (target " + num(cfg.target_std) + ")"};
}

// 10 --------------------------------------------------------------------------

const char* kTinyTrainConfig = R"([data]
fixtures = sphere
random_shapes = 0
validation_shapes = 0
surface_points = 2048
near_points = 4096
grid_cells = 16

[model]
num_points = 512

[train]
coarse_epochs = 40
refine_epochs = 2
batch_near = 512
batch_grid = 512
refine_resolution = 16
image_size = 32
reg_rays = 8
reg_samples = 16
eval_every = 0
)";

struct CliStep {
    std::string name;
    std::string args;
    std::string manifest;
};

std::vector<CliStep> cli_steps() {
    return {
        {"fixtures", "fixtures --out fx", "fx/manifest.json"},
        {"watertight", "watertight --in fx/open_cylinder.obj --out wt/cyl.obj --res 64", "wt/cyl.obj.manifest.json"},
        {"sample",
         "--set sample.surface_points=4000 --set sample.near_points=4000 --set sample.grid_cells=16 sample --in "
         "fx/torus.obj --out s/torus.mgos",
         "s/torus.mgos.manifest.json"},
        {"train", "--config tiny.cfg train --out m/model.mgck", "m/model.mgck.manifest.json"},
        {"encode", "encode --model m/model.mgck --in fx/sphere.obj --out l/sphere.mgck", "l/sphere.mgck.manifest.json"},
        {"decode", "decode --model m/model.mgck --latent l/sphere.mgck --out d/sphere.obj --res 32",
         "d/sphere.obj.manifest.json"},
        {"render", "--set render.size=64 render --in fx/sphere.obj --out rv --views 3", "rv/manifest.json"},
        {"fuse", "--set fuse.resolution=64 fuse --mesh fx/sphere.obj --views rv/views.json --out fz",
         "fz/manifest.json"},
        {"inpaint-prep",
         "--set fuse.erosion_radius=2 --set fuse.random_erosion=true inpaint-prep --mesh fx/sphere.obj --texture "
         "fz/texture.pfm --mask fz/visible.png --out ip",
         "ip/manifest.json"},
        {"flow-demo", "--set flow.train_steps=300 --set flow.samples=1000 flow-demo --out fl", "fl/manifest.json"},
        {"eval",
         "--set eval.surface_samples=2000 --set eval.volume_samples=20000 eval --pred wt/cyl.obj --gt fx/sphere.obj "
         "--out e/report.json",
         "e/report.json.manifest.json"},
    };
}

Outcome cli_determinism() {
    const fs::path root = fs::temp_directory_path() / ("meshforge_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    std::map<std::string, std::vector<nlohmann::json>> outputs;
    std::vector<std::string> failures;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        fs::create_directories(dir);
        std::ofstream(dir / "tiny.cfg") << kTinyTrainConfig;
        for (const auto& step : cli_steps()) {
            const std::string cmd = "cd '" + dir.string() + "' && '" MESHFORGE_CLI "' --deterministic --seed 7 " +
                                    step.args + " > " + step.name + ".stdout 2> " + step.name + ".stderr";
            const int rc = std::system(cmd.c_str());
            if (rc != 0) {
                failures.push_back(step.name + " exit " + std::to_string(rc) + " in run " + run);
                outputs[step.name].push_back(nullptr);
                continue;
            }
            std::ifstream in(dir / step.manifest);
            const auto j = nlohmann::json::parse(in);
            outputs[step.name].push_back(j.at("outputs"));
        }
    }
    std::size_t identical = 0;
    for (const auto& step : cli_steps()) {
        const auto& o = outputs[step.name];
        if (o.size() == 2 && !o[0].is_null() && o[0] == o[1] && !o[0].empty()) ++identical;
        else if (o.size() == 2 && !o[0].is_null() && !o[1].is_null()) failures.push_back(step.name + " hashes differ");
    }
    std::string detail = std::to_string(identical) + "/" + std::to_string(cli_steps().size()) +
                         " commands hash-identical across two runs";
    for (const auto& f : failures) detail += "; " + f;
    if (failures.empty()) fs::remove_all(root);
    else detail += " (kept " + root.string() + ")";
    return {identical == cli_steps().size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

    const std::map<int, std::string> titles = {
        {1, "gradient integrity"},  {2, "watertight guarantee"}, {3, "refine improves held-out IoU"},
        {4, "floater ablation"},    {5, "geometric covariance"}, {6, "metric oracle equivalence"},
        {7, "fusion correctness"},  {8, "depth normalization"},  {9, "rectified flow"},
        {10, "CLI determinism"}};
    std::map<int, Outcome> results;
    auto record = [&](int k, const std::function<Outcome()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        results[k] = o;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << ". " << titles.at(k) << ": " << o.detail << " ["
                  << num(seconds_since(t0), 3) << " s]" << std::endl;
    };

    if (wanted(1)) record(1, gradient_integrity);
    if (wanted(2)) record(2, watertight_guarantee);
    if (wanted(6)) record(6, metric_oracles);
    if (wanted(7)) record(7, fusion_correctness);
    if (wanted(8)) record(8, depth_normalization);
    if (wanted(9)) record(9, rectified_flow);
    if (wanted(10)) record(10, cli_determinism);
    if (wanted(3) || wanted(4) || wanted(5)) {
        ToyTraining toy;
        bool trained = false;
        std::string error;
        try {
            toy = run_toy_training();
            trained = true;
        } catch (const std::exception& e) {
            error = e.what();
        }
        for (int k : {3, 4, 5}) {
            if (!wanted(k)) continue;
            if (!trained) {
                record(k, [&] { return Outcome{false, "toy training threw " + error}; });
                continue;
            }
            if (k == 3) record(3, [&] { return refine_trend(toy); });
            if (k == 4) record(4, [&] { return floater_ablation(toy); });
            if (k == 5) record(5, [&] { return covariance(toy); });
        }
    }

    std::size_t passed = 0;
    for (const auto& [k, o] : results) passed += o.pass;
    std::cout << "acceptance: " << passed << "/" << results.size() << " criteria passed" << std::endl;
    return passed == results.size() ? 0 : 1;
}
