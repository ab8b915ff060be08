#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include <meshforge/config.hpp>
#include <meshforge/fixtures.hpp>
#include <meshforge/flow.hpp>
#include <meshforge/image_io.hpp>
#include <meshforge/metrics.hpp>
#include <meshforge/obj_io.hpp>
#include <meshforge/occupancy.hpp>
#include <meshforge/parallel.hpp>
#include <meshforge/renderer.hpp>
#include <meshforge/shapevae.hpp>
#include <meshforge/shapevae_train.hpp>
#include <meshforge/texture.hpp>
#include <meshforge/watertight.hpp>

namespace fs = std::filesystem;
using namespace meshforge;
using json = nlohmann::json;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::int64_t> seed;
    int threads = 0;
    bool deterministic = false;
    std::string manifest_path;
};

// Thrown for bad command-line values so they exit like config errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

PipelineConfig resolve_config(const Globals& g) {
    PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(g.config_path);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError(kv, "override must be key=value");
        cfg.set(PipelineConfig::trim(kv.substr(0, eq)), PipelineConfig::trim(kv.substr(eq + 1)));
    }
    if (g.seed) cfg.set("run.seed", std::to_string(*g.seed));
    if (g.threads > 0) cfg.set("run.threads", std::to_string(g.threads));
    if (g.deterministic) cfg.set("run.deterministic", "true");
    cfg.validate();
    return cfg;
}

void apply_threads(const PipelineConfig& cfg) {
    if (cfg.get_bool("run.deterministic")) set_max_threads(1);
    else set_max_threads(cfg.get_i32("run.threads"));
}

std::uint64_t seed_of(const PipelineConfig& cfg, std::string_view stage) {
    return derive_seed(static_cast<std::uint64_t>(cfg.get_int("run.seed")), stage);
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

void ensure_parent(const std::string& path) { ensure_dir(fs::path(path).parent_path().string()); }

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_text(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << text;
}

void save_checkpoint(const std::string& path, const ad::Checkpoint& ck) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    ad::write_checkpoint(out, ck);
}

ad::Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path);
    return ad::read_checkpoint(in);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

// Barycentric interpolation of the corner UVs of `face` at `p`.
Vec2 uv_at(const TriMesh& mesh, std::int32_t face, Vec3 p) {
    const auto f = static_cast<std::size_t>(face);
    const auto [a, b, c] = mesh.triangle(f);
    const Vec3 n = cross(b - a, c - a);
    const double area = dot(n, n);
    if (!(area > 0)) return mesh.face_uvs[f][0];
    const double wa = dot(cross(b - p, c - p), n) / area;
    const double wb = dot(cross(c - p, a - p), n) / area;
    const double wc = 1 - wa - wb;
    const auto& uv = mesh.face_uvs[f];
    return {wa * uv[0].x + wb * uv[1].x + wc * uv[2].x, wa * uv[0].y + wb * uv[1].y + wc * uv[2].y};
}

Image atlas_color_image(const UvAtlas& atlas) {
    Image img(atlas.width, atlas.height, 3);
    for (std::size_t t = 0; t < atlas.texels(); ++t)
        if (atlas.visible[t])
            for (int c = 0; c < 3; ++c) img.data[t * 3 + static_cast<std::size_t>(c)] = static_cast<float>(atlas.color[t][c]);
    return img;
}

Image mask_from(std::span<const std::uint8_t> m, int w, int h) {
    Image img(w, h, 1);
    for (std::size_t t = 0; t < m.size(); ++t) img.data[t] = m[t] ? 1.0f : 0.0f;
    return img;
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string n;
    while (std::getline(in, n, ','))
        if (!PipelineConfig::trim(n).empty()) out.push_back(PipelineConfig::trim(n));
    return out;
}

ShapeVae<float> load_model(const std::string& path, RunManifest& m) {
    m.add_input(path);
    return ShapeVae<float>::from_checkpoint(load_checkpoint_file(path));
}

// ---------------------------------------------------------------------------
// Commands. Each fills the manifest and returns the manifest's default path.

std::string cmd_fixtures(const PipelineConfig&, RunManifest& m, const std::string& out) {
    ensure_dir(out);
    StageTimer t(m, "fixtures");
    for (const auto& f : fixtures::standard_fixtures()) {
        const std::string path = join(out, f.name + ".obj");
        write_obj(path, f.mesh);
        m.add_output(path);
    }
    return join(out, "manifest.json");
}

std::string cmd_watertight(const PipelineConfig& cfg, RunManifest& m, const std::string& in, const std::string& out) {
    m.add_input(in);
    TriMesh mesh, closed;
    {
        StageTimer t(m, "read");
        mesh = read_obj(in);
    }
    {
        StageTimer t(m, "watertight");
        closed = watertight_convert(mesh, cfg.get_i32("watertight.resolution"));
    }
    const auto topo = analyze_topology(closed);
    if (!topo.closed_manifold()) throw NotWatertight("watertight: output is not a closed edge-manifold mesh");
    ensure_parent(out);
    write_obj(out, closed);
    m.add_output(out);
    std::cout << json{{"vertices", closed.vertices.size()},
                      {"faces", closed.faces.size()},
                      {"components", count_components(closed)},
                      {"closed_manifold", true}}
                     .dump()
              << "\n";
    return out + ".manifest.json";
}

std::string cmd_sample(const PipelineConfig& cfg, RunManifest& m, const std::string& in, const std::string& out) {
    m.add_input(in);
    const TriMesh mesh = read_obj(in);
    OccupancySampleSet s;
    {
        StageTimer t(m, "sample");
        s = build_sample_set(mesh, cfg.samples(), seed_of(cfg, "sample"));
    }
    ensure_parent(out);
    std::ofstream o(out, std::ios::binary);
    if (!o) throw FormatError("cannot write " + out);
    write_sample_set(o, s);
    o.close();
    m.add_output(out);
    return out + ".manifest.json";
}

std::string cmd_train(const PipelineConfig& cfg, RunManifest& m, const std::string& out, const std::string& coarse_out,
                      const std::string& log_out) {
    ShapeDataset data;
    {
        StageTimer t(m, "data");
        data = build_dataset(split_names(cfg.get_string("data.fixtures")), cfg.get_i32("data.random_shapes"),
                             cfg.get_i32("data.validation_shapes"), cfg.training_samples(), seed_of(cfg, "data"));
    }
    ShapeVae<float> model(cfg.model(), seed_of(cfg, "model"));
    const TrainConfig tc = cfg.train();
    Trainer<float> trainer(model, data.train, tc);
    trainer.validation = data.validation;
    ensure_parent(log_out);
    std::ofstream log(log_out);
    if (!log) throw FormatError("cannot write " + log_out);
    trainer.log = [&](const EpochRecord& r) {
        log << r.to_json().dump() << "\n";
        std::cerr << r.stage << " epoch " << r.epoch << " loss " << r.loss
                  << (r.viou >= 0 ? " viou " + std::to_string(r.viou) : std::string()) << "\n";
    };
    {
        StageTimer t(m, "coarse");
        trainer.run_coarse(tc.coarse_epochs);
    }
    if (!coarse_out.empty()) {
        save_checkpoint(coarse_out, model.to_checkpoint({{"stage", "coarse"}}));
        m.add_output(coarse_out);
    }
    {
        StageTimer t(m, "refine");
        trainer.run_refine(tc.refine_epochs);
    }
    save_checkpoint(out, model.to_checkpoint({{"stage", "refine"}}));
    log.close();
    m.add_output(out);
    m.add_output(log_out);
    return out + ".manifest.json";
}

std::string cmd_encode(const PipelineConfig& cfg, RunManifest& m, const std::string& model_path,
                       const std::string& in, const std::string& out) {
    const auto model = load_model(model_path, m);
    m.add_input(in);
    const TriMesh mesh = read_obj(in);
    TriplaneLatent<float> lat;
    {
        StageTimer t(m, "encode");
        const auto n = static_cast<std::size_t>(model.config().encoder.num_points);
        const PointCloud cloud = sample_surface(mesh, n, seed_of(cfg, "encode"));
        ad::NoGradGuard ng;
        lat = model.encode(cloud);
    }
    save_checkpoint(out, latent_to_checkpoint(lat));
    m.add_output(out);
    return out + ".manifest.json";
}

std::string cmd_decode(const PipelineConfig& cfg, RunManifest& m, const std::string& model_path,
                       const std::string& latent_path, const std::string& out) {
    const auto model = load_model(model_path, m);
    m.add_input(latent_path);
    const auto lat = latent_from_checkpoint<float>(load_checkpoint_file(latent_path));
    if (lat.resolution != model.config().encoder.resolution || lat.channels != model.config().encoder.latent_channels)
        throw ShapeError("decode: latent does not match the model's triplane shape");
    TriMesh mesh;
    {
        StageTimer t(m, "decode");
        ad::NoGradGuard ng;
        mesh = decode_mesh(model, lat, cfg.get_i32("decode.resolution"));
    }
    ensure_parent(out);
    write_obj(out, mesh);
    m.add_output(out);
    return out + ".manifest.json";
}

std::string cmd_render(const PipelineConfig& cfg, RunManifest& m, const std::string& in, const std::string& texture,
                       int views, const std::string& out) {
    if (views < 1) throw UsageError("--views must be >= 1");
    m.add_input(in);
    const TriMesh mesh = read_obj(in);
    std::optional<Image> tex;
    if (!texture.empty()) {
        if (!mesh.has_uvs()) throw MissingUVs("render: a texture needs a mesh with UVs");
        m.add_input(texture);
        tex = read_png(texture);
    }
    ensure_dir(out);
    const double deg = kPi / 180.0;
    const double az0 = cfg.get_double("render.azimuth_degrees") * deg;
    const double el = cfg.get_double("render.elevation_degrees") * deg;
    const int size = cfg.get_i32("render.size");
    json listing = json::array();
    StageTimer t(m, "render");
    for (int k = 0; k < views; ++k) {
        const Camera cam = orbit_camera(az0 + 2 * kPi * k / views, el, cfg.get_double("render.distance"), size,
                                        cfg.get_double("render.fov_degrees") * deg);
        const View v = render_view(mesh, cam, [&](std::int32_t face, Vec3 p) -> Vec3 {
            if (tex) {
                const Vec2 uv = uv_at(mesh, face, p);
                return sample_bilinear(*tex, uv.x * tex->width - 0.5, (1 - uv.y) * tex->height - 0.5);
            }
            return (face_normal(mesh.triangle(static_cast<std::size_t>(face))) + Vec3{1, 1, 1}) * 0.5;
        });
        const std::string stem = "view" + std::to_string(k);
        const std::string color = join(out, stem + ".color.pfm"), depth = join(out, stem + ".depth.pfm"),
                          camera = join(out, stem + ".camera.json"), preview = join(out, stem + ".png");
        Image d(size, size, 1);
        for (std::size_t i = 0; i < v.depth.size(); ++i) d.data[i] = static_cast<float>(v.depth[i]);
        write_pfm(color, v.color);
        write_pfm(depth, d);
        write_png(preview, v.color);
        write_text(camera, camera_to_json(cam).dump(2) + "\n");
        for (const auto& p : {color, depth, camera, preview}) m.add_output(p);
        listing.push_back({{"camera", stem + ".camera.json"}, {"color", stem + ".color.pfm"}, {"depth", stem + ".depth.pfm"}});
    }
    const std::string list_path = join(out, "views.json");
    write_text(list_path, json{{"views", listing}}.dump(2) + "\n");
    m.add_output(list_path);
    return join(out, "manifest.json");
}

std::vector<View> load_views(const std::string& path, RunManifest& m) {
    m.add_input(path);
    const json j = read_json(path);
    if (!j.contains("views") || !j["views"].is_array()) throw FormatError(path + ": expected {\"views\": [...]}");
    const fs::path base = fs::path(path).parent_path();
    std::vector<View> views;
    for (const auto& e : j["views"]) {
        auto resolve = [&](const char* key) {
            if (!e.contains(key) || !e[key].is_string()) throw FormatError(path + ": view entry needs '" + key + "'");
            const fs::path p(e[key].get<std::string>());
            return (p.is_absolute() ? p : base / p).string();
        };
        const std::string cam_path = resolve("camera"), color_path = resolve("color"), depth_path = resolve("depth");
        for (const auto& p : {cam_path, color_path, depth_path}) m.add_input(p);
        View v;
        v.camera = camera_from_json(read_json(cam_path));
        v.color = color_path.ends_with(".png") ? read_png(color_path) : read_pfm(color_path);
        const Image d = read_pfm(depth_path);
        if (v.color.width != v.camera.width || v.color.height != v.camera.height || d.width != v.camera.width ||
            d.height != v.camera.height || d.channels != 1 || v.color.channels < 3)
            throw FormatError(path + ": view images do not match the camera resolution");
        if (v.color.channels != 3) {
            Image rgb(v.color.width, v.color.height, 3);
            for (std::size_t i = 0; i < static_cast<std::size_t>(rgb.width) * rgb.height; ++i)
                for (int c = 0; c < 3; ++c)
                    rgb.data[i * 3 + static_cast<std::size_t>(c)] = v.color.data[i * static_cast<std::size_t>(v.color.channels) + static_cast<std::size_t>(c)];
            v.color = std::move(rgb);
        }
        v.depth.assign(d.data.begin(), d.data.end());
        views.push_back(std::move(v));
    }
    if (views.empty()) throw DegenerateInput(path + ": no views");
    return views;
}

std::string cmd_fuse(const PipelineConfig& cfg, RunManifest& m, const std::string& mesh_path,
                     const std::string& views_path, const std::string& out) {
    m.add_input(mesh_path);
    const TriMesh mesh = read_obj(mesh_path);
    const auto views = load_views(views_path, m);
    const int res = cfg.get_i32("fuse.resolution");
    UvAtlas atlas;
    {
        StageTimer t(m, "bake");
        atlas = bake_uv_geometry(mesh, res, res);
    }
    {
        StageTimer t(m, "gather");
        gather_candidates(atlas, views, cfg.gather());
    }
    {
        StageTimer t(m, "fuse");
        fuse(atlas, cfg.get_double("fuse.temperature"));
    }
    ensure_dir(out);
    const Image color = atlas_color_image(atlas);
    const std::string png = join(out, "texture.png"), pfm = join(out, "texture.pfm"), vis = join(out, "visible.png");
    write_png(png, color);
    write_pfm(pfm, color);
    write_png(vis, mask_from(atlas.visible, res, res));
    for (const auto& p : {png, pfm, vis}) m.add_output(p);
    return join(out, "manifest.json");
}

std::string cmd_inpaint_prep(const PipelineConfig& cfg, RunManifest& m, const std::string& mesh_path,
                             const std::string& texture_path, const std::string& mask_path, const std::string& out) {
    m.add_input(mesh_path);
    m.add_input(texture_path);
    m.add_input(mask_path);
    const TriMesh mesh = read_obj(mesh_path);
    const Image tex = texture_path.ends_with(".png") ? read_png(texture_path) : read_pfm(texture_path);
    const Image mask = read_png(mask_path);
    if (tex.width != mask.width || tex.height != mask.height || tex.channels < 3)
        throw FormatError("inpaint-prep: texture and mask sizes differ");
    UvAtlas atlas;
    {
        StageTimer t(m, "bake");
        atlas = bake_uv_geometry(mesh, tex.width, tex.height);
    }
    atlas.color.assign(atlas.texels(), Vec3{});
    atlas.visible.assign(atlas.texels(), 0);
    for (std::size_t t = 0; t < atlas.texels(); ++t) {
        const auto c = static_cast<std::size_t>(tex.channels);
        atlas.color[t] = {tex.data[t * c], tex.data[t * c + 1], tex.data[t * c + 2]};
        atlas.visible[t] = atlas.chart[t] && mask.data[t * static_cast<std::size_t>(mask.channels)] > 0.5f;
    }
    InpaintCondition cond;
    {
        StageTimer t(m, "condition");
        const double r = cfg.get_double("fuse.erosion_radius");
        cond = cfg.get_bool("fuse.random_erosion")
                   ? export_inpaint_condition(atlas, r, seed_of(cfg, "inpaint.erosion"))
                   : export_inpaint_condition(atlas, r);
    }
    ensure_dir(out);
    const std::string n = join(out, "normal.pfm"), p = join(out, "position.pfm"), c = join(out, "maskedcolor.pfm"),
                      k = join(out, "inpaint_mask.png");
    write_pfm(n, cond.normal());
    write_pfm(p, cond.position());
    write_pfm(c, cond.masked_color());
    write_png(k, cond.inpaint);
    for (const auto& f : {n, p, c, k}) m.add_output(f);
    return join(out, "manifest.json");
}

std::string cmd_flow_demo(const PipelineConfig& cfg, RunManifest& m, const std::string& out) {
    const ToyFlowConfig fc = cfg.flow();
    std::vector<double> losses;
    VelocityMlp<double> model(fc.hidden, fc.seed);
    {
        StageTimer t(m, "train");
        model = train_toy_flow(fc, &losses);
    }
    std::vector<double> samples;
    {
        StageTimer t(m, "sample");
        samples = euler_sample(model, static_cast<std::size_t>(cfg.get_int("flow.samples")), fc.schedule,
                               seed_of(cfg, "flow.sample"));
    }
    ensure_dir(out);
    std::ostringstream csv;
    csv << "index,x\n";
    for (std::size_t i = 0; i < samples.size(); ++i) csv << i << ',' << fmt(samples[i]) << '\n';
    const std::string csv_path = join(out, "samples.csv"), png_path = join(out, "histogram.png"),
                      ck_path = join(out, "velocity.mgck");
    write_text(csv_path, csv.str());

    // 64 bins over mean +- 4 target std, bars in white, target density in red.
    const int bins = 64, w = 256, h = 128;
    const double lo = fc.target_mean - 4 * fc.target_std, hi = fc.target_mean + 4 * fc.target_std;
    std::vector<double> counts(bins, 0.0);
    for (double x : samples) {
        const int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
        if (b >= 0 && b < bins) counts[static_cast<std::size_t>(b)] += 1;
    }
    const double bin_w = (hi - lo) / bins;
    double peak = 0;
    std::vector<double> density(bins);
    for (int b = 0; b < bins; ++b) {
        const double c = lo + (b + 0.5) * bin_w, z = (c - fc.target_mean) / fc.target_std;
        density[static_cast<std::size_t>(b)] =
            static_cast<double>(samples.size()) * bin_w * std::exp(-0.5 * z * z) / (fc.target_std * std::sqrt(2 * kPi));
        peak = std::max({peak, counts[static_cast<std::size_t>(b)], density[static_cast<std::size_t>(b)]});
    }
    Image hist(w, h, 3);
    for (int x = 0; x < w; ++x) {
        const auto b = static_cast<std::size_t>(x * bins / w);
        const int bar = peak > 0 ? static_cast<int>(std::lround(counts[b] / peak * (h - 1))) : 0;
        const int ref = peak > 0 ? static_cast<int>(std::lround(density[b] / peak * (h - 1))) : 0;
        for (int y = 0; y < bar; ++y)
            for (int c = 0; c < 3; ++c) hist.at(x, h - 1 - y, c) = 0.85f;
        hist.at(x, h - 1 - ref, 0) = 1.0f;
        hist.at(x, h - 1 - ref, 1) = hist.at(x, h - 1 - ref, 2) = 0.0f;
    }
    write_png(png_path, hist);
    save_checkpoint(ck_path, model.to_checkpoint(fc.schedule));
    for (const auto& p : {csv_path, png_path, ck_path}) m.add_output(p);
    double mean = 0, var = 0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    for (double x : samples) var += (x - mean) * (x - mean);
    std::cout << json{{"mean", mean},
                      {"std", std::sqrt(var / static_cast<double>(samples.size() - 1))},
                      {"final_loss", losses.empty() ? 0.0 : losses.back()}}
                     .dump()
              << "\n";
    return join(out, "manifest.json");
}

std::string cmd_eval(const PipelineConfig& cfg, RunManifest& m, const std::string& pred, const std::string& gt,
                     const std::string& out) {
    m.add_input(pred);
    m.add_input(gt);
    const TriMesh a = read_obj(pred), b = read_obj(gt);
    MetricReport r;
    {
        StageTimer t(m, "eval");
        r = evaluate_meshes(a, b, cfg.metrics());
    }
    if (!std::isfinite(r.volume_iou)) m.warnings.push_back("volume IoU skipped: a mesh is not closed");
    const std::string text = r.to_json().dump(2) + "\n";
    std::cout << text;
    write_text(out, text);
    m.add_output(out);
    return out + ".manifest.json";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"meshforge: watertight conversion, occupancy sampling, shape auto-encoding, texture fusion"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MESHFORGE_VERSION));
    Globals g;
    app.add_option("--config", g.config_path, "pipeline config (sectioned key = value, or JSON)");
    app.add_option("--set", g.overrides, "override a config key, e.g. --set train.lr=1e-3");
    app.add_option("--seed", g.seed, "root seed (overrides run.seed)");
    app.add_option("--threads", g.threads, "worker cap (fallback: MESHFORGE_THREADS)")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", g.deterministic, "single-threaded, reproducible execution");
    app.add_option("--manifest", g.manifest_path, "run manifest path (default derived from the output)");
    app.fallthrough();

    std::string in, out, model, latent, texture, mask, views_path, pred, gt, coarse_out, log_out;
    int views = 4;
    std::optional<int> res;

    auto* fixtures_cmd = app.add_subcommand("fixtures", "write the procedural test meshes as OBJ");
    fixtures_cmd->add_option("--out", out, "output directory")->required();

    auto* watertight_cmd = app.add_subcommand("watertight", "convert a mesh to a closed edge-manifold mesh");
    watertight_cmd->add_option("--in", in)->required()->check(CLI::ExistingFile);
    watertight_cmd->add_option("--out", out, "output OBJ (default <in>.watertight.obj)");
    watertight_cmd->add_option("--res", res, "grid resolution (overrides watertight.resolution)");

    auto* sample_cmd = app.add_subcommand("sample", "surface, near-surface and grid occupancy samples");
    sample_cmd->add_option("--in", in)->required()->check(CLI::ExistingFile);
    sample_cmd->add_option("--out", out, "MGOS file")->required();

    auto* train_cmd = app.add_subcommand("train", "coarse-to-fine training on procedural shapes");
    train_cmd->add_option("--out", out, "final checkpoint")->required();
    train_cmd->add_option("--coarse-out", coarse_out, "also save the coarse-stage checkpoint");
    train_cmd->add_option("--log", log_out, "per-epoch JSON lines (default <out>.log.jsonl)");

    auto* encode_cmd = app.add_subcommand("encode", "mesh to triplane latent");
    encode_cmd->add_option("--model", model)->required()->check(CLI::ExistingFile);
    encode_cmd->add_option("--in", in)->required()->check(CLI::ExistingFile);
    encode_cmd->add_option("--out", out)->required();

    auto* decode_cmd = app.add_subcommand("decode", "triplane latent to mesh");
    decode_cmd->add_option("--model", model)->required()->check(CLI::ExistingFile);
    decode_cmd->add_option("--latent", latent)->required()->check(CLI::ExistingFile);
    decode_cmd->add_option("--out", out)->required();
    decode_cmd->add_option("--res", res, "marching cubes resolution (overrides decode.resolution)");

    auto* render_cmd = app.add_subcommand("render", "orbit views with colour, depth and camera sidecars");
    render_cmd->add_option("--in", in)->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--out", out, "output directory")->required();
    render_cmd->add_option("--views", views, "number of views around the object");
    render_cmd->add_option("--texture", texture, "PNG texture sampled through the mesh UVs")->check(CLI::ExistingFile);

    auto* fuse_cmd = app.add_subcommand("fuse", "fuse views into a UV texture");
    fuse_cmd->add_option("--mesh", in)->required()->check(CLI::ExistingFile);
    fuse_cmd->add_option("--views", views_path, "views manifest JSON")->required()->check(CLI::ExistingFile);
    fuse_cmd->add_option("--out", out, "output directory")->required();

    auto* inpaint_cmd = app.add_subcommand("inpaint-prep", "UV inpainting condition maps");
    inpaint_cmd->add_option("--mesh", in)->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--texture", texture, "fused texture (PFM or PNG)")->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--mask", mask, "visibility PNG")->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--out", out, "output directory")->required();

    auto* flow_cmd = app.add_subcommand("flow-demo", "train the 1D velocity model and sample it");
    flow_cmd->add_option("--out", out, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "mesh metrics as JSON");
    eval_cmd->add_option("--pred", pred)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--gt", gt)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", out, "report path (default report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    PipelineConfig cfg;
    try {
        cfg = resolve_config(g);
        if (res && watertight_cmd->parsed()) cfg.set("watertight.resolution", std::to_string(*res));
        if (res && decode_cmd->parsed()) cfg.set("decode.resolution", std::to_string(*res));
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    apply_threads(cfg);

    RunManifest manifest;
    manifest.config_hash = cfg.hash();
    try {
        std::string default_manifest;
        if (fixtures_cmd->parsed()) {
            manifest.command = "fixtures";
            default_manifest = cmd_fixtures(cfg, manifest, out);
        } else if (watertight_cmd->parsed()) {
            manifest.command = "watertight";
            if (out.empty()) out = (fs::path(in).replace_extension("").string()) + ".watertight.obj";
            default_manifest = cmd_watertight(cfg, manifest, in, out);
        } else if (sample_cmd->parsed()) {
            manifest.command = "sample";
            default_manifest = cmd_sample(cfg, manifest, in, out);
        } else if (train_cmd->parsed()) {
            manifest.command = "train";
            if (log_out.empty()) log_out = out + ".log.jsonl";
            default_manifest = cmd_train(cfg, manifest, out, coarse_out, log_out);
        } else if (encode_cmd->parsed()) {
            manifest.command = "encode";
            default_manifest = cmd_encode(cfg, manifest, model, in, out);
        } else if (decode_cmd->parsed()) {
            manifest.command = "decode";
            default_manifest = cmd_decode(cfg, manifest, model, latent, out);
        } else if (render_cmd->parsed()) {
            manifest.command = "render";
            default_manifest = cmd_render(cfg, manifest, in, texture, views, out);
        } else if (fuse_cmd->parsed()) {
            manifest.command = "fuse";
            default_manifest = cmd_fuse(cfg, manifest, in, views_path, out);
        } else if (inpaint_cmd->parsed()) {
            manifest.command = "inpaint-prep";
            default_manifest = cmd_inpaint_prep(cfg, manifest, in, texture, mask, out);
        } else if (flow_cmd->parsed()) {
            manifest.command = "flow-demo";
            default_manifest = cmd_flow_demo(cfg, manifest, out);
        } else if (eval_cmd->parsed()) {
            manifest.command = "eval";
            if (out.empty()) out = "report.json";
            default_manifest = cmd_eval(cfg, manifest, pred, gt, out);
        }
        const std::string path = g.manifest_path.empty() ? default_manifest : g.manifest_path;
        for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
        write_text(path, manifest.to_json().dump(2) + "\n");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
