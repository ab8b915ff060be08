#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixtures.hpp"
#include "renderer.hpp"
#include "shapevae.hpp"

namespace meshforge {

/// A training or evaluation shape: ground-truth mesh and its samples.
struct ShapeRecord {
    std::string name;
    TriMesh mesh;
    OccupancySampleSet samples;
};

inline ShapeRecord make_shape_record(std::string name, TriMesh mesh, const SampleSetConfig& cfg, std::uint64_t seed) {
    ShapeRecord r{std::move(name), std::move(mesh), {}};
    r.samples = build_sample_set(r.mesh, cfg, seed);
    return r;
}

/// Training fixtures by name: sphere, box, torus, csg_union.
inline TriMesh training_fixture(const std::string& name) {
    if (name == "sphere") return fixtures::uv_sphere(0.8);
    if (name == "box") return fixtures::box();
    if (name == "torus") return fixtures::torus();
    if (name == "csg_union") return fixtures::csg_union();
    throw DomainError("unknown training fixture '" + name + "'");
}

struct ShapeDataset {
    std::vector<ShapeRecord> train;
    std::vector<ShapeRecord> validation;
};

/// Named fixtures plus random procedural shapes for training, and a disjoint
/// set of random shapes held out for validation.
inline ShapeDataset build_dataset(const std::vector<std::string>& fixture_names, int random_shapes,
                                  int validation_shapes, const SampleSetConfig& cfg, std::uint64_t seed) {
    ShapeDataset d;
    const std::uint64_t shape_root = derive_seed(seed, "data.shapes");
    const std::uint64_t held_root = derive_seed(seed, "data.validation");
    const std::uint64_t sample_root = derive_seed(seed, "data.samples");
    std::uint64_t k = 0;
    for (const auto& name : fixture_names)
        d.train.push_back(make_shape_record(name, training_fixture(name), cfg, derive_seed(sample_root, k++)));
    for (int i = 0; i < random_shapes; ++i)
        d.train.push_back(make_shape_record("random" + std::to_string(i),
                                            fixtures::random_shape(derive_seed(shape_root, static_cast<std::uint64_t>(i))),
                                            cfg, derive_seed(sample_root, k++)));
    for (int i = 0; i < validation_shapes; ++i)
        d.validation.push_back(make_shape_record("heldout" + std::to_string(i),
                                                 fixtures::random_shape(derive_seed(held_root, static_cast<std::uint64_t>(i))),
                                                 cfg, derive_seed(sample_root, k++)));
    return d;
}

struct TrainConfig {
    std::uint64_t seed = 7;
    int coarse_epochs = 150;
    int refine_epochs = 20;
    double lr = 1e-3;
    double refine_lr = 3e-4;
    double lr_final_factor = 0.1;  // cosine decay within each stage
    double clip_norm = 1.0;
    int batch_near = 1024;  // equal numbers of near and grid points per step
    int batch_grid = 1024;
    bool augment = true;    // random azimuth per step
    int refine_resolution = 32;
    int image_size = 64;
    double camera_distance = 3.5;
    double fov_degrees = 40.0;
    int reg_rays = 32;
    int reg_samples = 128;
    int eval_every = 10;
    double divergence_factor = 10.0;
    LossWeights weights;
};

/// Four fixed views around +z, alternating above and below the equator.
inline std::vector<Camera> refine_cameras(const TrainConfig& cfg) {
    std::vector<Camera> cams;
    for (int k = 0; k < 4; ++k) {
        const double az = (30.0 + 90.0 * k) * kPi / 180.0;
        const double el = (k % 2 ? -20.0 : 30.0) * kPi / 180.0;
        cams.push_back(orbit_camera(az, el, cfg.camera_distance, cfg.image_size, cfg.fov_degrees * kPi / 180.0));
    }
    return cams;
}

struct EvalResult {
    double acc = 0;
    double viou = 0;
};

/// Occupancy accuracy and IoU over each shape's grid samples, using the
/// mean latent of the first N_P surface points; averaged over shapes.
template <typename T>
EvalResult evaluate(const ShapeVae<T>& model, const std::vector<ShapeRecord>& shapes, double azimuth = 0.0) {
    EvalResult r;
    if (shapes.empty()) return r;
    ad::NoGradGuard ng;
    const std::size_t np = static_cast<std::size_t>(model.config().encoder.num_points);
    for (const auto& s : shapes) {
        std::vector<Vec3> cloud(s.samples.surface.points.begin(),
                                s.samples.surface.points.begin() +
                                    static_cast<std::ptrdiff_t>(std::min(np, s.samples.surface.size())));
        for (auto& p : cloud) p = rotate_z(p, azimuth);
        const auto lat = model.encode(cloud);
        std::vector<Vec3> pts;
        std::vector<std::uint8_t> labels;
        const auto& g = s.samples.grid;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Vec3 q = rotate_z(g.points[i], azimuth);
            if (std::max({std::abs(q.x), std::abs(q.y), std::abs(q.z)}) > 1.0) continue;
            pts.push_back(q);
            labels.push_back(g.labels[i]);
        }
        const auto prob = model.query_occupancy(lat, pts);
        std::size_t correct = 0, inter = 0, uni = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const bool p = prob[i] >= 0.5, l = labels[i] != 0;
            correct += p == l;
            inter += p && l;
            uni += p || l;
        }
        r.acc += static_cast<double>(correct) / static_cast<double>(pts.size());
        r.viou += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    }
    r.acc /= static_cast<double>(shapes.size());
    r.viou /= static_cast<double>(shapes.size());
    return r;
}

struct EpochRecord {
    int epoch = 0;
    std::string stage;
    double loss = 0, bce = 0, kl = 0, tv = 0, mse = 0, reg = 0;
    double acc = -1, viou = -1;  // -1 when not evaluated this epoch
    double seconds = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch}, {"stage", stage}, {"loss", loss}, {"bce", bce}, {"kl", kl},
                         {"tv", tv},       {"mse", mse},     {"reg", reg}};
        if (acc >= 0) {
            j["acc"] = acc;
            j["viou"] = viou;
        }
        return j;
    }
};

/// Coarse-to-fine training. `validation` (may be empty, then the training
/// shapes are used) feeds the per-epoch accuracy/IoU. Each epoch record is
/// passed to `log` when set.
template <typename T>
class Trainer {
public:
    Trainer(ShapeVae<T>& model, std::vector<ShapeRecord> shapes, TrainConfig cfg)
        : model_(model), shapes_(std::move(shapes)), cfg_(cfg), rng_(derive_seed(cfg.seed, "train")) {
        if (shapes_.size() < 1) throw DegenerateInput("train: no shapes");
        cfg_.weights.validate();
        for (const auto& s : shapes_)
            if (s.samples.near.size() == 0 || s.samples.grid.size() == 0 || s.samples.surface.size() == 0)
                throw DegenerateInput("train: shape '" + s.name + "' has no samples");
    }

    std::function<void(const EpochRecord&)> log;
    std::vector<ShapeRecord> validation;

    void run_coarse(int epochs) { run_stage("coarse", epochs, cfg_.lr); }
    void run_coarse(int epochs, double lr) { run_stage("coarse", epochs, lr); }
    void run_refine(int epochs) { run_stage("refine", epochs, cfg_.refine_lr); }
    void run() {
        run_coarse(cfg_.coarse_epochs);
        run_refine(cfg_.refine_epochs);
    }

    const std::vector<EpochRecord>& history() const { return history_; }
    std::size_t empty_surface_steps() const { return empty_steps_; }

private:
    struct Batch {
        std::vector<Vec3> cloud;
        std::vector<Vec3> points;
        std::vector<T> labels;
        double azimuth = 0;
    };

    Batch make_batch(const ShapeRecord& s) {
        Batch b;
        b.azimuth = cfg_.augment ? uniform01(rng_) * 2 * kPi : 0.0;
        const auto& surf = s.samples.surface.points;
        const std::size_t np = static_cast<std::size_t>(model_.config().encoder.num_points);
        b.cloud.reserve(np);
        for (std::size_t i = 0; i < np; ++i)
            b.cloud.push_back(rotate_z(surf[static_cast<std::size_t>(uniform01(rng_) * surf.size())], b.azimuth));
        auto take = [&](const LabeledPoints& src, int n) {
            for (int i = 0; i < n; ++i) {
                const auto k = static_cast<std::size_t>(uniform01(rng_) * src.size());
                const Vec3 q = rotate_z(src.points[k], b.azimuth);
                if (std::max({std::abs(q.x), std::abs(q.y), std::abs(q.z)}) > 1.0) continue;
                b.points.push_back(q);
                b.labels.push_back(static_cast<T>(src.labels[k]));
            }
        };
        take(s.samples.near, cfg_.batch_near);
        take(s.samples.grid, cfg_.batch_grid);
        return b;
    }

    // Normal-map MSE over the refine views and ray samples in front of the
    // ground truth, both in the batch's rotated frame.
    std::pair<ad::BasicTensor<T>, ad::BasicTensor<T>> refine_terms(const ShapeRecord& s, const Batch& b,
                                                                   const ad::BasicTensor<T>& planes) {
        const TriMesh gt = b.azimuth == 0.0 ? s.mesh : rotate_mesh_z(s.mesh, b.azimuth);
        const MeshBvh gt_bvh(gt);
        const auto cams = refine_cameras(cfg_);
        ad::BasicTensor<T> normal_term;
        try {
            const auto surf = extract_surface(model_, planes, cfg_.refine_resolution);
            std::vector<ad::BasicTensor<T>> images;
            std::vector<double> target;
            std::vector<std::uint8_t> rmask, tmask;
            const MeshBvh cur_bvh(surf.iso.mesh);
            for (const auto& cam : cams) {
                const GBuffer g = rasterize(surf.iso.mesh, cam, NormalMode::Face, &cur_bvh);
                const GBuffer gt_g = rasterize(gt, cam, NormalMode::Face, &gt_bvh);
                images.push_back(render_normal_map_diff(surf.vertices, surf.iso.mesh.faces, g));
                const auto t = normal_image(gt_g);
                target.insert(target.end(), t.begin(), t.end());
                for (std::size_t i = 0; i < g.pixels(); ++i) {
                    rmask.push_back(g.covered(i));
                    tmask.push_back(gt_g.covered(i));
                }
            }
            normal_term = normal_mse(ad::concat(images, 0), target, rmask, tmask);
        } catch (const EmptySurface&) {
            ++empty_steps_;
        }
        ad::BasicTensor<T> reg_logits;
        if (cfg_.weights.reg > 0 && cfg_.reg_rays > 0) {
            std::vector<Ray> rays;
            for (int r = 0; r < cfg_.reg_rays; ++r) {
                const auto& cam = cams[static_cast<std::size_t>(uniform01(rng_) * cams.size())];
                rays.push_back(cam.pixel_ray(uniform01(rng_) * cam.width, uniform01(rng_) * cam.height));
            }
            const double margin = 0.5 * 2.0 / (cfg_.refine_resolution - 1);
            auto reg = regularization_samples(rays, gt_bvh, Aabb::cube(1.0), cfg_.reg_samples, margin, rng_());
            for (auto& p : reg.points) p = clamp_unit(p);
            if (!reg.points.empty()) reg_logits = model_.query_logits(planes, reg.points);
        }
        return {normal_term, reg_logits};
    }

    void run_stage(const std::string& stage, int epochs, double lr) {
        ad::AdamConfig ac;
        ac.lr = lr;
        ac.clip_norm = cfg_.clip_norm;
        ad::Adam<T> opt(ac);
        const bool refine = stage == "refine";
        double initial = -1;
        auto& ps = model_.params();
        std::vector<std::size_t> order(shapes_.size());
        const double total_steps = static_cast<double>(epochs) * static_cast<double>(order.size());
        long step = 0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng_) * i)]);
            EpochRecord rec;
            rec.epoch = static_cast<int>(history_.size());
            rec.stage = stage;
            for (std::size_t idx : order) {
                const ShapeRecord& s = shapes_[idx];
                const Batch b = make_batch(s);
                const auto lat = model_.encode(b.cloud, &rng_);
                const auto planes = model_.decode_planes(lat);
                const auto logits = model_.query_logits(planes, b.points);
                LossTerms<T> terms;
                if (refine) {
                    const auto [normal_term, reg_logits] = refine_terms(s, b, planes);
                    terms = loss_refine(logits, std::span<const T>(b.labels), lat, normal_term, reg_logits, cfg_.weights);
                } else {
                    terms = loss_coarse(logits, std::span<const T>(b.labels), lat, cfg_.weights);
                }
                ps.zero_grad();
                terms.total.backward();
                const double f = cfg_.lr_final_factor;
                opt.set_lr(lr * (f + (1 - f) * 0.5 * (1 + std::cos(kPi * static_cast<double>(step++) / total_steps))));
                opt.step(ps);
                rec.loss += terms.total.item();
                rec.bce += terms.bce;
                rec.kl += terms.kl;
                rec.tv += terms.tv;
                rec.mse += terms.mse;
                rec.reg += terms.reg;
            }
            const double n = static_cast<double>(order.size());
            for (double* v : {&rec.loss, &rec.bce, &rec.kl, &rec.tv, &rec.mse, &rec.reg}) *v /= n;
            if (initial < 0) initial = rec.loss;
            if (rec.loss > cfg_.divergence_factor * initial)
                throw Divergence(stage + " epoch " + std::to_string(epoch) + ": loss " + std::to_string(rec.loss) +
                                 " exceeds " + std::to_string(cfg_.divergence_factor) + "x the initial " +
                                 std::to_string(initial));
            if (cfg_.eval_every > 0 && ((epoch + 1) % cfg_.eval_every == 0 || epoch + 1 == epochs)) {
                const auto ev = evaluate(model_, validation.empty() ? shapes_ : validation);
                rec.acc = ev.acc;
                rec.viou = ev.viou;
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            history_.push_back(rec);
            if (log) log(rec);
        }
    }

    ShapeVae<T>& model_;
    std::vector<ShapeRecord> shapes_;
    TrainConfig cfg_;
    Rng rng_;
    std::vector<EpochRecord> history_;
    std::size_t empty_steps_ = 0;
};

}  // namespace meshforge
