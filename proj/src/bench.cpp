#include "ogs/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ogs/losses.hpp"
#include "ogs/oracle.hpp"
#include "ogs/png_io.hpp"
#include "ogs/rng.hpp"

namespace ogs {

namespace {

constexpr double kShC0 = 0.28209479177387814;

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void add_gaussian(GaussianCloud& cloud, size_t i, const Eigen::Vector3d& pos,
                  double scale, double opacity, const Eigen::Vector3d& color,
                  CounterRng& rng) {
    cloud.positions[i] = pos;
    cloud.log_scales[i].setConstant(std::log(scale));
    // Mild anisotropy.
    for (int k = 0; k < 3; ++k)
        cloud.log_scales[i][k] += rng.uniform(-0.3, 0.3);
    Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    cloud.rotations[i] = q.normalized();
    cloud.opacity_logits[i] = logit(opacity);
    for (int c = 0; c < 3; ++c) {
        cloud.sh(i, 0, c) = (color[c] - 0.5) / kShC0;
        for (int k = 1; k < cloud.sh_basis(); ++k)
            cloud.sh(i, k, c) = rng.uniform(-0.04, 0.04);
    }
}

} // namespace

SceneLayout layout_from_string(const std::string& s) {
    if (s == "box") return SceneLayout::box;
    if (s == "ring") return SceneLayout::ring;
    if (s == "two_objects") return SceneLayout::two_objects;
    throw std::runtime_error("unknown scene layout '" + s + "'");
}

std::string to_string(SceneLayout layout) {
    switch (layout) {
        case SceneLayout::box: return "box";
        case SceneLayout::ring: return "ring";
        case SceneLayout::two_objects: return "two_objects";
    }
    return "box";
}

GaussianCloud make_scene(uint64_t seed, int n_gaussians, SceneLayout layout) {
    if (n_gaussians < 1)
        throw std::runtime_error("make_scene: n_gaussians must be >= 1");
    CounterRng rng(CounterRng::mix(seed ^ 0x5CEA0ull));
    GaussianCloud cloud;
    cloud.resize(n_gaussians, 1);

    int n_back = 0;
    if (layout != SceneLayout::ring && n_gaussians >= 30)
        n_back = std::max(16, n_gaussians / 5);
    int n_main = n_gaussians - n_back;

    for (int i = 0; i < n_main; ++i) {
        Eigen::Vector3d pos;
        switch (layout) {
            case SceneLayout::box:
                pos = Eigen::Vector3d(rng.uniform(-0.8, 0.8),
                                      rng.uniform(-0.8, 0.8),
                                      rng.uniform(-0.8, 0.8));
                break;
            case SceneLayout::ring: {
                double r = rng.uniform(0.7, 1.1);
                double az = rng.uniform(0.0, 2.0 * M_PI);
                pos = Eigen::Vector3d(r * std::cos(az), r * std::sin(az),
                                      rng.uniform(-0.2, 0.2));
                break;
            }
            case SceneLayout::two_objects: {
                Eigen::Vector3d center(i % 2 == 0 ? 0.6 : -0.6, 0.0, 0.0);
                pos = center + 0.35 * Eigen::Vector3d(rng.normal(), rng.normal(),
                                                      rng.normal());
                for (int k = 0; k < 3; ++k)
                    pos[k] = std::clamp(pos[k] - center[k], -0.6, 0.6) + center[k];
                break;
            }
        }
        double scale = rng.uniform(0.06, 0.16);
        double opacity = rng.uniform(0.3, 0.95);
        Eigen::Vector3d color(rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9),
                              rng.uniform(0.15, 0.9));
        add_gaussian(cloud, i, pos, scale, opacity, color, rng);
    }

    for (int i = n_main; i < n_gaussians; ++i) {
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        double n = dir.norm();
        if (n < 1e-9) dir = Eigen::Vector3d(0, 0, 1);
        else dir /= n;
        Eigen::Vector3d pos = 4.2 * dir;
        double scale = rng.uniform(0.4, 0.7);
        double opacity = rng.uniform(0.5, 0.95);
        Eigen::Vector3d color(rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6),
                              rng.uniform(0.2, 0.6));
        add_gaussian(cloud, i, pos, scale, opacity, color, rng);
    }
    return cloud;
}

std::vector<Camera> make_camera_rig(int n_poses, int width, int height,
                                    double radius, double fov_deg) {
    std::vector<Camera> rig;
    rig.reserve(n_poses);
    double f = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
    for (int i = 0; i < n_poses; ++i) {
        double az = 2.0 * M_PI * i / n_poses;
        Eigen::Vector3d eye(radius * std::cos(az), radius * std::sin(az),
                            0.3 + 0.25 * std::sin(2.0 * az));
        Eigen::Vector3d target(0, 0, 0);
        Eigen::Vector3d up(0, 0, 1);

        Eigen::Vector3d zc = (target - eye).normalized();
        Eigen::Vector3d xc = zc.cross(up).normalized();
        Eigen::Vector3d yc = zc.cross(xc);
        Eigen::Matrix3d R;
        R.row(0) = xc;
        R.row(1) = yc;
        R.row(2) = zc;

        Camera cam;
        cam.fx = cam.fy = f;
        cam.cx = width / 2.0;
        cam.cy = height / 2.0;
        cam.width = width;
        cam.height = height;
        cam.rotation = quat_from_matrix(R);
        cam.translation = -(R * eye);
        cam.near = 0.1;
        cam.far = 100.0;
        rig.push_back(cam);
    }
    return rig;
}

RigPlan plan_rig(int n_gt, int n_synth, int n_test, int width, int height,
                 double radius, double fov_deg) {
    if (n_gt < 1 || n_test < 1 || n_synth < 0)
        throw std::runtime_error("plan_rig: need n_gt >= 1 and n_test >= 1");
    int n_poses = 8 * n_test; // every 8th pose becomes a test view
    if (n_gt + n_synth > n_poses - n_test)
        throw std::runtime_error("plan_rig: too many views for the rig");
    std::vector<Camera> all = make_camera_rig(n_poses, width, height, radius,
                                              fov_deg);

    std::vector<int> pool;
    std::vector<ViewRole> role_of(n_poses, ViewRole::test);
    std::vector<char> used(n_poses, 0);
    for (int i = 0; i < n_poses; ++i) {
        if (i % 8 == 0) {
            used[i] = 1;
        } else {
            pool.push_back(i);
        }
    }
    for (int i = 0; i < n_gt; ++i) {
        int k = pool[static_cast<size_t>(i) * pool.size() / n_gt];
        role_of[k] = ViewRole::ground_truth;
        used[k] = 1;
    }
    std::vector<int> rest;
    for (int i : pool)
        if (!used[i]) rest.push_back(i);
    for (int i = 0; i < n_synth; ++i) {
        int k = rest[static_cast<size_t>(i) * rest.size() / n_synth];
        role_of[k] = ViewRole::synthetic;
        used[k] = 2;
    }

    RigPlan plan;
    for (int i = 0; i < n_poses; ++i) {
        if (i % 8 == 0) {
            plan.cameras.push_back(all[i]);
            plan.roles.push_back(ViewRole::test);
        } else if (used[i]) {
            plan.cameras.push_back(all[i]);
            plan.roles.push_back(role_of[i]);
        }
    }
    return plan;
}

SceneBundle render_dataset(const GaussianCloud& gt_cloud,
                           const std::vector<Camera>& rig,
                           const std::vector<ViewRole>& roles,
                           const Eigen::Vector3d& background,
                           const RenderConfig& config) {
    if (rig.size() != roles.size())
        throw std::runtime_error("render_dataset: rig/roles size mismatch");
    SceneBundle bundle;
    for (size_t i = 0; i < rig.size(); ++i) {
        RenderOutput out = render(gt_cloud, rig[i], background, config);
        ViewRecord view;
        view.camera = rig[i];
        view.image = out.color;
        view.role = roles[i];
        if (roles[i] != ViewRole::test) {
            view.inv_depth = out.expected_inv_depth;
            Plane mask(rig[i].height, rig[i].width, 0.0);
            for (size_t k = 0; k < mask.data.size(); ++k)
                mask.data[k] = out.accum_alpha.data[k] >= 0.5 ? 1.0 : 0.0;
            view.depth_mask = mask;
        }
        bundle.views.push_back(std::move(view));
    }
    return bundle;
}

ArtifactKind artifact_from_string(const std::string& s) {
    if (s == "patch_swap") return ArtifactKind::patch_swap;
    if (s == "hallucinated_blob") return ArtifactKind::hallucinated_blob;
    if (s == "texture_blur") return ArtifactKind::texture_blur;
    if (s == "color_shift") return ArtifactKind::color_shift;
    throw std::runtime_error("unknown artifact kind '" + s + "'");
}

namespace {

struct Rect {
    int x0, y0, w, h;
};

Rect pick_rect(CounterRng& rng, int img_w, int img_h, int rw, int rh,
               const Plane& occupied) {
    Rect best{0, 0, rw, rh};
    double best_overlap = 2.0;
    for (int attempt = 0; attempt < 16; ++attempt) {
        Rect r{static_cast<int>(rng.uniform_index(std::max(1, img_w - rw))),
               static_cast<int>(rng.uniform_index(std::max(1, img_h - rh))),
               rw, rh};
        double overlap = 0;
        for (int y = r.y0; y < r.y0 + rh; ++y)
            for (int x = r.x0; x < r.x0 + rw; ++x) overlap += occupied.at(y, x);
        overlap /= rw * rh;
        if (overlap < best_overlap) {
            best = r;
            best_overlap = overlap;
        }
        if (best_overlap < 0.05) break;
    }
    return best;
}

void enforce_floor_and_mark(Image& img, const Image& orig, int x, int y,
                            Plane& mask) {
    double delta = 0;
    for (int c = 0; c < 3; ++c)
        delta += std::abs(img.at(y, x, c) - orig.at(y, x, c));
    delta /= 3.0;
    if (delta < 0.05) {
        for (int c = 0; c < 3; ++c) {
            double o = orig.at(y, x, c);
            img.at(y, x, c) = o + (o < 0.5 ? 0.12 : -0.12);
        }
    }
    mask.at(y, x) = 1.0;
}

} // namespace

Plane inject_artifacts(ViewRecord& view, uint64_t seed,
                       const std::vector<ArtifactKind>& kinds, double budget) {
    if (!(budget > 0.0 && budget <= 0.5))
        throw std::runtime_error("inject_artifacts: budget must be in (0, 0.5]");
    const int H = view.image.height, W = view.image.width;
    Plane mask(H, W, 0.0);
    if (kinds.empty()) return mask;

    CounterRng rng(CounterRng::mix(seed ^ 0xA27Full));
    Image orig = view.image;
    Image& img = view.image;
    double per_kind = budget * H * W / kinds.size();

    for (ArtifactKind kind : kinds) {
        switch (kind) {
            case ArtifactKind::patch_swap: {
                int k = std::max(2, static_cast<int>(std::lround(
                                        std::sqrt(per_kind / 2.0))));
                k = std::min(k, std::min(W, H) / 2);
                Rect a = pick_rect(rng, W, H, k, k, mask);
                Rect b = pick_rect(rng, W, H, k, k, mask);
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x)
                        for (int c = 0; c < 3; ++c)
                            std::swap(img.at(a.y0 + y, a.x0 + x, c),
                                      img.at(b.y0 + y, b.x0 + x, c));
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x) {
                        enforce_floor_and_mark(img, orig, a.x0 + x, a.y0 + y, mask);
                        enforce_floor_and_mark(img, orig, b.x0 + x, b.y0 + y, mask);
                    }
                break;
            }
            case ArtifactKind::hallucinated_blob: {
                double aspect = rng.uniform(0.6, 1.6);
                double ra = std::max(2.0, std::sqrt(per_kind * aspect / M_PI));
                double rb = std::max(2.0, per_kind / (M_PI * ra));
                ra = std::min(ra, W / 2.0 - 1);
                rb = std::min(rb, H / 2.0 - 1);
                double cx = rng.uniform(ra, W - ra);
                double cy = rng.uniform(rb, H - rb);
                Eigen::Vector3d color(rng.uniform(0.0, 1.0),
                                      rng.uniform(0.0, 1.0),
                                      rng.uniform(0.0, 1.0));
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double rx = (x + 0.5 - cx) / ra;
                        double ry = (y + 0.5 - cy) / rb;
                        double r2 = rx * rx + ry * ry;
                        if (r2 > 1.0) continue;
                        double w = 0.75 - 0.35 * r2;
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) = std::clamp(
                                (1 - w) * img.at(y, x, c) + w * color[c], 0.0,
                                1.0);
                        enforce_floor_and_mark(img, orig, x, y, mask);
                    }
                break;
            }
            case ArtifactKind::texture_blur: {
                int rw = std::max(3, static_cast<int>(std::lround(
                                         std::sqrt(per_kind * 1.4))));
                int rh = std::max(3, static_cast<int>(std::lround(per_kind / rw)));
                rw = std::min(rw, W);
                rh = std::min(rh, H);
                Rect r = pick_rect(rng, W, H, rw, rh, mask);
                Image blurred = orig;
                for (int y = r.y0; y < r.y0 + rh; ++y)
                    for (int x = r.x0; x < r.x0 + rw; ++x)
                        for (int c = 0; c < 3; ++c) {
                            double s = 0;
                            int cnt = 0;
                            for (int dy = -2; dy <= 2; ++dy)
                                for (int dx = -2; dx <= 2; ++dx) {
                                    int yy = std::clamp(y + dy, 0, H - 1);
                                    int xx = std::clamp(x + dx, 0, W - 1);
                                    s += orig.at(yy, xx, c);
                                    ++cnt;
                                }
                            blurred.at(y, x, c) = s / cnt;
                        }
                for (int y = r.y0; y < r.y0 + rh; ++y)
                    for (int x = r.x0; x < r.x0 + rw; ++x) {
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) = blurred.at(y, x, c);
                        enforce_floor_and_mark(img, orig, x, y, mask);
                    }
                break;
            }
            case ArtifactKind::color_shift: {
                int rw = std::max(3, static_cast<int>(std::lround(
                                         std::sqrt(per_kind * 0.8))));
                int rh = std::max(3, static_cast<int>(std::lround(per_kind / rw)));
                rw = std::min(rw, W);
                rh = std::min(rh, H);
                Rect r = pick_rect(rng, W, H, rw, rh, mask);
                Eigen::Vector3d delta;
                for (int c = 0; c < 3; ++c) {
                    double mag = rng.uniform(0.12, 0.3);
                    delta[c] = rng.uniform() < 0.5 ? -mag : mag;
                }
                for (int y = r.y0; y < r.y0 + rh; ++y)
                    for (int x = r.x0; x < r.x0 + rw; ++x) {
                        for (int c = 0; c < 3; ++c)
                            img.at(y, x, c) = std::clamp(
                                img.at(y, x, c) + delta[c], 0.0, 1.0);
                        enforce_floor_and_mark(img, orig, x, y, mask);
                    }
                break;
            }
        }
    }
    return mask;
}

EvalMetrics evaluate(const GaussianCloud& cloud,
                     const std::vector<const ViewRecord*>& test_views,
                     const Eigen::Vector3d& background,
                     const RenderConfig& config) {
    if (test_views.empty())
        throw std::runtime_error("evaluate: empty test set");
    EvalMetrics m;
    for (const ViewRecord* view : test_views) {
        RenderOutput out = render(cloud, view->camera, background, config);
        m.psnr += psnr(out.color, view->image);
        Plane map = ssim_map(out.color, view->image);
        double s = 0;
        for (double v : map.data) s += v;
        m.ssim += s / map.data.size();
        m.perceptual_proxy += perceptual(out.color, view->image);
    }
    m.psnr /= test_views.size();
    m.ssim /= test_views.size();
    m.perceptual_proxy /= test_views.size();
    return m;
}

AblationArm arm_from_string(const std::string& s) {
    if (s == "baseline") return AblationArm::baseline;
    if (s == "naive_synth") return AblationArm::naive_synth;
    if (s == "scheduled") return AblationArm::scheduled;
    if (s == "scheduled_lpips") return AblationArm::scheduled_lpips;
    if (s == "plus_depth") return AblationArm::plus_depth;
    if (s == "full_uncertainty") return AblationArm::full_uncertainty;
    throw std::runtime_error("unknown ablation arm '" + s + "'");
}

std::string to_string(AblationArm arm) {
    switch (arm) {
        case AblationArm::baseline: return "baseline";
        case AblationArm::naive_synth: return "naive_synth";
        case AblationArm::scheduled: return "scheduled";
        case AblationArm::scheduled_lpips: return "scheduled_lpips";
        case AblationArm::plus_depth: return "plus_depth";
        case AblationArm::full_uncertainty: return "full_uncertainty";
    }
    return "baseline";
}

BenchPreset bench_preset(const std::string& name) {
    BenchPreset p;
    p.name = name;
    if (name == "default") {
        // Sized per the bench defaults; minutes on a laptop CPU.
        return p;
    }
    if (name == "tiny") {
        p.image_size = 48;
        p.n_gaussians = 220;
        p.n_gt = 6;
        p.n_synth = 16;
        p.n_test = 6;
        p.iterations = 1600;
        return p;
    }
    throw std::runtime_error("unknown bench preset '" + name + "'");
}

namespace {

struct ArmSetup {
    bool include_synth = true;
    bool use_depth = false;
    double lambda_lpips = 0.0;
    bool schedule_constant = false; // p == 0.5 rather than the Beta curriculum
    UncertaintySource source = UncertaintySource::ones;
};

ArmSetup arm_setup(AblationArm arm) {
    ArmSetup s;
    switch (arm) {
        case AblationArm::baseline:
            s.include_synth = false;
            break;
        case AblationArm::naive_synth:
            s.schedule_constant = true;
            break;
        case AblationArm::scheduled:
            break;
        case AblationArm::scheduled_lpips:
            s.lambda_lpips = 0.3;
            break;
        case AblationArm::plus_depth:
            s.lambda_lpips = 0.3;
            s.use_depth = true;
            break;
        case AblationArm::full_uncertainty:
            s.lambda_lpips = 0.3;
            s.use_depth = true;
            s.source = UncertaintySource::attached;
            break;
    }
    return s;
}

} // namespace

double AblationReport::mean_psnr(AblationArm arm) const {
    double sum = 0;
    int n = 0;
    for (const ArmResult& r : rows)
        if (r.arm == arm) {
            sum += r.metrics.psnr;
            ++n;
        }
    return n ? sum / n : 0.0;
}

AblationReport run_ablation(const BenchPreset& preset,
                            const std::vector<AblationArm>& arms,
                            const std::filesystem::path& out_dir, int workers) {
    if (arms.empty()) throw std::runtime_error("run_ablation: no arms");
    AblationReport report;
    report.arms = arms;

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    const std::vector<ArtifactKind> all_kinds = {
        ArtifactKind::patch_swap, ArtifactKind::hallucinated_blob,
        ArtifactKind::texture_blur, ArtifactKind::color_shift};

    for (int si = 0; si < preset.n_seeds; ++si) {
        uint64_t run_seed = preset.seed + static_cast<uint64_t>(si);

        GaussianCloud gt_cloud =
            make_scene(run_seed, preset.n_gaussians, preset.layout);
        RigPlan plan = plan_rig(preset.n_gt, preset.n_synth, preset.n_test,
                                preset.image_size, preset.image_size,
                                preset.rig_radius, preset.fov_deg);
        RenderConfig rc;
        rc.workers = workers;
        SceneBundle bundle = render_dataset(gt_cloud, plan.cameras, plan.roles,
                                            preset.background, rc);

        // Corrupt synthetic proposals and keep the exact masks.
        std::vector<int> synth_ids;
        std::vector<Plane> masks;
        for (size_t i = 0; i < bundle.views.size(); ++i)
            if (bundle.views[i].role == ViewRole::synthetic)
                synth_ids.push_back(static_cast<int>(i));
        for (int vi : synth_ids) {
            if (preset.artifact_budget > 0)
                masks.push_back(inject_artifacts(
                    bundle.views[vi],
                    CounterRng::mix(run_seed) ^ static_cast<uint64_t>(vi),
                    all_kinds, preset.artifact_budget));
            else
                masks.push_back(Plane(preset.image_size, preset.image_size, 0.0));
        }

        // Oracle maps + quality against the known masks.
        std::vector<const ViewRecord*> gt_neighbors;
        for (const ViewRecord& v : bundle.views)
            if (v.role == ViewRole::ground_truth) gt_neighbors.push_back(&v);
        std::vector<UncertaintyMap> oracle_maps;
        double auroc_sum = 0;
        int auroc_n = 0;
        for (size_t k = 0; k < synth_ids.size(); ++k) {
            UncertaintyMap u = reprojection_oracle(bundle.views[synth_ids[k]],
                                                   gt_neighbors, 0.15);
            bool has_both = false;
            {
                size_t pos = 0;
                for (double m : masks[k].data)
                    if (m > 0.5) ++pos;
                has_both = pos > 0 && pos < masks[k].data.size();
            }
            if (has_both) {
                auroc_sum += oracle_auroc(u, masks[k]);
                ++auroc_n;
            }
            oracle_maps.push_back(std::move(u));
        }
        double mean_auroc =
            auroc_n ? auroc_sum / auroc_n : std::numeric_limits<double>::quiet_NaN();

        for (AblationArm arm : arms) {
            ArmSetup setup = arm_setup(arm);

            SceneBundle arm_bundle;
            arm_bundle.cloud = bundle.cloud;
            arm_bundle.seed_points = bundle.seed_points;
            size_t synth_k = 0;
            for (const ViewRecord& v : bundle.views) {
                if (v.role == ViewRole::synthetic) {
                    size_t k = synth_k++;
                    if (!setup.include_synth) continue;
                    ViewRecord copy = v;
                    if (setup.source == UncertaintySource::attached)
                        copy.uncertainty = oracle_maps[k];
                    arm_bundle.views.push_back(std::move(copy));
                } else {
                    ViewRecord copy = v;
                    if (!setup.use_depth && copy.role == ViewRole::ground_truth) {
                        copy.inv_depth.reset();
                        copy.depth_mask.reset();
                    }
                    arm_bundle.views.push_back(std::move(copy));
                }
            }

            // Seed cloud: initialize from the ground-truth cloud's positions
            // would leak the answer; instead seed from GT-view colors via a
            // sparse point sprinkle around the content region.
            arm_bundle.cloud = GaussianCloud{};
            CounterRng seed_rng(CounterRng::mix(run_seed ^ 0x5EEDull));
            std::vector<SeedPoint> seeds;
            int n_seeds_pts = preset.n_gaussians;
            for (int i = 0; i < n_seeds_pts; ++i) {
                SeedPoint sp;
                double shell = seed_rng.uniform();
                if (shell < 0.8) {
                    sp.position = Eigen::Vector3d(seed_rng.uniform(-1.0, 1.0),
                                                  seed_rng.uniform(-1.0, 1.0),
                                                  seed_rng.uniform(-1.0, 1.0));
                } else {
                    Eigen::Vector3d dir(seed_rng.normal(), seed_rng.normal(),
                                        seed_rng.normal());
                    double n = dir.norm();
                    sp.position = n > 1e-9 ? Eigen::Vector3d(4.2 * dir / n)
                                           : Eigen::Vector3d(0, 0, 4.2);
                }
                sp.color = Eigen::Vector3d(0.5, 0.5, 0.5);
                seeds.push_back(sp);
            }
            arm_bundle.seed_points = seeds;

            TrainConfig tc;
            tc.iterations = preset.iterations;
            tc.checkpoint_interval = 0; // no mid-run eval; bench evaluates below
            tc.seed = run_seed;
            tc.workers = workers;
            tc.render.workers = workers;
            tc.background = preset.background;
            tc.loss.lambda_lpips = setup.lambda_lpips;
            tc.uncertainty_source = setup.source;
            if (setup.include_synth) {
                if (setup.schedule_constant) {
                    tc.schedule.base = 1.0; // odds 1 -> p == 0.5
                    tc.schedule.amplitude = 0.0;
                }
            } else {
                tc.schedule.base = 0.0; // p == 0 -> plain GT-only training
                tc.schedule.amplitude = 0.0;
            }

            TrainResult result = train(arm_bundle, tc);

            std::vector<const ViewRecord*> test_views;
            for (const ViewRecord& v : arm_bundle.views)
                if (v.role == ViewRole::test) test_views.push_back(&v);
            EvalMetrics metrics =
                evaluate(result.cloud, test_views, preset.background, rc);

            ArmResult row;
            row.arm = arm;
            row.seed = run_seed;
            row.metrics = metrics;
            if (!setup.include_synth)
                row.oracle_auroc = std::numeric_limits<double>::quiet_NaN();
            else if (setup.source == UncertaintySource::attached)
                row.oracle_auroc = mean_auroc;
            else
                row.oracle_auroc = 0.5; // U == 1 is uninformative by definition
            report.rows.push_back(row);

            if (!out_dir.empty() && si == 0) {
                // Comparison strip: renders on top, ground truth below.
                int n_show = std::min<int>(4, static_cast<int>(test_views.size()));
                int W = preset.image_size, H = preset.image_size;
                Image strip(2 * H, n_show * W, 3);
                for (int k = 0; k < n_show; ++k) {
                    RenderOutput out = render(result.cloud,
                                              test_views[k]->camera,
                                              preset.background, rc);
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x)
                            for (int c = 0; c < 3; ++c) {
                                strip.at(y, k * W + x, c) = out.color.at(y, x, c);
                                strip.at(H + y, k * W + x, c) =
                                    test_views[k]->image.at(y, x, c);
                            }
                }
                write_png(out_dir / ("strip_" + to_string(arm) + ".png"), strip);
            }
        }
    }

    // Deterministic CSV: per-run rows, per-arm means, consecutive deltas.
    std::string csv = "section,arm,seed,psnr,ssim,perceptual_proxy,oracle_auroc\n";
    for (const ArmResult& r : report.rows) {
        csv += "result," + to_string(r.arm) + "," + std::to_string(r.seed) + "," +
               fmt(r.metrics.psnr, "%.4f") + "," + fmt(r.metrics.ssim) + "," +
               fmt(r.metrics.perceptual_proxy, "%.8f") + ",";
        if (std::isfinite(r.oracle_auroc)) csv += fmt(r.oracle_auroc, "%.4f");
        csv += "\n";
    }
    for (AblationArm arm : arms) {
        EvalMetrics mean;
        double auroc = 0;
        int n = 0, an = 0;
        for (const ArmResult& r : report.rows)
            if (r.arm == arm) {
                mean.psnr += r.metrics.psnr;
                mean.ssim += r.metrics.ssim;
                mean.perceptual_proxy += r.metrics.perceptual_proxy;
                if (std::isfinite(r.oracle_auroc)) {
                    auroc += r.oracle_auroc;
                    ++an;
                }
                ++n;
            }
        csv += "mean," + to_string(arm) + ",," + fmt(mean.psnr / n, "%.4f") +
               "," + fmt(mean.ssim / n) + "," +
               fmt(mean.perceptual_proxy / n, "%.8f") + ",";
        if (an) csv += fmt(auroc / an, "%.4f");
        csv += "\n";
    }
    for (size_t i = 1; i < arms.size(); ++i) {
        double d = report.mean_psnr(arms[i]) - report.mean_psnr(arms[i - 1]);
        csv += "delta_psnr," + to_string(arms[i]) + "-" + to_string(arms[i - 1]) +
               ",," + fmt(d, "%.4f") + ",,,\n";
    }
    report.csv = csv;

    if (!out_dir.empty()) {
        std::filesystem::path tmp = out_dir / "report.csv.tmp";
        {
            std::ofstream out(tmp);
            out << csv;
        }
        std::filesystem::rename(tmp, out_dir / "report.csv");
    }
    return report;
}

} // namespace ogs
