#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ogs/rasterizer.hpp"
#include "ogs/scene.hpp"
#include "ogs/trainer.hpp"

namespace ogs {

enum class SceneLayout { box, ring, two_objects };

SceneLayout layout_from_string(const std::string& s);
std::string to_string(SceneLayout layout);

// Seeded procedural ground-truth cloud. box and two_objects include a
// backdrop shell (radius ~4.2) so ring-rig renders cover the frame; ring
// keeps every position inside the declared annulus.
GaussianCloud make_scene(uint64_t seed, int n_gaussians, SceneLayout layout);

// Inward-looking ring of poses around the origin.
std::vector<Camera> make_camera_rig(int n_poses, int width, int height,
                                    double radius = 3.0, double fov_deg = 50.0);

// Role plan over a rig of 8 * n_test poses: every 8th pose is a test view,
// ground-truth and synthetic views are spread evenly over the rest.
// Unused poses are dropped.
struct RigPlan {
    std::vector<Camera> cameras;
    std::vector<ViewRole> roles;
};
RigPlan plan_rig(int n_gt, int n_synth, int n_test, int width, int height,
                 double radius = 3.0, double fov_deg = 50.0);

// Renders GT/test/synthetic views from the ground-truth cloud; GT and
// synthetic views carry rendered inverse depth + coverage masks.
SceneBundle render_dataset(const GaussianCloud& gt_cloud,
                           const std::vector<Camera>& rig,
                           const std::vector<ViewRole>& roles,
                           const Eigen::Vector3d& background,
                           const RenderConfig& config = {});

enum class ArtifactKind { patch_swap, hallucinated_blob, texture_blur, color_shift };

ArtifactKind artifact_from_string(const std::string& s);

// Deterministic corruptions covering ~budget of the pixels; the returned
// mask marks exactly the modified pixels, each differing from the original
// by at least 0.05 mean color distance.
Plane inject_artifacts(ViewRecord& view, uint64_t seed,
                       const std::vector<ArtifactKind>& kinds, double budget);

struct EvalMetrics {
    double psnr = 0;
    double ssim = 0;
    double perceptual_proxy = 0;
};

EvalMetrics evaluate(const GaussianCloud& cloud,
                     const std::vector<const ViewRecord*>& test_views,
                     const Eigen::Vector3d& background,
                     const RenderConfig& config = {});

enum class AblationArm {
    baseline,
    naive_synth,
    scheduled,
    scheduled_lpips,
    plus_depth,
    full_uncertainty
};

AblationArm arm_from_string(const std::string& s);
std::string to_string(AblationArm arm);

struct BenchPreset {
    std::string name;
    int image_size = 64;
    int n_gaussians = 300;
    int n_gt = 8;
    int n_synth = 24;
    int n_test = 8;
    int64_t iterations = 3000;
    double artifact_budget = 0.25;
    SceneLayout layout = SceneLayout::box;
    Eigen::Vector3d background{0.05, 0.05, 0.05};
    uint64_t seed = 1;
    int n_seeds = 3;
    double rig_radius = 3.0;
    double fov_deg = 50.0;
};

// Named presets: "tiny" (ablation-sized) and "default".
BenchPreset bench_preset(const std::string& name);

struct ArmResult {
    AblationArm arm;
    uint64_t seed = 0;
    EvalMetrics metrics;
    double oracle_auroc = 0; // NaN when the arm uses no synthetic views
};

struct AblationReport {
    std::vector<AblationArm> arms;
    std::vector<ArmResult> rows;
    std::string csv; // full deterministic report, including means and deltas

    double mean_psnr(AblationArm arm) const;
};

// Trains every arm on coupled seeds and aggregates the report. When
// out_dir is non-empty, writes report.csv and per-arm comparison strips.
AblationReport run_ablation(const BenchPreset& preset,
                            const std::vector<AblationArm>& arms,
                            const std::filesystem::path& out_dir = {},
                            int workers = 1);

} // namespace ogs
