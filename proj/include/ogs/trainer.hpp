#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "ogs/config.hpp"
#include "ogs/curriculum.hpp"
#include "ogs/losses.hpp"
#include "ogs/rasterizer.hpp"
#include "ogs/rng.hpp"
#include "ogs/scene.hpp"

namespace ogs {

// Where synthetic-branch uncertainty maps come from:
//   attached - the view's map (or a fusion of its attention stack);
//              training errors out if neither is present.
//   oracle   - like attached, falling back to the reprojection oracle.
//   ones     - force U == 1 everywhere (naive synthetic supervision).
enum class UncertaintySource { attached, oracle, ones };

std::string to_string(UncertaintySource s);
UncertaintySource uncertainty_source_from_string(const std::string& s);

struct TrainConfig {
    int64_t iterations = 22000;
    int64_t checkpoint_interval = 1000;

    double lr_position = 1.6e-4;
    double lr_position_final_factor = 0.01; // exponential decay target
    double lr_log_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_sh = 2.5e-3;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-15;

    uint64_t seed = 1;
    int workers = 1;
    Eigen::Vector3d background{0, 0, 0};

    ScheduleParams schedule;
    LossWeights loss;
    InitParams init;
    RenderConfig render;

    UncertaintySource uncertainty_source = UncertaintySource::attached;
    double oracle_sigma_photo = 0.15;
    std::map<int, double> fuse_weights = {{0, 0.25}, {22, 0.75}};

    void validate() const;
};

// Full round-trip between TrainConfig and the flat key=value config file;
// to_config() enumerates every field with its effective value.
TrainConfig train_config_from(const Config& cfg);
Config to_config(const TrainConfig& tc);

struct AdamMoments {
    std::vector<Eigen::Vector3d> m_pos, v_pos, m_ls, v_ls;
    std::vector<Eigen::Vector4d> m_rot, v_rot;
    std::vector<double> m_op, v_op, m_sh, v_sh;
    int64_t step_count = 0;

    void resize_like(const GaussianCloud& cloud);
};

struct StepReport {
    int64_t iteration = 0;
    ViewRole branch = ViewRole::ground_truth;
    bool view_loss_applied = false; // false on empty-branch (regularizer-only) steps
    int view_index = -1;            // index into the bundle's views
    double loss = 0;
    double lambda_depth = 0;
    double p_synth = 0;
};

struct TrainState {
    GaussianCloud cloud;
    AdamMoments moments;
    CounterRng rng{1};
    std::vector<int> gt_views;
    std::vector<int> synth_views;
    std::vector<int> test_views;
    // Resolved per-synthetic-view uncertainty, parallel to synth_views.
    std::vector<UncertaintyMap> synth_uncertainty;
};

TrainState make_train_state(const SceneBundle& bundle, const TrainConfig& config);

// One optimization step: curriculum draw (branch + view index, always two
// rng draws), render, branch loss, analytic backward, Adam update,
// quaternion renormalization. A synthetic draw with no synthetic views
// applies the regularizer only, so uncertainty-gated and synthetic-absent
// runs stay coupled under the same rng stream.
StepReport train_step(TrainState& state, const SceneBundle& bundle,
                      int64_t iteration, const TrainConfig& config);

struct MetricsRow {
    int64_t iteration = 0;
    std::string branch;
    double loss = 0;
    std::optional<double> psnr_test;
    double lambda_depth = 0;
    double p_synth = 0;
};

struct TrainResult {
    GaussianCloud cloud;
    std::vector<MetricsRow> trace;
};

// Full loop with held-out evaluation at the checkpoint cadence. When
// out_dir is non-empty, writes metrics.csv, checkpoints and the final
// scene there.
TrainResult train(const SceneBundle& bundle, const TrainConfig& config,
                  const std::filesystem::path& out_dir = {});

void save_checkpoint(const SceneBundle& bundle, const GaussianCloud& cloud,
                     const AdamMoments& moments,
                     const std::filesystem::path& dir);

} // namespace ogs
