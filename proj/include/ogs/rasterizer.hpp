#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

#include "ogs/scene.hpp"
#include "ogs/tensor.hpp"

namespace ogs {

struct RenderConfig {
    int tile_size = 16;
    double sigma_cutoff = 3.0;      // binning footprint radius in sigmas; <= 0 disables culling
    double cull_margin_px = 2.0;    // extra binning slack around the footprint
    double cov2d_lowpass = 0.3;     // added to cov2d diagonal before inversion (pixels^2)
    double det_floor = 1e-8;
    double transmittance_min = 1e-4; // forward and backward truncate identically
    double accum_eps = 1e-6;         // expected_inv_depth normalizer floor
    int workers = 1;
};

// Per-Gaussian projected state entering the per-pixel blend.
struct Splat2D {
    Eigen::Vector2d mean2d{0, 0};
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero(); // lowpass included
    double depth = 0;
    double inv_depth = 0;
    Eigen::Vector3d color{0, 0, 0}; // SH toward camera, clamped to [0,1]
    double alpha = 0;
    int source_index = -1;

    // Backward context.
    Eigen::Vector3d cam_point{0, 0, 0};
    Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();
    double radius = 0; // binning radius in pixels
    bool color_gate[3] = {true, true, true}; // false where the [0,1] clamp bound
};

// Opaque record of the blend for the analytic backward pass.
struct RenderTape {
    Camera camera;
    RenderConfig config;
    Eigen::Vector3d background{0, 0, 0};
    size_t cloud_count = 0;
    int sh_degree = 0;
    std::vector<Splat2D> splats;
    std::vector<std::vector<int>> tile_lists; // depth-sorted splat indices
    int tiles_x = 0, tiles_y = 0;
    std::vector<int> frag_count; // per pixel, fragments blended before stop
};

struct RenderOutput {
    Image color;                 // H x W x 3, composited over background
    Plane expected_inv_depth;    // alpha-weighted mean inverse depth
    Plane accum_alpha;           // in [0, 1]
    Plane final_transmittance;   // residual T after the last blended fragment
    std::shared_ptr<RenderTape> tape;
};

struct CloudGrads {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> log_scales;
    std::vector<Eigen::Vector4d> rotations; // (w, x, y, z)
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;

    void resize_like(const GaussianCloud& cloud);
    void add_scaled(const CloudGrads& other, double scale);
};

// Sigma = R diag(exp(log_scales)^2) R^T for the normalized quaternion.
Eigen::Matrix3d covariance3d(const Eigen::Vector3d& log_scales, const Quat& rotation);

// EWA-style perspective linearization. Returns nullopt when the Gaussian is
// culled (depth <= near, or footprint entirely off-frustum beyond the margin).
// cov2d includes the low-pass term.
std::optional<Splat2D> project_gaussian(const Camera& camera,
                                        const Eigen::Vector3d& mean,
                                        const Eigen::Matrix3d& cov3d,
                                        const RenderConfig& config = {});

RenderOutput render(const GaussianCloud& cloud, const Camera& camera,
                    const Eigen::Vector3d& background,
                    const RenderConfig& config = {});

// Analytic gradients of (color, expected_inv_depth) w.r.t. every optimizable
// attribute. dL_dcolor is H x W x 3, dL_dinv_depth H x W. The tape must come
// from a render of the same cloud.
CloudGrads render_backward(const GaussianCloud& cloud, const RenderTape& tape,
                           const Image& dL_dcolor, const Plane& dL_dinv_depth);

} // namespace ogs
