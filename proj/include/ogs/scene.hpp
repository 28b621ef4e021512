#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ogs/tensor.hpp"

namespace ogs {

// Unit quaternion, (w, x, y, z) component order, Hamilton product.
// Camera rotations are world -> camera.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    // Rotation matrix of the *normalized* quaternion.
    Eigen::Matrix3d to_matrix() const {
        Quat q = normalized();
        Eigen::Matrix3d r;
        r << 1 - 2 * (q.y * q.y + q.z * q.z), 2 * (q.x * q.y - q.w * q.z),
            2 * (q.x * q.z + q.w * q.y), 2 * (q.x * q.y + q.w * q.z),
            1 - 2 * (q.x * q.x + q.z * q.z), 2 * (q.y * q.z - q.w * q.x),
            2 * (q.x * q.z - q.w * q.y), 2 * (q.y * q.z + q.w * q.x),
            1 - 2 * (q.x * q.x + q.y * q.y);
        return r;
    }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }
};

// Inverse of Quat::to_matrix for proper rotations.
Quat quat_from_matrix(const Eigen::Matrix3d& r);

struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Quat rotation;                              // world -> camera
    Eigen::Vector3d translation{0, 0, 0};       // world -> camera
    double near = 0.01, far = 100.0;

    Eigen::Matrix3d rot_matrix() const { return rotation.to_matrix(); }
    Eigen::Vector3d world_to_cam(const Eigen::Vector3d& p) const {
        return rot_matrix() * p + translation;
    }
    Eigen::Vector3d center() const {
        return -(rot_matrix().transpose() * translation);
    }
    void validate() const;
};

// (u, v) are continuous pixel coordinates; pixel (ix, iy) covers
// [ix, ix+1) x [iy, iy+1). z is camera-frame depth; callers cull z <= 0.
struct Projection {
    double u = 0, v = 0, z = 0;
};
Projection project_point(const Camera& cam, const Eigen::Vector3d& p);

struct GaussianCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> log_scales;
    std::vector<Quat> rotations;
    std::vector<double> opacity_logits;
    int sh_degree = 1;
    std::vector<double> sh_coeffs; // count * basis * 3, coefficient-major

    size_t count() const { return positions.size(); }
    int sh_basis() const { return (sh_degree + 1) * (sh_degree + 1); }
    double sh(size_t i, int coeff, int channel) const {
        return sh_coeffs[(i * sh_basis() + coeff) * 3 + channel];
    }
    double& sh(size_t i, int coeff, int channel) {
        return sh_coeffs[(i * sh_basis() + coeff) * 3 + channel];
    }

    void resize(size_t n, int degree);
    void renormalize_rotations();
    void validate() const; // consistent sizes, throws on violation
};

enum class ViewRole { ground_truth, synthetic, test };

std::string to_string(ViewRole role);
ViewRole role_from_string(const std::string& s);

// Per-pixel confidence in [0, 1]; 1 = multi-view supported, 0 = uncertain.
struct UncertaintyMap {
    Plane values;

    double mean() const;
    void validate() const;
};

struct AttentionStack {
    std::vector<int> layer_ids;
    std::vector<Plane> planes; // one per layer id, shared H' x W'
    int source_view_id = -1;
    int chunk_id = -1;

    void validate() const;
};

struct ViewRecord {
    Camera camera;
    Image image; // H x W x 3 in [0, 1]
    ViewRole role = ViewRole::ground_truth;
    std::optional<Plane> inv_depth;
    std::optional<Plane> depth_mask;
    std::optional<UncertaintyMap> uncertainty;
    std::optional<AttentionStack> attention;

    // Synthetic views without a map are flagged for oracle computation.
    bool needs_uncertainty() const {
        return role == ViewRole::synthetic && !uncertainty.has_value();
    }
    void validate() const;
};

struct SeedPoint {
    Eigen::Vector3d position{0, 0, 0};
    Eigen::Vector3d color{0.5, 0.5, 0.5};
};

struct SceneBundle {
    GaussianCloud cloud;
    std::vector<SeedPoint> seed_points;
    std::vector<ViewRecord> views;
};

struct InitParams {
    double fallback_scale = 0.01; // world units, used when no neighbor exists
    double init_opacity = 0.1;
    int sh_degree = 1;
    int knn = 3;
};

// One isotropic Gaussian per seed point; scale from mean distance to the
// k nearest neighbors, SH DC from color, identity rotation.
GaussianCloud init_from_points(const std::vector<SeedPoint>& points,
                               const InitParams& params = {});

// Scene manifest I/O. `path` may name the manifest file or its directory
// (the manifest is then <dir>/scene.json). Rasters live next to it.
SceneBundle load_scene(const std::filesystem::path& path);
void save_scene(const SceneBundle& bundle, const std::filesystem::path& dir);

} // namespace ogs
