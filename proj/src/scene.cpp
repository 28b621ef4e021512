#include "ogs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "ogs/png_io.hpp"

namespace ogs {

using nlohmann::json;

namespace {

constexpr double kShC0 = 0.28209479177387814;

[[noreturn]] void scene_error(const std::string& what) {
    throw std::runtime_error("scene: " + what);
}

void check(bool ok, const std::string& what) {
    if (!ok) scene_error(what);
}

} // namespace

Quat quat_from_matrix(const Eigen::Matrix3d& r) {
    Quat q;
    double trace = r(0, 0) + r(1, 1) + r(2, 2);
    if (trace > 0) {
        double s = std::sqrt(trace + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q.normalized();
}

void Camera::validate() const {
    check(fx > 0 && fy > 0, "camera fx/fy must be positive");
    check(width > 0 && height > 0, "camera width/height must be positive");
    check(near > 0 && near < far, "camera requires 0 < near < far");
    check(std::abs(rotation.norm() - 1.0) < 1e-6,
          "camera rotation quaternion must have unit norm");
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& p) {
    Eigen::Vector3d t = cam.world_to_cam(p);
    return {cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy,
            t.z()};
}

void GaussianCloud::resize(size_t n, int degree) {
    sh_degree = degree;
    positions.assign(n, Eigen::Vector3d::Zero());
    log_scales.assign(n, Eigen::Vector3d::Zero());
    rotations.assign(n, Quat{});
    opacity_logits.assign(n, 0.0);
    sh_coeffs.assign(n * sh_basis() * 3, 0.0);
}

void GaussianCloud::renormalize_rotations() {
    for (auto& q : rotations) q = q.normalized();
}

void GaussianCloud::validate() const {
    size_t n = positions.size();
    check(log_scales.size() == n && rotations.size() == n &&
              opacity_logits.size() == n,
          "gaussian cloud attribute arrays disagree on count");
    check(sh_degree >= 0 && sh_degree <= 2, "sh_degree must be in {0,1,2}");
    check(sh_coeffs.size() == n * static_cast<size_t>(sh_basis()) * 3,
          "sh_coeffs size does not match count and degree");
}

std::string to_string(ViewRole role) {
    switch (role) {
        case ViewRole::ground_truth: return "ground_truth";
        case ViewRole::synthetic: return "synthetic";
        case ViewRole::test: return "test";
    }
    return "ground_truth";
}

ViewRole role_from_string(const std::string& s) {
    if (s == "ground_truth") return ViewRole::ground_truth;
    if (s == "synthetic") return ViewRole::synthetic;
    if (s == "test") return ViewRole::test;
    scene_error("unknown view role '" + s + "'");
}

double UncertaintyMap::mean() const {
    if (values.data.empty()) return 0.0;
    double s = 0;
    for (double v : values.data) s += v;
    return s / values.data.size();
}

void UncertaintyMap::validate() const {
    for (double v : values.data)
        check(std::isfinite(v) && v >= 0.0 && v <= 1.0,
              "uncertainty values must lie in [0,1]");
}

void AttentionStack::validate() const {
    check(layer_ids.size() == planes.size(),
          "attention stack needs one plane per layer id");
    for (size_t i = 1; i < planes.size(); ++i)
        check(planes[i].same_shape(planes[0]),
              "attention planes must share H' x W'");
}

void ViewRecord::validate() const {
    camera.validate();
    check(image.channels == 3, "view image must have 3 channels");
    check(image.height == camera.height && image.width == camera.width,
          "view image dimensions disagree with camera");
    auto check_plane = [&](const Plane& p, const char* name) {
        check(p.height == camera.height && p.width == camera.width,
              std::string(name) + " dimensions disagree with camera");
    };
    if (inv_depth) check_plane(*inv_depth, "inv_depth");
    if (depth_mask) check_plane(*depth_mask, "depth_mask");
    if (uncertainty) {
        check_plane(uncertainty->values, "uncertainty");
        uncertainty->validate();
    }
    if (attention) attention->validate();
}

GaussianCloud init_from_points(const std::vector<SeedPoint>& points,
                               const InitParams& params) {
    if (points.empty()) scene_error("init_from_points: empty point set");
    size_t n = points.size();
    GaussianCloud cloud;
    cloud.resize(n, params.sh_degree);

    double opacity_logit =
        std::log(params.init_opacity / (1.0 - params.init_opacity));

    for (size_t i = 0; i < n; ++i) {
        cloud.positions[i] = points[i].position;
        cloud.opacity_logits[i] = opacity_logit;
        for (int c = 0; c < 3; ++c)
            cloud.sh(i, 0, c) = (points[i].color[c] - 0.5) / kShC0;
    }

    // Isotropic scale from mean distance to the k nearest neighbors;
    // brute-force is fine at this scale.
    for (size_t i = 0; i < n; ++i) {
        int k = std::min<int>(params.knn, static_cast<int>(n) - 1);
        double scale = params.fallback_scale;
        if (k > 0) {
            std::vector<double> d2(n - 1);
            size_t m = 0;
            for (size_t j = 0; j < n; ++j)
                if (j != i)
                    d2[m++] = (points[j].position - points[i].position).squaredNorm();
            std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
            double sum = 0;
            for (int q = 0; q < k; ++q) sum += std::sqrt(d2[q]);
            scale = sum / k;
            if (!(scale > 0)) scale = params.fallback_scale;
        }
        cloud.log_scales[i].setConstant(std::log(scale));
    }
    return cloud;
}

namespace {

json camera_to_json(const Camera& cam) {
    return json{{"fx", cam.fx},
                {"fy", cam.fy},
                {"cx", cam.cx},
                {"cy", cam.cy},
                {"width", cam.width},
                {"height", cam.height},
                {"quat", {cam.rotation.w, cam.rotation.x, cam.rotation.y,
                          cam.rotation.z}},
                {"trans", {cam.translation.x(), cam.translation.y(),
                           cam.translation.z()}},
                {"near", cam.near},
                {"far", cam.far}};
}

Camera camera_from_json(const json& j, const std::string& where) {
    Camera cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        auto q = j.at("quat");
        cam.rotation = Quat(q.at(0), q.at(1), q.at(2), q.at(3));
        auto t = j.at("trans");
        cam.translation = Eigen::Vector3d(t.at(0), t.at(1), t.at(2));
        cam.near = j.at("near").get<double>();
        cam.far = j.at("far").get<double>();
    } catch (const json::exception& e) {
        scene_error(where + ": malformed camera: " + e.what());
    }
    try {
        cam.validate();
    } catch (const std::exception& e) {
        scene_error(where + ": " + e.what());
    }
    return cam;
}

// Gaussian cloud packs into an N x (11 + 3*basis) tensor:
// pos(3) log_scales(3) quat(4) opacity_logit(1) sh(3*basis).
Tensor cloud_to_tensor(const GaussianCloud& cloud) {
    int basis = cloud.sh_basis();
    uint32_t cols = static_cast<uint32_t>(11 + 3 * basis);
    Tensor t;
    t.dims = {static_cast<uint32_t>(cloud.count()), cols};
    t.data.resize(t.size());
    for (size_t i = 0; i < cloud.count(); ++i) {
        double* row = t.data.data() + i * cols;
        for (int k = 0; k < 3; ++k) row[k] = cloud.positions[i][k];
        for (int k = 0; k < 3; ++k) row[3 + k] = cloud.log_scales[i][k];
        row[6] = cloud.rotations[i].w;
        row[7] = cloud.rotations[i].x;
        row[8] = cloud.rotations[i].y;
        row[9] = cloud.rotations[i].z;
        row[10] = cloud.opacity_logits[i];
        for (int k = 0; k < 3 * basis; ++k)
            row[11 + k] = cloud.sh_coeffs[i * 3 * basis + k];
    }
    return t;
}

GaussianCloud cloud_from_tensor(const Tensor& t, int sh_degree) {
    if (t.dims.size() != 2) scene_error("gaussian tensor must have rank 2");
    int basis = (sh_degree + 1) * (sh_degree + 1);
    uint32_t cols = static_cast<uint32_t>(11 + 3 * basis);
    if (t.dims[1] != cols)
        scene_error("gaussian tensor has " + std::to_string(t.dims[1]) +
                    " columns, expected " + std::to_string(cols) +
                    " for sh_degree " + std::to_string(sh_degree));
    GaussianCloud cloud;
    cloud.resize(t.dims[0], sh_degree);
    for (size_t i = 0; i < cloud.count(); ++i) {
        const double* row = t.data.data() + i * cols;
        cloud.positions[i] = Eigen::Vector3d(row[0], row[1], row[2]);
        cloud.log_scales[i] = Eigen::Vector3d(row[3], row[4], row[5]);
        cloud.rotations[i] = Quat(row[6], row[7], row[8], row[9]);
        cloud.opacity_logits[i] = row[10];
        for (int k = 0; k < 3 * basis; ++k)
            cloud.sh_coeffs[i * 3 * basis + k] = row[11 + k];
    }
    return cloud;
}

Tensor seeds_to_tensor(const std::vector<SeedPoint>& points) {
    Tensor t;
    t.dims = {static_cast<uint32_t>(points.size()), 6};
    t.data.resize(t.size());
    for (size_t i = 0; i < points.size(); ++i) {
        double* row = t.data.data() + i * 6;
        for (int k = 0; k < 3; ++k) row[k] = points[i].position[k];
        for (int k = 0; k < 3; ++k) row[3 + k] = points[i].color[k];
    }
    return t;
}

std::vector<SeedPoint> seeds_from_tensor(const Tensor& t) {
    if (t.dims.size() != 2 || t.dims[1] != 6)
        scene_error("seed point tensor must be N x 6 (xyz rgb)");
    std::vector<SeedPoint> points(t.dims[0]);
    for (size_t i = 0; i < points.size(); ++i) {
        const double* row = t.data.data() + i * 6;
        points[i].position = Eigen::Vector3d(row[0], row[1], row[2]);
        points[i].color = Eigen::Vector3d(row[3], row[4], row[5]);
    }
    return points;
}

Plane load_plane_checked(const std::filesystem::path& path, const Camera& cam,
                         const std::string& field) {
    if (!std::filesystem::exists(path))
        scene_error(field + ": missing file '" + path.string() + "'");
    Plane p = plane_from_tensor(read_tensor(path));
    if (p.height != cam.height || p.width != cam.width)
        scene_error(field + " '" + path.string() + "': dimensions " +
                    std::to_string(p.width) + "x" + std::to_string(p.height) +
                    " disagree with camera " + std::to_string(cam.width) + "x" +
                    std::to_string(cam.height));
    return p;
}

} // namespace

SceneBundle load_scene(const std::filesystem::path& path) {
    std::filesystem::path manifest = path;
    if (std::filesystem::is_directory(path)) manifest = path / "scene.json";
    if (!std::filesystem::exists(manifest))
        scene_error("missing manifest '" + manifest.string() + "'");
    std::filesystem::path dir = manifest.parent_path();

    std::ifstream in(manifest);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        scene_error("malformed manifest '" + manifest.string() + "': " + e.what());
    }

    SceneBundle bundle;
    InitParams init_defaults;

    try {
        if (j.contains("seed_points")) {
            std::filesystem::path sp = dir / j.at("seed_points").get<std::string>();
            if (!std::filesystem::exists(sp))
                scene_error("seed_points: missing file '" + sp.string() + "'");
            bundle.seed_points = seeds_from_tensor(read_tensor(sp));
        }
        if (j.contains("gaussians")) {
            const json& g = j.at("gaussians");
            std::filesystem::path gp = dir / g.at("path").get<std::string>();
            if (!std::filesystem::exists(gp))
                scene_error("gaussians: missing file '" + gp.string() + "'");
            bundle.cloud =
                cloud_from_tensor(read_tensor(gp), g.at("sh_degree").get<int>());
        } else if (!bundle.seed_points.empty()) {
            bundle.cloud = init_from_points(bundle.seed_points, init_defaults);
        }

        for (const json& vj : j.value("views", json::array())) {
            ViewRecord view;
            std::string where = "view " + std::to_string(bundle.views.size());
            view.camera = camera_from_json(vj.at("camera"), where);
            std::filesystem::path img = dir / vj.at("image").get<std::string>();
            if (!std::filesystem::exists(img))
                scene_error(where + ": missing image '" + img.string() + "'");
            view.image = read_png(img);
            view.role = role_from_string(vj.at("role").get<std::string>());
            if (vj.contains("inv_depth"))
                view.inv_depth = load_plane_checked(
                    dir / vj.at("inv_depth").get<std::string>(), view.camera,
                    where + ".inv_depth");
            if (vj.contains("depth_mask"))
                view.depth_mask = load_plane_checked(
                    dir / vj.at("depth_mask").get<std::string>(), view.camera,
                    where + ".depth_mask");
            if (vj.contains("uncertainty")) {
                UncertaintyMap u;
                u.values = load_plane_checked(
                    dir / vj.at("uncertainty").get<std::string>(), view.camera,
                    where + ".uncertainty");
                u.validate();
                view.uncertainty = std::move(u);
            }
            if (vj.contains("attention")) {
                const json& aj = vj.at("attention");
                std::filesystem::path ap = dir / aj.at("path").get<std::string>();
                if (!std::filesystem::exists(ap))
                    scene_error(where + ".attention: missing file '" + ap.string() +
                                "'");
                Tensor at = read_tensor(ap);
                if (at.dims.size() != 3)
                    scene_error(where + ".attention: tensor must have rank 3");
                AttentionStack stack;
                stack.layer_ids = aj.at("layers").get<std::vector<int>>();
                stack.source_view_id = aj.value("source_view_id", -1);
                stack.chunk_id = aj.value("chunk_id", -1);
                if (stack.layer_ids.size() != at.dims[0])
                    scene_error(where + ".attention: " +
                                std::to_string(stack.layer_ids.size()) +
                                " layer ids for " + std::to_string(at.dims[0]) +
                                " planes");
                size_t plane_size = static_cast<size_t>(at.dims[1]) * at.dims[2];
                for (uint32_t l = 0; l < at.dims[0]; ++l) {
                    Plane p(static_cast<int>(at.dims[1]),
                            static_cast<int>(at.dims[2]));
                    std::copy_n(at.data.begin() + l * plane_size, plane_size,
                                p.data.begin());
                    stack.planes.push_back(std::move(p));
                }
                view.attention = std::move(stack);
            }
            if (vj.contains("image")) {
                if (view.image.height != view.camera.height ||
                    view.image.width != view.camera.width)
                    scene_error(where + ": image '" + img.string() + "' is " +
                                std::to_string(view.image.width) + "x" +
                                std::to_string(view.image.height) +
                                " but camera declares " +
                                std::to_string(view.camera.width) + "x" +
                                std::to_string(view.camera.height));
            }
            view.validate();
            bundle.views.push_back(std::move(view));
        }
    } catch (const json::exception& e) {
        scene_error("malformed manifest '" + manifest.string() + "': " + e.what());
    }

    bundle.cloud.validate();
    return bundle;
}

void save_scene(const SceneBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    json j;
    j["format"] = "ogs-scene-v1";

    if (!bundle.seed_points.empty()) {
        write_tensor(dir / "points.ogt", seeds_to_tensor(bundle.seed_points));
        j["seed_points"] = "points.ogt";
    }
    if (bundle.cloud.count() > 0) {
        write_tensor(dir / "gaussians.ogt", cloud_to_tensor(bundle.cloud));
        j["gaussians"] = {{"path", "gaussians.ogt"},
                          {"sh_degree", bundle.cloud.sh_degree}};
    }

    json views = json::array();
    for (size_t i = 0; i < bundle.views.size(); ++i) {
        const ViewRecord& view = bundle.views[i];
        char stem[32];
        std::snprintf(stem, sizeof(stem), "view_%03zu", i);
        json vj;
        vj["camera"] = camera_to_json(view.camera);
        std::string img = std::string("images/") + stem + ".png";
        write_png(dir / img, view.image);
        vj["image"] = img;
        vj["role"] = to_string(view.role);
        if (view.inv_depth) {
            std::string p = std::string("depth/") + stem + ".ogt";
            write_tensor(dir / p, to_tensor(*view.inv_depth));
            vj["inv_depth"] = p;
        }
        if (view.depth_mask) {
            std::string p = std::string("depth/") + stem + "_mask.ogt";
            write_tensor(dir / p, to_tensor(*view.depth_mask));
            vj["depth_mask"] = p;
        }
        if (view.uncertainty) {
            std::string p = std::string("uncertainty/") + stem + ".ogt";
            write_tensor(dir / p, to_tensor(view.uncertainty->values));
            vj["uncertainty"] = p;
        }
        if (view.attention) {
            const AttentionStack& stack = *view.attention;
            Tensor at;
            at.dims = {static_cast<uint32_t>(stack.planes.size()),
                       static_cast<uint32_t>(stack.planes[0].height),
                       static_cast<uint32_t>(stack.planes[0].width)};
            at.data.reserve(at.size());
            for (const Plane& p : stack.planes)
                at.data.insert(at.data.end(), p.data.begin(), p.data.end());
            std::string p = std::string("attention/") + stem + ".ogt";
            write_tensor(dir / p, at);
            vj["attention"] = {{"path", p},
                               {"layers", stack.layer_ids},
                               {"source_view_id", stack.source_view_id},
                               {"chunk_id", stack.chunk_id}};
        }
        views.push_back(std::move(vj));
    }
    j["views"] = std::move(views);

    // Manifest written last, via temp + rename.
    std::filesystem::path tmp = dir / "scene.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) scene_error("cannot write manifest '" + tmp.string() + "'");
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, dir / "scene.json");
}

} // namespace ogs
