#include "ogs/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ogs {

Plane normalize_plane(const Plane& plane) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : plane.data) {
        if (!std::isfinite(v))
            throw std::runtime_error("normalize_plane: non-finite input");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Plane out(plane.height, plane.width);
    if (plane.data.empty()) return out;
    if (hi == lo) {
        std::fill(out.data.begin(), out.data.end(), 0.5);
        return out;
    }
    double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < plane.data.size(); ++i)
        out.data[i] = (plane.data[i] - lo) * inv;
    return out;
}

Plane resample_bilinear(const Plane& src, int target_h, int target_w) {
    if (src.height == target_h && src.width == target_w) return src;
    Plane out(target_h, target_w);
    double sy = static_cast<double>(src.height) / target_h;
    double sx = static_cast<double>(src.width) / target_w;
    for (int y = 0; y < target_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                               static_cast<double>(src.height - 1));
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(src.width - 1));
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - x0;
            out.at(y, x) = (1 - wy) * ((1 - wx) * src.at(y0, x0) +
                                       wx * src.at(y0, x1)) +
                           wy * ((1 - wx) * src.at(y1, x0) +
                                 wx * src.at(y1, x1));
        }
    }
    return out;
}

UncertaintyMap fuse_uncertainty(const AttentionStack& stack,
                                const std::map<int, double>& layer_weights,
                                int target_h, int target_w) {
    stack.validate();
    if (stack.planes.empty())
        throw std::runtime_error("fuse_uncertainty: empty attention stack");
    if (layer_weights.size() != stack.layer_ids.size())
        throw std::runtime_error(
            "fuse_uncertainty: weights do not cover the stack's layer ids");
    double sum = 0;
    for (int id : stack.layer_ids) {
        auto it = layer_weights.find(id);
        if (it == layer_weights.end())
            throw std::runtime_error("fuse_uncertainty: no weight for layer " +
                                     std::to_string(id));
        sum += it->second;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::runtime_error("fuse_uncertainty: weights sum to " +
                                 std::to_string(sum) + ", expected 1");

    Plane fused(stack.planes[0].height, stack.planes[0].width, 0.0);
    for (size_t l = 0; l < stack.planes.size(); ++l) {
        double w = layer_weights.at(stack.layer_ids[l]);
        Plane norm = normalize_plane(stack.planes[l]);
        for (size_t i = 0; i < fused.data.size(); ++i)
            fused.data[i] += w * norm.data[i];
    }
    UncertaintyMap u;
    u.values = resample_bilinear(fused, target_h, target_w);
    for (double& v : u.values.data) v = std::clamp(v, 0.0, 1.0);
    return u;
}

std::vector<std::vector<int>> partition_chunks(const std::vector<int>& view_ids,
                                               int chunk_size) {
    if (chunk_size < 2)
        throw std::runtime_error("partition_chunks: chunk_size must be >= 2");
    std::vector<std::vector<int>> chunks;
    for (size_t i = 0; i < view_ids.size(); i += chunk_size) {
        size_t end = std::min(view_ids.size(), i + chunk_size);
        chunks.emplace_back(view_ids.begin() + i, view_ids.begin() + end);
    }
    if (chunks.size() >= 2 && chunks.back().size() == 1) {
        chunks[chunks.size() - 2].push_back(chunks.back()[0]);
        chunks.pop_back();
    }
    return chunks;
}

namespace {

bool sample_image(const Image& img, double u, double v, Eigen::Vector3d* out) {
    // Full bilinear support only; outside counts as not visible.
    double x = u - 0.5, y = v - 0.5;
    if (x < 0.0 || y < 0.0 || x > img.width - 1.0 || y > img.height - 1.0)
        return false;
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, img.width - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    double wx = x - x0, wy = y - y0;
    for (int c = 0; c < 3; ++c)
        (*out)[c] = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) +
                                wx * img.at(y0, x1, c)) +
                    wy * ((1 - wx) * img.at(y1, x0, c) +
                          wx * img.at(y1, x1, c));
    return true;
}

} // namespace

UncertaintyMap reprojection_oracle(const ViewRecord& synthetic_view,
                                   const std::vector<const ViewRecord*>& neighbors,
                                   double sigma_photo) {
    if (neighbors.empty())
        throw std::runtime_error("reprojection_oracle: no neighbors");
    if (!synthetic_view.inv_depth)
        throw std::runtime_error(
            "reprojection_oracle: synthetic view has no inverse depth");

    const Camera& cam = synthetic_view.camera;
    Eigen::Matrix3d R_inv = cam.rot_matrix().transpose();
    double inv_sigma2 = 1.0 / (sigma_photo * sigma_photo);

    UncertaintyMap u;
    u.values = Plane(cam.height, cam.width, 0.0);

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double invd = synthetic_view.inv_depth->at(y, x);
            bool has_depth = invd > 0.0;
            if (synthetic_view.depth_mask &&
                synthetic_view.depth_mask->at(y, x) < 0.5)
                has_depth = false;
            if (!has_depth) continue; // no evidence -> U = 0

            double z = 1.0 / invd;
            Eigen::Vector3d ray((x + 0.5 - cam.cx) / cam.fx,
                                (y + 0.5 - cam.cy) / cam.fy, 1.0);
            Eigen::Vector3d world = R_inv * (ray * z - cam.translation);

            Eigen::Vector3d own(synthetic_view.image.at(y, x, 0),
                                synthetic_view.image.at(y, x, 1),
                                synthetic_view.image.at(y, x, 2));

            double err_sum = 0;
            int visible = 0;
            for (const ViewRecord* nb : neighbors) {
                Projection pr = project_point(nb->camera, world);
                if (!(pr.z > nb->camera.near)) continue;
                Eigen::Vector3d sample;
                if (!sample_image(nb->image, pr.u, pr.v, &sample)) continue;
                err_sum += (own - sample).cwiseAbs().mean();
                ++visible;
            }
            if (visible == 0) continue; // U stays 0
            double e = err_sum / visible;
            u.values.at(y, x) = std::exp(-e * e * inv_sigma2);
        }
    }
    return u;
}

double oracle_auroc(const UncertaintyMap& u, const Plane& corruption_mask) {
    if (!u.values.same_shape(corruption_mask))
        throw std::runtime_error("oracle_auroc: shape mismatch");
    size_t n = corruption_mask.data.size();
    size_t pos = 0;
    for (double m : corruption_mask.data)
        if (m > 0.5) ++pos;
    size_t neg = n - pos;
    if (pos == 0 || neg == 0)
        throw std::runtime_error("oracle_auroc: mask must contain both classes");

    // Threshold sweep over descending scores with tie groups; trapezoid area.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<double> score(n);
    for (size_t i = 0; i < n; ++i) score[i] = 1.0 - u.values.data[i];
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
    });

    double area = 0;
    size_t tp = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        size_t dtp = 0, dfp = 0;
        while (j < n && score[order[j]] == score[order[i]]) {
            if (corruption_mask.data[order[j]] > 0.5)
                ++dtp;
            else
                ++dfp;
            ++j;
        }
        area += static_cast<double>(dfp) *
                (static_cast<double>(tp) + 0.5 * static_cast<double>(dtp));
        tp += dtp;
        i = j;
    }
    return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

} // namespace ogs
