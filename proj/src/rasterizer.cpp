#include "ogs/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

namespace ogs {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                           0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void sh_basis(int degree, const Eigen::Vector3d& v, double* out) {
    out[0] = kC0;
    if (degree >= 1) {
        out[1] = -kC1 * v.y();
        out[2] = kC1 * v.z();
        out[3] = -kC1 * v.x();
    }
    if (degree >= 2) {
        double xx = v.x() * v.x(), yy = v.y() * v.y(), zz = v.z() * v.z();
        out[4] = kC2[0] * v.x() * v.y();
        out[5] = kC2[1] * v.y() * v.z();
        out[6] = kC2[2] * (2 * zz - xx - yy);
        out[7] = kC2[3] * v.x() * v.z();
        out[8] = kC2[4] * (xx - yy);
    }
}

void sh_basis_grad(int degree, const Eigen::Vector3d& v, Eigen::Vector3d* out) {
    out[0].setZero();
    if (degree >= 1) {
        out[1] = Eigen::Vector3d(0, -kC1, 0);
        out[2] = Eigen::Vector3d(0, 0, kC1);
        out[3] = Eigen::Vector3d(-kC1, 0, 0);
    }
    if (degree >= 2) {
        out[4] = Eigen::Vector3d(kC2[0] * v.y(), kC2[0] * v.x(), 0);
        out[5] = Eigen::Vector3d(0, kC2[1] * v.z(), kC2[1] * v.y());
        out[6] = Eigen::Vector3d(-2 * kC2[2] * v.x(), -2 * kC2[2] * v.y(),
                                 4 * kC2[2] * v.z());
        out[7] = Eigen::Vector3d(kC2[3] * v.z(), 0, kC2[3] * v.x());
        out[8] = Eigen::Vector3d(2 * kC2[4] * v.x(), -2 * kC2[4] * v.y(), 0);
    }
}

// Contiguous-range parallel loop. Partitioning depends only on (n, workers),
// so results are reproducible for a fixed worker count.
void parallel_ranges(int n, int workers, const std::function<void(int, int)>& fn) {
    if (workers <= 1 || n <= 1) {
        if (n > 0) fn(0, n);
        return;
    }
    int used = std::min(workers, n);
    int chunk = (n + used - 1) / used;
    std::vector<std::thread> pool;
    for (int w = 0; w < used; ++w) {
        int s = w * chunk;
        int e = std::min(n, s + chunk);
        if (s >= e) break;
        pool.emplace_back(fn, s, e);
    }
    for (auto& t : pool) t.join();
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam,
                                                const Eigen::Vector3d& t) {
    double iz = 1.0 / t.z();
    double iz2 = iz * iz;
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx * iz, 0, -cam.fx * t.x() * iz2, 0, cam.fy * iz,
        -cam.fy * t.y() * iz2;
    return J;
}

// View direction from camera center toward the Gaussian.
Eigen::Vector3d view_direction(const Camera& cam, const Eigen::Vector3d& mean,
                               double* dist_out) {
    Eigen::Vector3d u = mean - cam.center();
    double rho = u.norm();
    if (dist_out) *dist_out = rho;
    if (rho < 1e-12) return Eigen::Vector3d(0, 0, 1);
    return u / rho;
}

struct FragGrad {
    Eigen::Vector2d mean2d{0, 0};
    double conic_a = 0, conic_b = 0, conic_c = 0; // full-matrix entries
    Eigen::Vector3d color{0, 0, 0};
    double alpha = 0;
    double inv_depth = 0;
};

// dR/dq for the normalized quaternion, component order (w, x, y, z).
void rotation_grads(const Quat& q, Eigen::Matrix3d dR[4]) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (int k = 0; k < 4; ++k) dR[k] *= 2.0;
}

} // namespace

void CloudGrads::resize_like(const GaussianCloud& cloud) {
    positions.assign(cloud.count(), Eigen::Vector3d::Zero());
    log_scales.assign(cloud.count(), Eigen::Vector3d::Zero());
    rotations.assign(cloud.count(), Eigen::Vector4d::Zero());
    opacity_logits.assign(cloud.count(), 0.0);
    sh_coeffs.assign(cloud.sh_coeffs.size(), 0.0);
}

void CloudGrads::add_scaled(const CloudGrads& other, double scale) {
    for (size_t i = 0; i < positions.size(); ++i) {
        positions[i] += scale * other.positions[i];
        log_scales[i] += scale * other.log_scales[i];
        rotations[i] += scale * other.rotations[i];
        opacity_logits[i] += scale * other.opacity_logits[i];
    }
    for (size_t i = 0; i < sh_coeffs.size(); ++i)
        sh_coeffs[i] += scale * other.sh_coeffs[i];
}

Eigen::Matrix3d covariance3d(const Eigen::Vector3d& log_scales,
                             const Quat& rotation) {
    Eigen::Vector3d s = log_scales.array().exp();
    Eigen::Matrix3d m = rotation.to_matrix() * s.asDiagonal();
    return m * m.transpose();
}

std::optional<Splat2D> project_gaussian(const Camera& camera,
                                        const Eigen::Vector3d& mean,
                                        const Eigen::Matrix3d& cov3d,
                                        const RenderConfig& config) {
    Eigen::Vector3d t = camera.world_to_cam(mean);
    if (!(t.z() > camera.near)) return std::nullopt;

    Eigen::Matrix<double, 2, 3> J = projection_jacobian(camera, t);
    Eigen::Matrix<double, 2, 3> M = J * camera.rot_matrix();
    Eigen::Matrix2d cov2d = M * cov3d * M.transpose();
    cov2d(0, 0) += config.cov2d_lowpass;
    cov2d(1, 1) += config.cov2d_lowpass;

    double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
    det = std::max(det, config.det_floor);

    Splat2D sp;
    sp.cam_point = t;
    sp.depth = t.z();
    sp.inv_depth = 1.0 / t.z();
    sp.mean2d = Eigen::Vector2d(camera.fx * t.x() / t.z() + camera.cx,
                                camera.fy * t.y() / t.z() + camera.cy);
    sp.cov2d = cov2d;
    sp.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det,
        cov2d(0, 0) / det;

    bool cull = config.sigma_cutoff > 0;
    if (cull) {
        double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
        double lmax = mid + std::sqrt(std::max(mid * mid - det, 0.0));
        sp.radius = config.sigma_cutoff * std::sqrt(lmax) + config.cull_margin_px;
        if (sp.mean2d.x() + sp.radius < 0.0 ||
            sp.mean2d.x() - sp.radius > camera.width ||
            sp.mean2d.y() + sp.radius < 0.0 ||
            sp.mean2d.y() - sp.radius > camera.height)
            return std::nullopt;
    } else {
        sp.radius = std::numeric_limits<double>::infinity();
    }
    return sp;
}

RenderOutput render(const GaussianCloud& cloud, const Camera& camera,
                    const Eigen::Vector3d& background,
                    const RenderConfig& config) {
    cloud.validate();
    camera.validate();

    const int H = camera.height;
    const int W = camera.width;
    const int basis = cloud.sh_basis();

    auto tape = std::make_shared<RenderTape>();
    tape->camera = camera;
    tape->config = config;
    tape->background = background;
    tape->cloud_count = cloud.count();
    tape->sh_degree = cloud.sh_degree;

    for (size_t i = 0; i < cloud.count(); ++i) {
        bool ok = cloud.positions[i].allFinite() &&
                  cloud.log_scales[i].allFinite() &&
                  std::isfinite(cloud.opacity_logits[i]) &&
                  std::isfinite(cloud.rotations[i].w) &&
                  std::isfinite(cloud.rotations[i].x) &&
                  std::isfinite(cloud.rotations[i].y) &&
                  std::isfinite(cloud.rotations[i].z) &&
                  cloud.rotations[i].norm() > 1e-12;
        for (int k = 0; ok && k < basis * 3; ++k)
            ok = std::isfinite(cloud.sh_coeffs[i * basis * 3 + k]);
        if (!ok)
            throw std::runtime_error(
                "render: non-finite attribute values on gaussian " +
                std::to_string(i));
    }

    // Project every Gaussian; keep survivors in index order.
    std::vector<Splat2D> projected(cloud.count());
    std::vector<char> valid(cloud.count(), 0);
    std::atomic<long> bad_index{-1};
    parallel_ranges(
        static_cast<int>(cloud.count()), config.workers, [&](int lo, int hi) {
            for (int i = lo; i < hi; ++i) {
                Eigen::Matrix3d cov3d =
                    covariance3d(cloud.log_scales[i], cloud.rotations[i]);
                auto sp = project_gaussian(camera, cloud.positions[i], cov3d,
                                           config);
                if (!sp) continue;
                sp->source_index = i;
                sp->alpha = sigmoid(cloud.opacity_logits[i]);

                double rho = 0;
                Eigen::Vector3d v =
                    view_direction(camera, cloud.positions[i], &rho);
                double Y[9];
                sh_basis(cloud.sh_degree, v, Y);
                for (int c = 0; c < 3; ++c) {
                    double val = 0.5;
                    for (int k = 0; k < basis; ++k)
                        val += cloud.sh(i, k, c) * Y[k];
                    sp->color_gate[c] = val > 0.0 && val < 1.0;
                    sp->color[c] = std::clamp(val, 0.0, 1.0);
                }
                if (!sp->mean2d.allFinite() || !sp->conic.allFinite() ||
                    !sp->color.allFinite() || !std::isfinite(sp->alpha)) {
                    bad_index.store(i);
                    continue;
                }
                projected[i] = *sp;
                valid[i] = 1;
            }
        });
    if (bad_index.load() >= 0)
        throw std::runtime_error("render: non-finite projection on gaussian " +
                                 std::to_string(bad_index.load()));

    for (size_t i = 0; i < cloud.count(); ++i)
        if (valid[i]) tape->splats.push_back(projected[i]);

    // Tile binning, then a per-tile depth sort with index tie-break.
    const int ts = config.tile_size;
    tape->tiles_x = (W + ts - 1) / ts;
    tape->tiles_y = (H + ts - 1) / ts;
    const int n_tiles = tape->tiles_x * tape->tiles_y;
    tape->tile_lists.assign(n_tiles, {});
    for (int s = 0; s < static_cast<int>(tape->splats.size()); ++s) {
        const Splat2D& sp = tape->splats[s];
        int tx0 = 0, tx1 = tape->tiles_x - 1, ty0 = 0, ty1 = tape->tiles_y - 1;
        if (std::isfinite(sp.radius)) {
            tx0 = std::clamp(static_cast<int>(std::floor(
                                 (sp.mean2d.x() - sp.radius) / ts)),
                             0, tape->tiles_x - 1);
            tx1 = std::clamp(static_cast<int>(std::floor(
                                 (sp.mean2d.x() + sp.radius) / ts)),
                             0, tape->tiles_x - 1);
            ty0 = std::clamp(static_cast<int>(std::floor(
                                 (sp.mean2d.y() - sp.radius) / ts)),
                             0, tape->tiles_y - 1);
            ty1 = std::clamp(static_cast<int>(std::floor(
                                 (sp.mean2d.y() + sp.radius) / ts)),
                             0, tape->tiles_y - 1);
            if (sp.mean2d.x() + sp.radius < 0 ||
                sp.mean2d.x() - sp.radius > W ||
                sp.mean2d.y() + sp.radius < 0 || sp.mean2d.y() - sp.radius > H)
                continue;
        }
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                tape->tile_lists[ty * tape->tiles_x + tx].push_back(s);
    }
    parallel_ranges(n_tiles, config.workers, [&](int lo, int hi) {
        for (int t = lo; t < hi; ++t) {
            auto& list = tape->tile_lists[t];
            std::sort(list.begin(), list.end(), [&](int a, int b) {
                const Splat2D& sa = tape->splats[a];
                const Splat2D& sb = tape->splats[b];
                if (sa.depth != sb.depth) return sa.depth < sb.depth;
                return sa.source_index < sb.source_index;
            });
        }
    });

    RenderOutput out;
    out.color = Image(H, W, 3);
    out.expected_inv_depth = Plane(H, W);
    out.accum_alpha = Plane(H, W);
    out.final_transmittance = Plane(H, W, 1.0);
    tape->frag_count.assign(static_cast<size_t>(H) * W, 0);

    parallel_ranges(n_tiles, config.workers, [&](int lo, int hi) {
        for (int t = lo; t < hi; ++t) {
            const auto& list = tape->tile_lists[t];
            int tx = t % tape->tiles_x, ty = t / tape->tiles_x;
            int x0 = tx * ts, x1 = std::min(W, x0 + ts);
            int y0 = ty * ts, y1 = std::min(H, y0 + ts);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    double px = x + 0.5, py = y + 0.5;
                    double T = 1.0, A = 0.0, S = 0.0;
                    Eigen::Vector3d C = Eigen::Vector3d::Zero();
                    int count = 0;
                    for (int idx : list) {
                        const Splat2D& sp = tape->splats[idx];
                        double dx = px - sp.mean2d.x();
                        double dy = py - sp.mean2d.y();
                        double power =
                            0.5 * (sp.conic(0, 0) * dx * dx +
                                   2.0 * sp.conic(0, 1) * dx * dy +
                                   sp.conic(1, 1) * dy * dy);
                        double g = std::exp(-power);
                        double a = sp.alpha * g;
                        double w = T * a;
                        C += w * sp.color;
                        A += w;
                        S += w * sp.inv_depth;
                        T *= 1.0 - a;
                        ++count;
                        if (T < config.transmittance_min) break;
                    }
                    for (int c = 0; c < 3; ++c)
                        out.color.at(y, x, c) = C[c] + T * background[c];
                    out.accum_alpha.at(y, x) = A;
                    out.final_transmittance.at(y, x) = T;
                    out.expected_inv_depth.at(y, x) =
                        S / std::max(A, config.accum_eps);
                    tape->frag_count[static_cast<size_t>(y) * W + x] = count;
                }
            }
        }
    });

    out.tape = tape;
    return out;
}

CloudGrads render_backward(const GaussianCloud& cloud, const RenderTape& tape,
                           const Image& dL_dcolor, const Plane& dL_dinv_depth) {
    if (tape.cloud_count != cloud.count() || tape.sh_degree != cloud.sh_degree)
        throw std::runtime_error("render_backward: tape/cloud mismatch");
    const Camera& camera = tape.camera;
    const RenderConfig& config = tape.config;
    const int H = camera.height, W = camera.width;
    if (dL_dcolor.height != H || dL_dcolor.width != W || dL_dcolor.channels != 3)
        throw std::runtime_error("render_backward: dL_dcolor shape mismatch");
    if (dL_dinv_depth.height != H || dL_dinv_depth.width != W)
        throw std::runtime_error("render_backward: dL_dinv_depth shape mismatch");
    for (const Splat2D& sp : tape.splats)
        if (sp.source_index < 0 ||
            sp.source_index >= static_cast<int>(cloud.count()))
            throw std::runtime_error("render_backward: tape/cloud mismatch");

    const int ts = config.tile_size;
    const int n_tiles = tape.tiles_x * tape.tiles_y;
    const int basis = cloud.sh_basis();

    // Phase 1: per-pixel blending gradients, accumulated per tile so the
    // reduction order (and thus the result) does not depend on worker count.
    std::vector<std::vector<FragGrad>> tile_accum(n_tiles);
    parallel_ranges(n_tiles, config.workers, [&](int lo, int hi) {
        std::vector<double> gs, alphas, Ts, ws;
        for (int t = lo; t < hi; ++t) {
            const auto& list = tape.tile_lists[t];
            tile_accum[t].assign(list.size(), FragGrad{});
            if (list.empty()) continue;
            int tx = t % tape.tiles_x, ty = t / tape.tiles_x;
            int x0 = tx * ts, x1 = std::min(W, x0 + ts);
            int y0 = ty * ts, y1 = std::min(H, y0 + ts);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    int count = tape.frag_count[static_cast<size_t>(y) * W + x];
                    if (count == 0) continue;
                    double px = x + 0.5, py = y + 0.5;

                    // Recompute the forward scan for this pixel.
                    gs.assign(count, 0.0);
                    alphas.assign(count, 0.0);
                    Ts.assign(count, 0.0);
                    ws.assign(count, 0.0);
                    double T = 1.0, A = 0.0, S = 0.0;
                    for (int i = 0; i < count; ++i) {
                        const Splat2D& sp = tape.splats[list[i]];
                        double dx = px - sp.mean2d.x();
                        double dy = py - sp.mean2d.y();
                        double power =
                            0.5 * (sp.conic(0, 0) * dx * dx +
                                   2.0 * sp.conic(0, 1) * dx * dy +
                                   sp.conic(1, 1) * dy * dy);
                        double g = std::exp(-power);
                        double a = sp.alpha * g;
                        gs[i] = g;
                        alphas[i] = a;
                        Ts[i] = T;
                        ws[i] = T * a;
                        A += ws[i];
                        S += ws[i] * sp.inv_depth;
                        T *= 1.0 - a;
                    }
                    double T_final = T;

                    Eigen::Vector3d lc(dL_dcolor.at(y, x, 0),
                                       dL_dcolor.at(y, x, 1),
                                       dL_dcolor.at(y, x, 2));
                    double le = dL_dinv_depth.at(y, x);
                    double Ac = std::max(A, config.accum_eps);
                    double lS = le / Ac;
                    double lA = A > config.accum_eps ? -le * S / (Ac * Ac) : 0.0;
                    if (lc.isZero(0.0) && lS == 0.0 && lA == 0.0) continue;

                    Eigen::Vector3d Rc = T_final * tape.background;
                    double RS = 0.0, RA = 0.0;
                    for (int i = count - 1; i >= 0; --i) {
                        const Splat2D& sp = tape.splats[list[i]];
                        FragGrad& fg = tile_accum[t][i];
                        double inv_one_minus = 1.0 / (1.0 - alphas[i]);

                        double d_aprime =
                            lc.dot(Ts[i] * sp.color - Rc * inv_one_minus) +
                            lS * (Ts[i] * sp.inv_depth - RS * inv_one_minus) +
                            lA * (Ts[i] - RA * inv_one_minus);

                        fg.color += ws[i] * lc;
                        fg.inv_depth += lS * ws[i];
                        fg.alpha += d_aprime * gs[i];

                        double d_power = -d_aprime * alphas[i];
                        double dx = px - sp.mean2d.x();
                        double dy = py - sp.mean2d.y();
                        double qdx = sp.conic(0, 0) * dx + sp.conic(0, 1) * dy;
                        double qdy = sp.conic(0, 1) * dx + sp.conic(1, 1) * dy;
                        fg.mean2d -= d_power * Eigen::Vector2d(qdx, qdy);
                        fg.conic_a += d_power * 0.5 * dx * dx;
                        fg.conic_b += d_power * 0.5 * dx * dy;
                        fg.conic_c += d_power * 0.5 * dy * dy;

                        Rc += ws[i] * sp.color;
                        RS += ws[i] * sp.inv_depth;
                        RA += ws[i];
                    }
                }
            }
        }
    });

    // Deterministic reduction in tile order.
    std::vector<FragGrad> splat_accum(tape.splats.size());
    for (int t = 0; t < n_tiles; ++t) {
        const auto& list = tape.tile_lists[t];
        for (size_t j = 0; j < list.size(); ++j) {
            FragGrad& dst = splat_accum[list[j]];
            const FragGrad& src = tile_accum[t][j];
            dst.mean2d += src.mean2d;
            dst.conic_a += src.conic_a;
            dst.conic_b += src.conic_b;
            dst.conic_c += src.conic_c;
            dst.color += src.color;
            dst.alpha += src.alpha;
            dst.inv_depth += src.inv_depth;
        }
    }

    // Phase 2: geometric chain per splat; disjoint writes.
    CloudGrads grads;
    grads.resize_like(cloud);
    const Eigen::Matrix3d Wrot = camera.rot_matrix();
    parallel_ranges(
        static_cast<int>(tape.splats.size()), config.workers,
        [&](int lo, int hi) {
            for (int s = lo; s < hi; ++s) {
                const Splat2D& sp = tape.splats[s];
                const FragGrad& fg = splat_accum[s];
                int i = sp.source_index;

                // Inverse: conic = cov2d^-1 -> G_cov = -Q G_Q Q.
                Eigen::Matrix2d GQ;
                GQ << fg.conic_a, fg.conic_b, fg.conic_b, fg.conic_c;
                Eigen::Matrix2d Gcov = -sp.conic * GQ * sp.conic;

                // cov2d = M Sigma3 M^T (+ lowpass), M = J W.
                Eigen::Vector3d scales = cloud.log_scales[i].array().exp();
                Quat qn = cloud.rotations[i].normalized();
                Eigen::Matrix3d R = qn.to_matrix();
                Eigen::Matrix3d M3 = R * scales.asDiagonal();
                Eigen::Matrix3d Sigma3 = M3 * M3.transpose();

                const Eigen::Vector3d& tcam = sp.cam_point;
                double iz = 1.0 / tcam.z();
                double iz2 = iz * iz;
                Eigen::Matrix<double, 2, 3> J;
                J << camera.fx * iz, 0, -camera.fx * tcam.x() * iz2, 0,
                    camera.fy * iz, -camera.fy * tcam.y() * iz2;
                Eigen::Matrix<double, 2, 3> M = J * Wrot;

                Eigen::Matrix3d GSigma3 = M.transpose() * Gcov * M;
                Eigen::Matrix<double, 2, 3> GM = 2.0 * Gcov * M * Sigma3;
                Eigen::Matrix<double, 2, 3> GJ = GM * Wrot.transpose();

                Eigen::Vector3d Gt = Eigen::Vector3d::Zero();
                double iz3 = iz2 * iz;
                Gt.x() += GJ(0, 2) * (-camera.fx * iz2);
                Gt.y() += GJ(1, 2) * (-camera.fy * iz2);
                Gt.z() += GJ(0, 0) * (-camera.fx * iz2) +
                          GJ(1, 1) * (-camera.fy * iz2) +
                          GJ(0, 2) * (2.0 * camera.fx * tcam.x() * iz3) +
                          GJ(1, 2) * (2.0 * camera.fy * tcam.y() * iz3);

                // mean2d and inverse depth.
                Gt.x() += fg.mean2d.x() * camera.fx * iz;
                Gt.y() += fg.mean2d.y() * camera.fy * iz;
                Gt.z() += -fg.mean2d.x() * camera.fx * tcam.x() * iz2 -
                          fg.mean2d.y() * camera.fy * tcam.y() * iz2;
                Gt.z() += -fg.inv_depth * iz2;

                Eigen::Vector3d Gmu = Wrot.transpose() * Gt;

                // Sigma3 = (R S)(R S)^T.
                Eigen::Matrix3d GM3 = 2.0 * GSigma3 * M3;
                Eigen::Vector3d Gls;
                for (int k = 0; k < 3; ++k) {
                    double gs_k = GM3.col(k).dot(R.col(k));
                    Gls[k] = gs_k * scales[k];
                }
                Eigen::Matrix3d GR = GM3 * scales.asDiagonal();

                Eigen::Matrix3d dR[4];
                rotation_grads(qn, dR);
                Eigen::Vector4d Gqn;
                for (int k = 0; k < 4; ++k)
                    Gqn[k] = (GR.array() * dR[k].array()).sum();
                // Through normalization q_hat = q / |q|.
                Eigen::Vector4d qv(cloud.rotations[i].w, cloud.rotations[i].x,
                                   cloud.rotations[i].y, cloud.rotations[i].z);
                double qnorm = qv.norm();
                Eigen::Vector4d nv = qv / qnorm;
                Eigen::Vector4d Gq = (Gqn - nv * nv.dot(Gqn)) / qnorm;

                // SH color chain, gated by the [0,1] clamp.
                double rho = 0;
                Eigen::Vector3d v =
                    view_direction(camera, cloud.positions[i], &rho);
                double Y[9];
                Eigen::Vector3d dY[9];
                sh_basis(cloud.sh_degree, v, Y);
                sh_basis_grad(cloud.sh_degree, v, dY);
                Eigen::Vector3d Gv = Eigen::Vector3d::Zero();
                for (int k = 0; k < basis; ++k) {
                    double dv_weight = 0;
                    for (int c = 0; c < 3; ++c) {
                        if (!sp.color_gate[c]) continue;
                        grads.sh_coeffs[(static_cast<size_t>(i) * basis + k) * 3 +
                                        c] += fg.color[c] * Y[k];
                        dv_weight += fg.color[c] * cloud.sh(i, k, c);
                    }
                    Gv += dv_weight * dY[k];
                }
                if (rho > 1e-12)
                    Gmu += (Gv - v * v.dot(Gv)) / rho;

                double a = sp.alpha;
                grads.positions[i] += Gmu;
                grads.log_scales[i] += Gls;
                grads.rotations[i] += Gq;
                grads.opacity_logits[i] += fg.alpha * a * (1.0 - a);
            }
        });

    return grads;
}

} // namespace ogs
