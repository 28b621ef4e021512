#include "ogs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ogs {

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

void require_same_shape(const Image& a, const Image& b, const char* where) {
    if (!a.same_shape(b))
        throw std::runtime_error(std::string(where) + ": shape mismatch");
}

void require_same_shape(const Plane& a, const Plane& b, const char* where) {
    if (!a.same_shape(b))
        throw std::runtime_error(std::string(where) + ": shape mismatch");
}

const double* gaussian_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWindow);
        double sum = 0;
        for (int k = 0; k < kWindow; ++k) {
            double d = k - kHalf;
            v[k] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[k];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w.data();
}

// Per-axis in-bounds weight sums for border renormalization.
std::vector<double> axis_norms(int n, const double* w, int half) {
    std::vector<double> norms(n);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int k = -half; k <= half; ++k)
            if (i + k >= 0 && i + k < n) s += w[k + half];
        norms[i] = s;
    }
    return norms;
}

// Separable correlation of a single channel, optionally renormalized at
// borders. Channel extracted from an Image or given as a Plane.
Plane blur_channel(const Plane& src, const double* w, int half, bool renorm) {
    int h = src.height, wd = src.width;
    Plane tmp(h, wd), out(h, wd);
    auto nx = axis_norms(wd, w, half);
    auto ny = axis_norms(h, w, half);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
            double s = 0;
            for (int k = -half; k <= half; ++k) {
                int xx = x + k;
                if (xx >= 0 && xx < wd) s += w[k + half] * src.at(y, xx);
            }
            tmp.at(y, x) = renorm ? s / nx[x] : s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
            double s = 0;
            for (int k = -half; k <= half; ++k) {
                int yy = y + k;
                if (yy >= 0 && yy < h) s += w[k + half] * tmp.at(yy, x);
            }
            out.at(y, x) = renorm ? s / ny[y] : s;
        }
    return out;
}

// Adjoint of the renormalized blur: divide by the per-pixel norm, then run
// the unnormalized correlation (the window is symmetric).
Plane blur_adjoint(const Plane& g, const double* w, int half) {
    Plane scaled(g.height, g.width);
    auto nx = axis_norms(g.width, w, half);
    auto ny = axis_norms(g.height, w, half);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            scaled.at(y, x) = g.at(y, x) / (nx[x] * ny[y]);
    return blur_channel(scaled, w, half, false);
}

Plane extract_channel(const Image& img, int c) {
    Plane p(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p.at(y, x) = img.at(y, x, c);
    return p;
}

struct SsimChannelMaps {
    Plane mu_a, mu_b, p_aa, p_bb, p_ab;
};

SsimChannelMaps ssim_channel_maps(const Plane& a, const Plane& b) {
    const double* w = gaussian_window();
    Plane a2(a.height, a.width), b2(a.height, a.width), ab(a.height, a.width);
    for (size_t i = 0; i < a.data.size(); ++i) {
        a2.data[i] = a.data[i] * a.data[i];
        b2.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    return {blur_channel(a, w, kHalf, true), blur_channel(b, w, kHalf, true),
            blur_channel(a2, w, kHalf, true), blur_channel(b2, w, kHalf, true),
            blur_channel(ab, w, kHalf, true)};
}

// 2x2 average pooling with renormalized partial pools at odd borders.
Image downsample2(const Image& src) {
    int h = (src.height + 1) / 2, w = (src.width + 1) / 2;
    Image out(h, w, src.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double s = 0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int yy = 2 * y + dy, xx = 2 * x + dx;
                        if (yy < src.height && xx < src.width) {
                            s += src.at(yy, xx, c);
                            ++n;
                        }
                    }
                out.at(y, x, c) = s / n;
            }
    return out;
}

void downsample2_adjoint(const Image& grad_out, Image* grad_in) {
    for (int y = 0; y < grad_out.height; ++y)
        for (int x = 0; x < grad_out.width; ++x)
            for (int c = 0; c < grad_out.channels; ++c) {
                int n = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        if (2 * y + dy < grad_in->height &&
                            2 * x + dx < grad_in->width)
                            ++n;
                double g = grad_out.at(y, x, c) / n;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int yy = 2 * y + dy, xx = 2 * x + dx;
                        if (yy < grad_in->height && xx < grad_in->width)
                            grad_in->at(yy, xx, c) += g;
                    }
            }
}

const double kBox3[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};

Image box3(const Image& src) {
    Image out(src.height, src.width, src.channels);
    for (int c = 0; c < src.channels; ++c) {
        Plane p = blur_channel(extract_channel(src, c), kBox3, 1, true);
        for (int y = 0; y < src.height; ++y)
            for (int x = 0; x < src.width; ++x) out.at(y, x, c) = p.at(y, x);
    }
    return out;
}

void box3_adjoint(const Image& grad_out, Image* grad_in) {
    for (int c = 0; c < grad_out.channels; ++c) {
        Plane p = blur_adjoint(extract_channel(grad_out, c), kBox3, 1);
        for (int y = 0; y < grad_out.height; ++y)
            for (int x = 0; x < grad_out.width; ++x)
                grad_in->at(y, x, c) += p.at(y, x);
    }
}

constexpr double kGmagEps = 1e-12;

// Central-difference gradient magnitude with clamped borders.
Image grad_magnitude(const Image& src) {
    Image out(src.height, src.width, src.channels);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) {
                int xm = std::max(x - 1, 0), xp = std::min(x + 1, src.width - 1);
                int ym = std::max(y - 1, 0), yp = std::min(y + 1, src.height - 1);
                double gx = 0.5 * (src.at(y, xp, c) - src.at(y, xm, c));
                double gy = 0.5 * (src.at(yp, x, c) - src.at(ym, x, c));
                out.at(y, x, c) = std::sqrt(gx * gx + gy * gy + kGmagEps);
            }
    return out;
}

void grad_magnitude_adjoint(const Image& src, const Image& mag,
                            const Image& grad_out, Image* grad_in) {
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) {
                int xm = std::max(x - 1, 0), xp = std::min(x + 1, src.width - 1);
                int ym = std::max(y - 1, 0), yp = std::min(y + 1, src.height - 1);
                double gx = 0.5 * (src.at(y, xp, c) - src.at(y, xm, c));
                double gy = 0.5 * (src.at(yp, x, c) - src.at(ym, x, c));
                double m = mag.at(y, x, c);
                double u = grad_out.at(y, x, c) / m;
                grad_in->at(y, xp, c) += 0.5 * u * gx;
                grad_in->at(y, xm, c) -= 0.5 * u * gx;
                grad_in->at(yp, x, c) += 0.5 * u * gy;
                grad_in->at(ym, x, c) -= 0.5 * u * gy;
            }
}

} // namespace

void LossWeights::validate() const {
    const double vals[] = {lambda_ssim,   lambda_ssim_synth, lambda_lpips,
                           lambda_depth0, lambda_depth1,     lambda_opacity,
                           lambda_scale};
    for (double v : vals)
        if (!(v >= 0))
            throw std::runtime_error("loss weights must be non-negative");
    if (!(lambda_ssim_synth + lambda_lpips < 1.0))
        throw std::runtime_error(
            "loss weights require lambda_ssim_synth + lambda_lpips < 1");
}

double lambda_depth(const LossWeights& weights, double t) {
    if (weights.lambda_depth0 <= 0) return 0.0;
    return weights.lambda_depth0 *
           std::pow(weights.lambda_depth1 / weights.lambda_depth0, t);
}

Plane ssim_map(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim_map");
    Plane map(a.height, a.width, 0.0);
    for (int c = 0; c < a.channels; ++c) {
        Plane ac = extract_channel(a, c), bc = extract_channel(b, c);
        SsimChannelMaps m = ssim_channel_maps(ac, bc);
        for (size_t i = 0; i < map.data.size(); ++i) {
            double mu_a = m.mu_a.data[i], mu_b = m.mu_b.data[i];
            double s_aa = m.p_aa.data[i] - mu_a * mu_a;
            double s_bb = m.p_bb.data[i] - mu_b * mu_b;
            double s_ab = m.p_ab.data[i] - mu_a * mu_b;
            double n1 = 2 * mu_a * mu_b + kSsimC1;
            double d1 = mu_a * mu_a + mu_b * mu_b + kSsimC1;
            double n2 = 2 * s_ab + kSsimC2;
            double d2 = s_aa + s_bb + kSsimC2;
            map.data[i] += (n1 * n2) / (d1 * d2);
        }
    }
    for (double& v : map.data) v /= a.channels;
    return map;
}

Image ssim_map_backward(const Image& a, const Image& b, const Plane& dL_dmap) {
    require_same_shape(a, b, "ssim_map_backward");
    if (dL_dmap.height != a.height || dL_dmap.width != a.width)
        throw std::runtime_error("ssim_map_backward: map shape mismatch");
    const double* w = gaussian_window();
    Image grad(a.height, a.width, a.channels, 0.0);
    for (int c = 0; c < a.channels; ++c) {
        Plane ac = extract_channel(a, c), bc = extract_channel(b, c);
        SsimChannelMaps m = ssim_channel_maps(ac, bc);
        // Pointwise partials w.r.t. the blurred moments P=mu_a, Paa, Pab.
        Plane gP(a.height, a.width), gPaa(a.height, a.width),
            gPab(a.height, a.width);
        for (size_t i = 0; i < gP.data.size(); ++i) {
            double u = dL_dmap.data[i] / a.channels;
            double mu_a = m.mu_a.data[i], mu_b = m.mu_b.data[i];
            double s_aa = m.p_aa.data[i] - mu_a * mu_a;
            double s_bb = m.p_bb.data[i] - mu_b * mu_b;
            double s_ab = m.p_ab.data[i] - mu_a * mu_b;
            double n1 = 2 * mu_a * mu_b + kSsimC1;
            double d1 = mu_a * mu_a + mu_b * mu_b + kSsimC1;
            double n2 = 2 * s_ab + kSsimC2;
            double d2 = s_aa + s_bb + kSsimC2;

            double d_mu_a = 2 * n2 * (mu_b * d1 - mu_a * n1) / (d1 * d1 * d2);
            double d_s_aa = -n1 * n2 / (d1 * d2 * d2);
            double d_s_ab = 2 * n1 / (d1 * d2);

            gP.data[i] = u * (d_mu_a - 2 * mu_a * d_s_aa - mu_b * d_s_ab);
            gPaa.data[i] = u * d_s_aa;
            gPab.data[i] = u * d_s_ab;
        }
        Plane tP = blur_adjoint(gP, w, kHalf);
        Plane tPaa = blur_adjoint(gPaa, w, kHalf);
        Plane tPab = blur_adjoint(gPab, w, kHalf);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x)
                grad.at(y, x, c) += tP.at(y, x) +
                                    2.0 * ac.at(y, x) * tPaa.at(y, x) +
                                    bc.at(y, x) * tPab.at(y, x);
    }
    return grad;
}

double photometric_loss(const Image& pred, const Image& gt, double lambda_ssim,
                        Image* dL_dpred) {
    require_same_shape(pred, gt, "photometric_loss");
    size_t n = pred.data.size();
    double l1 = 0;
    for (size_t i = 0; i < n; ++i) l1 += std::abs(pred.data[i] - gt.data[i]);
    l1 /= n;

    Plane map = ssim_map(pred, gt);
    double ssim_term = 0;
    for (double v : map.data) ssim_term += 1.0 - std::clamp(v, -1.0, 1.0);
    ssim_term /= map.data.size();

    double value = (1.0 - lambda_ssim) * l1 + lambda_ssim * ssim_term;

    if (dL_dpred) {
        *dL_dpred = Image(pred.height, pred.width, pred.channels, 0.0);
        double wl1 = (1.0 - lambda_ssim) / n;
        for (size_t i = 0; i < n; ++i) {
            double d = pred.data[i] - gt.data[i];
            dL_dpred->data[i] = d > 0 ? wl1 : (d < 0 ? -wl1 : 0.0);
        }
        Plane dmap(pred.height, pred.width);
        for (size_t i = 0; i < map.data.size(); ++i) {
            bool gate = map.data[i] > -1.0 && map.data[i] < 1.0;
            dmap.data[i] = gate ? -lambda_ssim / map.data.size() : 0.0;
        }
        Image sgrad = ssim_map_backward(pred, gt, dmap);
        for (size_t i = 0; i < n; ++i) dL_dpred->data[i] += sgrad.data[i];
    }
    return value;
}

double depth_loss(const Plane& pred_inv_depth, const Plane& inv_depth,
                  const Plane& mask, Plane* dL_dpred) {
    require_same_shape(pred_inv_depth, inv_depth, "depth_loss");
    require_same_shape(pred_inv_depth, mask, "depth_loss");
    double msum = 0;
    for (double v : mask.data) msum += v;
    double denom = std::max(msum, 1.0);
    double value = 0;
    for (size_t i = 0; i < mask.data.size(); ++i)
        value += std::abs(pred_inv_depth.data[i] - inv_depth.data[i]) *
                 mask.data[i];
    value /= denom;
    if (dL_dpred) {
        *dL_dpred = Plane(pred_inv_depth.height, pred_inv_depth.width, 0.0);
        for (size_t i = 0; i < mask.data.size(); ++i) {
            double d = pred_inv_depth.data[i] - inv_depth.data[i];
            double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            dL_dpred->data[i] = s * mask.data[i] / denom;
        }
    }
    return value;
}

double perceptual(const Image& pred, const Image& gt, Image* dL_dpred) {
    require_same_shape(pred, gt, "perceptual");
    constexpr int kScales = 3;

    std::vector<Image> pa(kScales), pb(kScales);
    pa[0] = pred;
    pb[0] = gt;
    for (int s = 1; s < kScales; ++s) {
        pa[s] = downsample2(pa[s - 1]);
        pb[s] = downsample2(pb[s - 1]);
    }

    double value = 0;
    std::vector<Image> scale_grads(kScales);
    for (int s = 0; s < kScales; ++s) {
        const Image& a = pa[s];
        const Image& b = pb[s];
        double n = static_cast<double>(a.data.size());
        if (dL_dpred) scale_grads[s] = Image(a.height, a.width, a.channels, 0.0);

        double d_raw = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            double d = a.data[i] - b.data[i];
            d_raw += d * d;
            if (dL_dpred) scale_grads[s].data[i] += 2.0 * d / n / kScales;
        }
        value += d_raw / n;

        Image ma = box3(a), mb = box3(b);
        double d_mean = 0;
        Image mg(a.height, a.width, a.channels, 0.0);
        for (size_t i = 0; i < ma.data.size(); ++i) {
            double d = ma.data[i] - mb.data[i];
            d_mean += d * d;
            mg.data[i] = 2.0 * d / n / kScales;
        }
        value += d_mean / n;
        if (dL_dpred) box3_adjoint(mg, &scale_grads[s]);

        Image ga = grad_magnitude(a), gb = grad_magnitude(b);
        double d_grad = 0;
        Image gg(a.height, a.width, a.channels, 0.0);
        for (size_t i = 0; i < ga.data.size(); ++i) {
            double d = ga.data[i] - gb.data[i];
            d_grad += d * d;
            gg.data[i] = 2.0 * d / n / kScales;
        }
        value += d_grad / n;
        if (dL_dpred) grad_magnitude_adjoint(a, ga, gg, &scale_grads[s]);
    }
    value /= kScales;

    if (dL_dpred) {
        // Chain pooled-scale gradients back to full resolution.
        for (int s = kScales - 1; s > 0; --s)
            downsample2_adjoint(scale_grads[s], &scale_grads[s - 1]);
        *dL_dpred = std::move(scale_grads[0]);
    }
    return value;
}

double synthetic_loss(const Image& pred, const Image& synth,
                      const UncertaintyMap& u, const LossWeights& weights,
                      Image* dL_dpred) {
    require_same_shape(pred, synth, "synthetic_loss");
    if (u.values.height != pred.height || u.values.width != pred.width)
        throw std::runtime_error("synthetic_loss: uncertainty shape mismatch");
    u.validate();
    weights.validate();

    const double w_l1 = 1.0 - weights.lambda_ssim_synth - weights.lambda_lpips;
    const size_t n = pred.data.size();
    const size_t npix = u.values.data.size();

    double l1 = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            double uv = u.values.at(y, x);
            for (int c = 0; c < 3; ++c)
                l1 += std::abs(pred.at(y, x, c) - synth.at(y, x, c)) * uv;
        }
    l1 /= n;

    Plane map = ssim_map(pred, synth);
    double ssim_term = 0;
    for (size_t i = 0; i < npix; ++i)
        ssim_term +=
            (1.0 - std::clamp(map.data[i], -1.0, 1.0)) * u.values.data[i];
    ssim_term /= npix;

    double u_mean = u.mean();
    Image perc_grad;
    double perc = perceptual(pred, synth, dL_dpred ? &perc_grad : nullptr);

    double value = w_l1 * l1 + weights.lambda_ssim_synth * ssim_term +
                   weights.lambda_lpips * u_mean * perc;

    if (dL_dpred) {
        *dL_dpred = Image(pred.height, pred.width, 3, 0.0);
        for (int y = 0; y < pred.height; ++y)
            for (int x = 0; x < pred.width; ++x) {
                double uv = u.values.at(y, x);
                for (int c = 0; c < 3; ++c) {
                    double d = pred.at(y, x, c) - synth.at(y, x, c);
                    double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                    dL_dpred->at(y, x, c) = w_l1 * s * uv / n;
                }
            }
        Plane dmap(pred.height, pred.width);
        for (size_t i = 0; i < npix; ++i) {
            bool gate = map.data[i] > -1.0 && map.data[i] < 1.0;
            dmap.data[i] = gate ? -weights.lambda_ssim_synth *
                                      u.values.data[i] / npix
                                : 0.0;
        }
        Image sgrad = ssim_map_backward(pred, synth, dmap);
        double wp = weights.lambda_lpips * u_mean;
        for (size_t i = 0; i < n; ++i)
            dL_dpred->data[i] += sgrad.data[i] + wp * perc_grad.data[i];
    }
    return value;
}

double regularizer(const GaussianCloud& cloud, double lambda_opacity,
                   double lambda_scale) {
    size_t n = cloud.count();
    if (n == 0) return 0.0;
    double op = 0, sc = 0;
    for (size_t i = 0; i < n; ++i) {
        op += 1.0 / (1.0 + std::exp(-cloud.opacity_logits[i]));
        sc += cloud.log_scales[i].array().exp().sum();
    }
    return lambda_opacity * op / n + lambda_scale * sc / (3.0 * n);
}

void regularizer_backward(const GaussianCloud& cloud, double lambda_opacity,
                          double lambda_scale, CloudGrads* grads) {
    size_t n = cloud.count();
    if (n == 0) return;
    for (size_t i = 0; i < n; ++i) {
        double a = 1.0 / (1.0 + std::exp(-cloud.opacity_logits[i]));
        grads->opacity_logits[i] += lambda_opacity * a * (1.0 - a) / n;
        grads->log_scales[i] += (lambda_scale / (3.0 * n)) *
                                cloud.log_scales[i].array().exp().matrix();
    }
}

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= a.data.size();
    if (mse <= 0) return 99.0;
    return std::min(-10.0 * std::log10(mse), 99.0);
}

TotalLoss total_loss_gt(const RenderOutput& rendered, const ViewRecord& view,
                        const GaussianCloud& cloud, const LossWeights& weights,
                        double t) {
    TotalLoss out;
    out.lambda_depth_t = lambda_depth(weights, t);
    out.value = photometric_loss(rendered.color, view.image,
                                 weights.lambda_ssim, &out.dL_dcolor);
    out.dL_dinv_depth =
        Plane(rendered.color.height, rendered.color.width, 0.0);

    if (view.inv_depth) {
        // Supplied mask (or all ones) ANDed with render coverage.
        Plane mask(view.inv_depth->height, view.inv_depth->width, 1.0);
        if (view.depth_mask) mask = *view.depth_mask;
        for (size_t i = 0; i < mask.data.size(); ++i)
            if (rendered.accum_alpha.data[i] < 0.5) mask.data[i] = 0.0;
        Plane dgrad;
        double dvalue = depth_loss(rendered.expected_inv_depth, *view.inv_depth,
                                   mask, &dgrad);
        out.value += out.lambda_depth_t * dvalue;
        for (size_t i = 0; i < dgrad.data.size(); ++i)
            out.dL_dinv_depth.data[i] = out.lambda_depth_t * dgrad.data[i];
        out.depth_term_used = true;
    }

    out.value += regularizer(cloud, weights.lambda_opacity, weights.lambda_scale);
    return out;
}

TotalLoss total_loss_synthetic(const RenderOutput& rendered,
                               const ViewRecord& view, const UncertaintyMap& u,
                               const GaussianCloud& cloud,
                               const LossWeights& weights) {
    TotalLoss out;
    out.value = synthetic_loss(rendered.color, view.image, u, weights,
                               &out.dL_dcolor);
    out.dL_dinv_depth = Plane(rendered.color.height, rendered.color.width, 0.0);
    out.value += regularizer(cloud, weights.lambda_opacity, weights.lambda_scale);
    return out;
}

} // namespace ogs
