#pragma once

#include "ogs/rasterizer.hpp"
#include "ogs/scene.hpp"
#include "ogs/tensor.hpp"

namespace ogs {

struct LossWeights {
    double lambda_ssim = 0.2;       // ground-truth photometric branch
    double lambda_ssim_synth = 0.3; // synthetic branch SSIM weight
    double lambda_lpips = 0.3;      // synthetic branch perceptual weight
    double lambda_depth0 = 1.0;     // depth anneal endpoints
    double lambda_depth1 = 0.01;
    double lambda_opacity = 0.01;
    double lambda_scale = 0.01;

    void validate() const;
};

// Exponential anneal between the endpoints: lambda_depth0 * (l1/l0)^t.
double lambda_depth(const LossWeights& weights, double t);

// Per-pixel SSIM, 11x11 Gaussian window sigma=1.5, C1=0.01^2, C2=0.03^2,
// channel-averaged. Window weights are renormalized at image borders so
// constant images produce exactly constant maps.
Plane ssim_map(const Image& a, const Image& b);

// dL/da for an upstream per-pixel map gradient.
Image ssim_map_backward(const Image& a, const Image& b, const Plane& dL_dmap);

// (1 - lambda) * mean|pred - gt| + lambda * mean(1 - ssim_map).
double photometric_loss(const Image& pred, const Image& gt, double lambda_ssim,
                        Image* dL_dpred = nullptr);

// sum(|pred - d| .* mask) / max(sum(mask), 1).
double depth_loss(const Plane& pred_inv_depth, const Plane& inv_depth,
                  const Plane& mask, Plane* dL_dpred = nullptr);

// Fixed-filter perceptual proxy: at scales {1, 1/2, 1/4}, mean squared
// difference of raw, local-mean (3x3 box) and gradient-magnitude feature
// maps, averaged over scales. Zero iff the images are identical. Not
// comparable to learned-LPIPS values; reported as "perceptual_proxy".
double perceptual(const Image& pred, const Image& gt, Image* dL_dpred = nullptr);

// Eq-style uncertainty-weighted synthetic loss; the SSIM map is weighted
// per pixel before averaging and the perceptual term is scaled by mean(U).
double synthetic_loss(const Image& pred, const Image& synth,
                      const UncertaintyMap& u, const LossWeights& weights,
                      Image* dL_dpred = nullptr);

// lambda_opacity * mean(sigmoid(opacity)) + lambda_scale * mean(exp(log_scales)).
double regularizer(const GaussianCloud& cloud, double lambda_opacity,
                   double lambda_scale);
void regularizer_backward(const GaussianCloud& cloud, double lambda_opacity,
                          double lambda_scale, CloudGrads* grads);

// -10 log10(MSE), capped at 99 dB (the zero-MSE guard).
double psnr(const Image& a, const Image& b);

struct TotalLoss {
    double value = 0;
    Image dL_dcolor;
    Plane dL_dinv_depth;
    bool depth_term_used = false;
    double lambda_depth_t = 0;
};

// Ground-truth branch: photometric + annealed depth term (skipped when the
// view has no inverse depth) + regularizer. The depth mask is the supplied
// mask ANDed with render coverage (accum_alpha >= 0.5).
TotalLoss total_loss_gt(const RenderOutput& rendered, const ViewRecord& view,
                        const GaussianCloud& cloud, const LossWeights& weights,
                        double t);

// Synthetic branch: uncertainty-weighted loss + regularizer.
TotalLoss total_loss_synthetic(const RenderOutput& rendered,
                               const ViewRecord& view, const UncertaintyMap& u,
                               const GaussianCloud& cloud,
                               const LossWeights& weights);

} // namespace ogs
