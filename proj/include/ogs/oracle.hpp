#pragma once

#include <map>
#include <vector>

#include "ogs/scene.hpp"
#include "ogs/tensor.hpp"

namespace ogs {

// Min-max normalization to [0, 1]; a constant plane maps to 0.5 everywhere
// (an uninformative plane contributes neutral confidence).
Plane normalize_plane(const Plane& plane);

Plane resample_bilinear(const Plane& src, int target_h, int target_w);

// Weighted average of layer-normalized attention planes, bilinearly
// resampled to target_h x target_w. Weights must cover exactly the stack's
// layer ids and sum to 1 (tolerance 1e-6).
UncertaintyMap fuse_uncertainty(const AttentionStack& stack,
                                const std::map<int, double>& layer_weights,
                                int target_h, int target_w);

// Contiguous chunks covering all ids exactly once; a trailing chunk of
// size 1 is merged into its predecessor. chunk_size must be >= 2.
std::vector<std::vector<int>> partition_chunks(const std::vector<int>& view_ids,
                                               int chunk_size);

// Multi-view photometric fallback: unproject each pixel of the synthetic
// view through its inverse depth, reproject into every neighbor, and score
// the mean color error e as U = exp(-e^2 / sigma_photo^2). Pixels visible
// in no neighbor (or lacking depth) get U = 0.
UncertaintyMap reprojection_oracle(const ViewRecord& synthetic_view,
                                   const std::vector<const ViewRecord*>& neighbors,
                                   double sigma_photo = 0.15);

// AUROC of the score (1 - U) against a binary corruption mask.
double oracle_auroc(const UncertaintyMap& u, const Plane& corruption_mask);

} // namespace ogs
