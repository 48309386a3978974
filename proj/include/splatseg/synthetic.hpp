// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"

#include <cstdint>

namespace splatseg {

/// Parameters of a synthetic ground-truth scene.
struct SceneSpec {
    int num_objects = 8;
    int gaussians_per_object = 100;
    int d_instance = 16;
    int d_language = 32;
    int num_views = 6;
    std::uint64_t seed = 0;
    int image_size = 128;
    /// Background clutter Gaussians (gt_object_id 0, never labeled).
    int background_gaussians = 0;
    /// Std of isotropic noise added to each view's segment embedding before
    /// re-normalization; 0 reproduces the vocabulary vector exactly.
    double language_noise = 0.0;
    double cluster_radius = 1.0;
};

/// Builds clustered blobs, a near-orthogonal vocabulary, fibonacci-sphere
/// cameras and per-view dominant-contributor masks. Pure function of spec.
GaussianScene generate_synthetic_scene(const SceneSpec& spec, const RasterConfig& raster = {});

/// Mask rule used for synthetic supervision (alpha threshold for "unlabeled").
inline constexpr double kMaskMinAlpha = 0.05;

} // namespace splatseg
