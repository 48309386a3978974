// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/scene.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatseg {

/// Numerical conventions of the software rasterizer (3D-GS defaults).
struct RasterConfig {
    double near_plane = 0.01;
    double alpha_clamp = 0.99;
    double min_transmittance = 1e-4;
    double cov_regularizer = 0.3;
    double radius_sigmas = 3.0;
    int tile_size = 16;
};

/// A Gaussian projected onto the image plane.
struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    Eigen::Matrix2d conic; // cov2d inverse
    double depth = 0.0;
    std::uint32_t gaussian_index = 0;
    double radius = 0.0;
};

struct Projection {
    std::vector<Splat2D> splats; // sorted by (depth, gaussian_index)
    std::size_t culled_near = 0;
    std::size_t culled_outside = 0;
    std::size_t dropped_degenerate = 0;
};

/// Projects every Gaussian with EWA splatting; returns survivors in blending order.
/// `include`, when non-empty, restricts projection to Gaussians with include[i] != 0.
Projection project(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg = {},
                   std::span<const std::uint8_t> include = {});

/// World-space covariance R S S^T R^T of Gaussian i.
Eigen::Matrix3d covariance3d(const GaussianScene& scene, std::size_t i);

/// Per-pixel opacity of a splat at pixel coordinate (x, y), before clamping.
double splat_alpha(const Splat2D& splat, double opacity, double x, double y);

enum class ChannelSelector { color, instance, language, object_id_onehot };

/// The per-Gaussian channel vectors a selector names, as an N x C matrix.
FeatureMatrix channel_values(const GaussianScene& scene, ChannelSelector selector);

struct Contribution {
    std::uint32_t gaussian_index;
    double weight; // alpha_i * prod_{t<i} (1 - alpha_t)
};

/// The frozen-geometry linear map from per-Gaussian channel vectors to pixels.
///
/// Building the plan runs projection, the depth sort and tile binning once;
/// since geometry is never optimized, the resulting per-pixel blending weights
/// fully determine every later forward and backward pass for that view. The
/// forward pass is `pixels = W * values`, the backward pass `W^T * upstream`.
/// Both iterate fixed-order sparse rows so results do not depend on the
/// worker count.
class BlendPlan {
public:
    BlendPlan() = default;

    static BlendPlan build(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg = {},
                           std::span<const std::uint8_t> include = {});

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return alpha_.size(); }
    std::size_t gaussian_count() const { return num_gaussians_; }
    const Projection& projection() const { return projection_; }

    /// Accumulated opacity per pixel (row-major), equal to the sum of weights.
    const std::vector<double>& alpha() const { return alpha_; }
    /// Contributors of a pixel in blending order.
    std::span<const Contribution> contributors(std::size_t pixel) const;

    /// values: N x C. Returns (H*W) x C.
    template <class T>
    RowMatrix<T> forward(const RowMatrix<T>& values) const;
    /// Forward pass evaluated only at the listed pixels (rows follow `pixels`).
    template <class T>
    RowMatrix<T> forward_pixels(const RowMatrix<T>& values, std::span<const std::uint32_t> pixels) const;

    /// upstream: (H*W) x C. Returns N x C with grad_i = sum_u w_iu * upstream_u.
    template <class T>
    RowMatrix<T> backward(const RowMatrix<T>& upstream) const;
    /// Backward pass for an upstream that is nonzero only at `pixels`
    /// (row k of `upstream` belongs to pixels[k]).
    template <class T>
    RowMatrix<T> backward_pixels(const RowMatrix<T>& upstream, std::span<const std::uint32_t> pixels) const;

private:
    int width_ = 0;
    int height_ = 0;
    std::size_t num_gaussians_ = 0;
    Projection projection_;
    std::vector<double> alpha_;
    // Pixel-major sparse rows.
    std::vector<std::size_t> pixel_offsets_;
    std::vector<Contribution> entries_;
    // Gaussian-major transpose, pixels ascending within each row.
    std::vector<std::size_t> gaussian_offsets_;
    std::vector<std::uint32_t> transpose_pixels_;
    std::vector<double> transpose_weights_;
};

struct RenderOutput {
    int width = 0;
    int height = 0;
    FeatureMatrix channels; // (H*W) x C, row = y*width + x
    std::vector<float> alpha;
    std::optional<std::vector<std::vector<Contribution>>> contributors;
};

RenderOutput render(const GaussianScene& scene, const Camera& camera, ChannelSelector selector,
                    const RasterConfig& cfg = {}, bool keep_contributors = false);

/// Exact transpose of render's linear map in the channel values.
/// Throws Error(shape_mismatch) when upstream does not match the forward output.
FeatureMatrix render_backward(const GaussianScene& scene, const Camera& camera, ChannelSelector selector,
                              const FeatureMatrix& upstream, const RasterConfig& cfg = {});

/// Object id of the largest-weight contributor per pixel; 0 where accumulated
/// alpha < min_alpha or the dominant Gaussian is background.
std::vector<std::uint32_t> dominant_object_mask(const BlendPlan& plan, const std::vector<ObjectId>& object_ids,
                                                double min_alpha = 0.05);

} // namespace splatseg
