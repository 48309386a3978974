// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace splatseg {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    int steps = 30000;
    int samples_per_segment = 64;
    double learning_rate = 2.5e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
    std::uint64_t seed = 0;
    RasterConfig raster;

    void validate() const;
};

/// Preset step counts.
inline constexpr int kDefaultSteps = 30000;
inline constexpr int kFastSteps = 3000;
inline constexpr int kMediumSteps = 6000;

struct PixelSample {
    std::uint32_t pixel; // y * width + x
    SegmentId segment;
};

/// Pixel samples of one view grouped by segment.
struct PixelSampleBatch {
    std::size_t view_index = 0;
    std::vector<PixelSample> samples;
    std::map<SegmentId, std::vector<std::size_t>> by_segment; // indices into samples

    bool empty() const { return samples.empty(); }
    std::vector<std::uint32_t> pixels() const;
};

/// Pixel lists of every nonzero segment of a mask, in ascending pixel order.
std::map<SegmentId, std::vector<std::uint32_t>> segment_pixels(const ViewSupervision& view);

/// Draws up to samples_per_segment pixels per segment uniformly without
/// replacement. Segments with fewer than 2 pixels and ID-0 pixels are skipped.
PixelSampleBatch sample_pixels(const std::map<SegmentId, std::vector<std::uint32_t>>& segments,
                               std::size_t view_index, int samples_per_segment, std::mt19937_64& rng);
PixelSampleBatch sample_pixels(const ViewSupervision& view, std::size_t view_index, int samples_per_segment,
                               std::uint64_t seed);

struct InfoNceResult {
    double loss = 0.0;
    RowMatrix<double> grad; // one row per sample, d loss / d feature
};

/// Contrastive loss over segment centroids with dot-product similarity:
/// -(1/|samples|) sum_u log softmax_l(I_u . mean_l)[segment(u)].
/// features: one row per sample. Gradients flow through the centroids too.
InfoNceResult infonce_loss(const RowMatrix<double>& features, std::span<const SegmentId> segments);

/// Same loss reading features from a rendered (H*W) x d grid at the batch's pixels.
InfoNceResult infonce_loss(const FeatureMatrix& rendered, const PixelSampleBatch& batch);

/// I.i.d. normal instance features (std 0.01), a pure function of seed.
void init_instance_features(GaussianScene& scene, std::uint64_t seed, double stddev = 0.01);

/// Per-step callback: (step, loss).
using TrainProgress = std::function<void(int, double)>;

/// Optimizes scene.instance in place; geometry, opacity and color are untouched.
/// Returns the per-step loss trace.
std::vector<double> train_instance_field(GaussianScene& scene, const TrainConfig& cfg,
                                         const TrainProgress& progress = {});

/// Mean pairwise cosine of normalized instance features within and across
/// ground-truth objects (background excluded).
struct FeatureSeparation {
    double intra_cosine = 0.0;
    double inter_cosine = 0.0;
};
FeatureSeparation feature_separation(const GaussianScene& scene);

/// Trailing moving average of a trace (window w, shorter at the start).
std::vector<double> moving_average(std::span<const double> trace, std::size_t window);

} // namespace splatseg
