// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace splatseg {

struct PairSource {
    std::uint32_t view_index;
    SegmentId segment;
};

/// Segment-wise (instance feature, language feature) training pairs.
struct MappingPairSet {
    FeatureMatrix instance; // M x d_I
    FeatureMatrix language; // M x d_L, rows unit-norm
    std::vector<PairSource> source;

    std::size_t size() const { return static_cast<std::size_t>(instance.rows()); }
};

struct PairConfig {
    int min_pixels = 20;
    double min_alpha = 0.05;
    RasterConfig raster;
};

/// Groups each view's rendered instance features by mask segment and pairs
/// the segment mean with the segment's (re-normalized) language vector.
/// Throws Error(no_supervision) when no segment qualifies.
MappingPairSet build_training_pairs(const GaussianScene& scene, const PairConfig& cfg = {});

/// Nadaraya-Watson regression over retained pairs with a Gaussian kernel.
struct KernelMapping {
    double sigma = 0.1;
    MappingPairSet pairs;
};

inline constexpr std::size_t kMaxKernelPairs = 4096;

/// Retains the pairs (uniformly subsampled, seeded, when M > max_pairs).
KernelMapping make_kernel_mapping(const MappingPairSet& pairs, double sigma = 0.1,
                                  std::size_t max_pairs = kMaxKernelPairs, std::uint64_t seed = 0);

/// Kernel-weighted mean of the pair languages, re-normalized to unit length.
Eigen::VectorXf kernel_regress(const KernelMapping& phi, std::span<const float> instance);
/// The weighted mean before normalization (64-bit).
Eigen::VectorXd kernel_regress_raw(const KernelMapping& phi, std::span<const float> instance);

/// Two-hidden-layer perceptron d_I -> h -> h -> d_L with softplus activations.
struct MlpMapping {
    std::vector<int> widths;            // {d_I, h, h, d_L}
    std::vector<RowMatrix<float>> weights; // layer k: widths[k+1] x widths[k]
    std::vector<Eigen::VectorXf> biases;
    std::string activation = "softplus";
    double final_error = 0.0;

    /// Raw network output (no normalization).
    Eigen::VectorXf forward(std::span<const float> instance) const;
};

struct MlpConfig {
    int steps = 30000;
    double learning_rate = 1e-3;
    int hidden = 256;
    std::uint64_t seed = 0;
};

struct MlpFit {
    MlpMapping mapping;
    std::vector<double> loss_trace; // mean element-wise absolute error per step
};

/// Full-batch Adam on mean |L_m - net(I_m)| with hand-derived gradients.
MlpFit fit_mlp(const MappingPairSet& pairs, const MlpConfig& cfg = {},
               const std::function<void(int, double)>& progress = {});

using MappingFunction = std::variant<KernelMapping, MlpMapping>;

std::string mapping_kind(const MappingFunction& phi);

/// Unit-norm language feature for one instance feature.
Eigen::VectorXf map_feature(const MappingFunction& phi, std::span<const float> instance);

/// Materializes scene.language = normalize(phi(instance)) for every Gaussian.
void apply_mapping(GaussianScene& scene, const MappingFunction& phi);

/// mapping/ sub-container: mapping.json plus tensor files.
void save_mapping(const MappingFunction& phi, const std::filesystem::path& dir);
MappingFunction load_mapping(const std::filesystem::path& dir);

/// Baseline for the learning ablation: optimizes per-Gaussian language
/// features directly against rendered segment embeddings (no instance field
/// involvement). Returns the loss trace.
struct DirectLanguageConfig {
    int steps = 3000;
    int samples_per_segment = 64;
    double learning_rate = 2.5e-3;
    std::uint64_t seed = 0;
    RasterConfig raster;
};
std::vector<double> train_language_direct(GaussianScene& scene, const DirectLanguageConfig& cfg);

} // namespace splatseg
