// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/inference.hpp"
#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splatseg {

using BinaryMask = std::vector<std::uint8_t>;

/// |pred & gt| / |pred | gt| over Gaussian index sets (duplicates ignored).
/// Empty pred gives 0; empty gt raises Error.
double iou_3d(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt);

/// Pixel-set IoU of two binary masks; both empty counts as a perfect match.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Renders only the selected Gaussians and binarizes accumulated alpha at
/// `threshold`.
BinaryMask render_selection_mask(const GaussianScene& scene, std::span<const std::uint32_t> selection,
                                 const Camera& camera, double threshold = 0.5, const RasterConfig& raster = {});

double iou_2d_rendered(const GaussianScene& scene, std::span<const std::uint32_t> pred, const Camera& camera,
                       const BinaryMask& gt_mask, const RasterConfig& raster = {});

struct QueryCase {
    std::string label;
    Query query;
    std::vector<std::uint32_t> gt_gaussians;
    std::vector<BinaryMask> gt_masks; // one per scene view, or empty
};

/// One case per vocabulary object: its embedding as the query, its Gaussians
/// as ground truth and (optionally) its rendered silhouette in every view.
std::vector<QueryCase> make_object_cases(const GaussianScene& scene, std::uint64_t seed, double tau = kDefaultTau,
                                         SimilarityThreshold threshold = {}, bool with_masks = false,
                                         const RasterConfig& raster = {});

enum class BenchmarkMode { instance_only, language_only, collaborative };

std::string_view to_string(BenchmarkMode mode);
/// Accepts "instance_only", "language_only", "collaborative".
BenchmarkMode parse_benchmark_mode(std::string_view name);

struct QueryScore {
    std::string label;
    double iou_3d = 0.0;
    std::optional<double> iou_2d;
    double runtime_s = 0.0;
    std::size_t predicted = 0;
};

struct EvalReport {
    BenchmarkMode mode = BenchmarkMode::collaborative;
    std::vector<QueryScore> per_query;
    double miou = 0.0;
    double macc = 0.0;
    double acc_threshold = 0.25;
    std::optional<double> miou_2d;
    double mean_runtime_s = 0.0;
    double setup_runtime_s = 0.0; // one-off cost (clustering for instance_only)

    /// Recomputes miou / macc / miou_2d / mean_runtime_s from per_query.
    void finalize();
};

struct BenchmarkConfig {
    double acc_threshold = 0.25;
    int kmeans_k = 0; // 0: number of vocabulary objects
    int kmeans_restarts = 10;
    int kmeans_max_iterations = 100;
    std::uint64_t seed = 0;
    bool eval_2d = false;
    RasterConfig raster;
};

struct KMeansResult {
    std::vector<std::uint32_t> labels;
    RowMatrix<double> centers;
    double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding; best inertia over `restarts`.
KMeansResult kmeans(const RowMatrix<double>& points, int k, int restarts, std::uint64_t seed,
                    int max_iterations = 100);

std::vector<EvalReport> run_benchmark(const GaussianScene& scene, const std::vector<QueryCase>& cases,
                                      std::span<const BenchmarkMode> modes, const BenchmarkConfig& cfg = {});

/// JSON report. With include_timing=false every timing field is null, which
/// makes reports byte-reproducible.
std::string report_json(const std::vector<EvalReport>& reports, bool include_timing = true);
/// Plain-text table: mode x mIoU / mAcc / query time.
std::string report_table(const std::vector<EvalReport>& reports, bool include_timing = true);

} // namespace splatseg
