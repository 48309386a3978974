// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatseg {

inline constexpr double kDefaultTau = 0.5;
inline constexpr double kDefaultSimilarity = 0.8;

/// Cosine threshold for region expansion: a fixed value, or derived per query
/// from the seed-to-scene similarity histogram (Otsu split).
struct SimilarityThreshold {
    bool automatic = false;
    double value = kDefaultSimilarity;
    double auto_min = 0.6;
    double auto_max = 0.95;
    std::size_t auto_max_seeds = 256;
};

struct Query {
    Eigen::VectorXf embedding;
    std::vector<Eigen::VectorXf> canonical;
    double tau = kDefaultTau;
    SimilarityThreshold threshold;
    std::string label;

    /// Throws Error unless vectors have length d_language and unit norm, and
    /// thresholds lie in (0, 1).
    void validate(int d_language) const;
};

/// Query for a synthetic vocabulary object: its embedding against every other
/// vocabulary vector plus one seeded random unit vector.
Query make_object_query(const GaussianScene& scene, ObjectId object, std::uint64_t seed,
                        double tau = kDefaultTau, SimilarityThreshold threshold = {});

/// Per-Gaussian relevance: min over canonical c of
/// exp(L.q) / (exp(L.q) + exp(L.c)), evaluated as a stable logistic.
std::vector<double> compute_relevance(const GaussianScene& scene, const Query& query);

/// L2-normalized instance features in 64-bit, shared by expansion queries.
class InstanceIndex {
public:
    explicit InstanceIndex(const GaussianScene& scene);

    std::size_t size() const { return static_cast<std::size_t>(unit_.rows()); }
    double cosine(std::size_t a, std::size_t b) const { return unit_.row(static_cast<Eigen::Index>(a)).dot(unit_.row(static_cast<Eigen::Index>(b))); }
    /// {w : cos(I_w, I_center) >= threshold} united with {center}, ascending.
    std::vector<std::uint32_t> expand(std::uint32_t center, double threshold) const;
    const RowMatrix<double>& unit_features() const { return unit_; }

private:
    RowMatrix<double> unit_;
};

std::vector<std::uint32_t> expand_region(const GaussianScene& scene, std::uint32_t center, double threshold);

/// Opacity-weighted mean relevance of a region; nullopt when the opacities sum to 0.
std::optional<double> region_score(const GaussianScene& scene, std::span<const std::uint32_t> members,
                                   std::span<const double> relevance);

/// Otsu split of the cosine similarities between (up to max_seeds evenly
/// spaced) seeds and every Gaussian, clamped to [min, max].
double auto_similarity_threshold(const InstanceIndex& index, std::span<const std::uint32_t> seeds,
                                 const SimilarityThreshold& cfg);

struct RegionRecord {
    std::uint32_t center = 0;
    double center_relevance = 0.0;
    std::vector<std::uint32_t> members;
    std::optional<double> score; // nullopt: zero total opacity
    bool accepted = false;
};

struct RefinementResult {
    std::vector<double> relevance;
    std::vector<std::uint32_t> seeds;       // ascending index
    std::vector<std::uint32_t> seed_order;  // descending relevance, ties by index
    std::vector<RegionRecord> regions;      // every expanded seed, in processing order
    std::vector<std::uint32_t> skipped;     // seeds already covered when reached
    std::vector<std::uint32_t> final;       // ascending index
    double similarity_threshold = kDefaultSimilarity;
    bool empty_seeds = false;

    std::vector<RegionRecord> accepted_regions() const;
};

/// Language-to-instance refinement: seeds above tau are expanded in the
/// instance field in descending relevance order and a region joins the
/// result only if its opacity-weighted relevance exceeds tau.
RefinementResult refine(const GaussianScene& scene, const Query& query);
RefinementResult refine(const GaussianScene& scene, const Query& query, const InstanceIndex& index);

struct EmbeddingQueryOptions {
    std::vector<Eigen::VectorXf> canonical;
    double tau = kDefaultTau;
    SimilarityThreshold threshold;
    std::string label;
};

/// Any unit embedding (text or image encoder) as a query. Non-unit embeddings
/// are normalized and `normalized` (if given) is set.
RefinementResult query_by_embedding(const GaussianScene& scene, Eigen::VectorXf embedding,
                                    const EmbeddingQueryOptions& options, bool* normalized = nullptr);

} // namespace splatseg
