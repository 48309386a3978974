// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/inference.hpp"

#include "splatseg/error.hpp"
#include "splatseg/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace splatseg {
namespace {

constexpr double kUnitTolerance = 1e-4;

bool is_unit(const Eigen::VectorXf& v) { return std::abs(v.cast<double>().norm() - 1.0) <= kUnitTolerance; }

/// 1 / (1 + exp(a)) without overflow.
double logistic_complement(double a) {
    if (a > 0.0) {
        const double e = std::exp(-a);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(a));
}

} // namespace

void Query::validate(int d_language) const {
    auto check = [&](const Eigen::VectorXf& v, const char* what) {
        if (v.size() != d_language)
            throw Error(Errc::shape_mismatch, std::string("query: ") + what + " length != d_L");
        if (!v.allFinite()) throw Error(Errc::non_finite, std::string("query: non-finite ") + what);
        if (!is_unit(v)) throw Error(Errc::invalid_argument, std::string("query: ") + what + " is not unit-norm");
    };
    check(embedding, "embedding");
    if (canonical.empty()) throw Error(Errc::invalid_argument, "query: at least one canonical vector required");
    for (const auto& c : canonical) check(c, "canonical vector");
    if (!(tau > 0.0 && tau < 1.0)) throw Error(Errc::invalid_argument, "query: tau must lie in (0, 1)");
    if (!threshold.automatic && !(threshold.value > 0.0 && threshold.value < 1.0))
        throw Error(Errc::invalid_argument, "query: similarity threshold must lie in (0, 1)");
}

Query make_object_query(const GaussianScene& scene, ObjectId object, std::uint64_t seed, double tau,
                        SimilarityThreshold threshold) {
    const auto it = scene.vocabulary.find(object);
    if (it == scene.vocabulary.end())
        throw Error(Errc::invalid_argument, "query: object id " + std::to_string(object) + " not in vocabulary");
    auto to_vec = [](const std::vector<float>& v) {
        Eigen::VectorXf out = Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
        return Eigen::VectorXf(out / out.norm());
    };
    Query q;
    q.embedding = to_vec(it->second);
    for (const auto& [id, vec] : scene.vocabulary)
        if (id != object) q.canonical.push_back(to_vec(vec));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd random(scene.d_language);
    for (Eigen::Index k = 0; k < random.size(); ++k) random[k] = normal(rng);
    q.canonical.push_back(random.normalized().cast<float>());
    q.tau = tau;
    q.threshold = threshold;
    q.label = "object " + std::to_string(object);
    return q;
}

std::vector<double> compute_relevance(const GaussianScene& scene, const Query& query) {
    if (!scene.has_language()) throw Error(Errc::stage_order, "relevance: language field not materialized");
    query.validate(scene.d_language);
    const Eigen::VectorXd text = query.embedding.cast<double>();
    Eigen::MatrixXd canon(scene.d_language, static_cast<Eigen::Index>(query.canonical.size()));
    for (std::size_t k = 0; k < query.canonical.size(); ++k)
        canon.col(static_cast<Eigen::Index>(k)) = query.canonical[k].cast<double>();

    std::vector<double> relevance(scene.size());
    parallel_for(0, scene.size(), [&](std::size_t i) {
        const Eigen::VectorXd l = scene.language.row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
        const double s_text = l.dot(text);
        // The minimum over canons is attained at the largest L.c.
        double worst = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < canon.cols(); ++k) worst = std::max(worst, l.dot(canon.col(k)));
        relevance[i] = logistic_complement(worst - s_text);
    });
    return relevance;
}

InstanceIndex::InstanceIndex(const GaussianScene& scene) : unit_(scene.instance.cast<double>()) {
    for (Eigen::Index i = 0; i < unit_.rows(); ++i) {
        const double norm = unit_.row(i).norm();
        if (norm > 0.0) unit_.row(i) /= norm;
    }
}

std::vector<std::uint32_t> InstanceIndex::expand(std::uint32_t center, double threshold) const {
    if (center >= size()) throw Error(Errc::invalid_argument, "expand_region: center index out of range");
    const Eigen::VectorXd cos = unit_ * unit_.row(center).transpose();
    std::vector<std::uint32_t> members;
    for (Eigen::Index w = 0; w < cos.size(); ++w)
        if (cos[w] >= threshold || w == center) members.push_back(static_cast<std::uint32_t>(w));
    return members;
}

std::vector<std::uint32_t> expand_region(const GaussianScene& scene, std::uint32_t center, double threshold) {
    return InstanceIndex(scene).expand(center, threshold);
}

std::optional<double> region_score(const GaussianScene& scene, std::span<const std::uint32_t> members,
                                   std::span<const double> relevance) {
    double weighted = 0.0;
    double total = 0.0;
    for (std::uint32_t w : members) {
        const double o = scene.opacities[w];
        weighted += o * relevance[w];
        total += o;
    }
    if (!(total > 0.0)) return std::nullopt;
    return weighted / total;
}

double auto_similarity_threshold(const InstanceIndex& index, std::span<const std::uint32_t> seeds,
                                 const SimilarityThreshold& cfg) {
    constexpr int kBins = 256;
    if (seeds.empty() || index.size() == 0) return std::clamp(cfg.value, cfg.auto_min, cfg.auto_max);
    const std::size_t use = std::min<std::size_t>(seeds.size(), std::max<std::size_t>(1, cfg.auto_max_seeds));
    std::array<double, kBins> hist{};
    const auto& unit = index.unit_features();
    for (std::size_t k = 0; k < use; ++k) {
        const std::uint32_t s = seeds[k * seeds.size() / use];
        const Eigen::VectorXd cos = unit * unit.row(s).transpose();
        for (Eigen::Index w = 0; w < cos.size(); ++w) {
            const int bin = std::clamp(static_cast<int>((cos[w] + 1.0) * 0.5 * kBins), 0, kBins - 1);
            hist[static_cast<std::size_t>(bin)] += 1.0;
        }
    }
    double total = 0.0, total_moment = 0.0;
    for (int b = 0; b < kBins; ++b) {
        total += hist[static_cast<std::size_t>(b)];
        total_moment += b * hist[static_cast<std::size_t>(b)];
    }
    double weight_low = 0.0, moment_low = 0.0, best = -1.0;
    int split = kBins / 2;
    for (int b = 0; b < kBins - 1; ++b) {
        weight_low += hist[static_cast<std::size_t>(b)];
        moment_low += b * hist[static_cast<std::size_t>(b)];
        const double weight_high = total - weight_low;
        if (weight_low == 0.0 || weight_high == 0.0) continue;
        const double mean_low = moment_low / weight_low;
        const double mean_high = (total_moment - moment_low) / weight_high;
        const double between = weight_low * weight_high * (mean_low - mean_high) * (mean_low - mean_high);
        if (between > best) {
            best = between;
            split = b;
        }
    }
    const double threshold = -1.0 + 2.0 * (split + 1) / kBins;
    return std::clamp(threshold, cfg.auto_min, cfg.auto_max);
}

std::vector<RegionRecord> RefinementResult::accepted_regions() const {
    std::vector<RegionRecord> out;
    for (const auto& r : regions)
        if (r.accepted) out.push_back(r);
    return out;
}

RefinementResult refine(const GaussianScene& scene, const Query& query) {
    return refine(scene, query, InstanceIndex(scene));
}

RefinementResult refine(const GaussianScene& scene, const Query& query, const InstanceIndex& index) {
    if (index.size() != scene.size()) throw Error(Errc::shape_mismatch, "refine: instance index size != scene size");
    RefinementResult result;
    result.relevance = compute_relevance(scene, query);
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (result.relevance[i] > query.tau) result.seeds.push_back(static_cast<std::uint32_t>(i));
    result.empty_seeds = result.seeds.empty();

    result.seed_order = result.seeds;
    std::sort(result.seed_order.begin(), result.seed_order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (result.relevance[a] != result.relevance[b]) return result.relevance[a] > result.relevance[b];
        return a < b;
    });
    result.similarity_threshold = query.threshold.automatic
                                      ? auto_similarity_threshold(index, result.seed_order, query.threshold)
                                      : query.threshold.value;

    std::vector<std::uint8_t> covered(scene.size(), 0);
    for (std::uint32_t seed : result.seed_order) {
        if (covered[seed]) {
            result.skipped.push_back(seed);
            continue;
        }
        RegionRecord region;
        region.center = seed;
        region.center_relevance = result.relevance[seed];
        region.members = index.expand(seed, result.similarity_threshold);
        region.score = region_score(scene, region.members, result.relevance);
        region.accepted = region.score && *region.score > query.tau;
        if (region.accepted)
            for (std::uint32_t w : region.members) covered[w] = 1;
        result.regions.push_back(std::move(region));
    }
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (covered[i]) result.final.push_back(static_cast<std::uint32_t>(i));
    return result;
}

RefinementResult query_by_embedding(const GaussianScene& scene, Eigen::VectorXf embedding,
                                    const EmbeddingQueryOptions& options, bool* normalized) {
    if (normalized) *normalized = false;
    if (embedding.size() != scene.d_language)
        throw Error(Errc::shape_mismatch, "query: embedding length != d_L");
    if (!is_unit(embedding)) {
        const float norm = embedding.norm();
        if (!(norm > 0.f) || !std::isfinite(norm)) throw Error(Errc::invalid_argument, "query: zero embedding");
        embedding /= norm;
        if (normalized) *normalized = true;
    }
    Query q;
    q.embedding = std::move(embedding);
    q.canonical = options.canonical;
    q.tau = options.tau;
    q.threshold = options.threshold;
    q.label = options.label;
    return refine(scene, q);
}

} // namespace splatseg
