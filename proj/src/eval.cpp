// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/eval.hpp"

#include "splatseg/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace splatseg {

using nlohmann::json;

namespace {

std::vector<std::uint32_t> sorted_unique(std::span<const std::uint32_t> v) {
    std::vector<std::uint32_t> out(v.begin(), v.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

double iou_3d(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt) {
    if (gt.empty()) throw Error(Errc::invalid_argument, "iou_3d: empty ground-truth set");
    const auto p = sorted_unique(pred);
    const auto g = sorted_unique(gt);
    if (p.empty()) return 0.0;
    std::size_t inter = 0;
    for (std::size_t i = 0, j = 0; i < p.size() && j < g.size();) {
        if (p[i] == g[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (p[i] < g[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    const std::size_t uni = p.size() + g.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "mask_iou: mask sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask render_selection_mask(const GaussianScene& scene, std::span<const std::uint32_t> selection,
                                 const Camera& camera, double threshold, const RasterConfig& raster) {
    if (selection.empty()) return BinaryMask(camera.pixel_count(), 0);
    std::vector<std::uint8_t> include(scene.size(), 0);
    for (std::uint32_t i : selection) {
        if (i >= scene.size()) throw Error(Errc::invalid_argument, "render_selection_mask: index out of range");
        include[i] = 1;
    }
    const BlendPlan plan = BlendPlan::build(scene, camera, raster, include);
    BinaryMask mask(plan.pixel_count(), 0);
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = plan.alpha()[p] >= threshold ? 1 : 0;
    return mask;
}

double iou_2d_rendered(const GaussianScene& scene, std::span<const std::uint32_t> pred, const Camera& camera,
                       const BinaryMask& gt_mask, const RasterConfig& raster) {
    if (gt_mask.size() != camera.pixel_count())
        throw Error(Errc::shape_mismatch, "iou_2d_rendered: gt mask size != width*height");
    return mask_iou(render_selection_mask(scene, pred, camera, 0.5, raster), gt_mask);
}

std::vector<QueryCase> make_object_cases(const GaussianScene& scene, std::uint64_t seed, double tau,
                                         SimilarityThreshold threshold, bool with_masks, const RasterConfig& raster) {
    std::vector<QueryCase> cases;
    for (const auto& [id, vec] : scene.vocabulary) {
        QueryCase c;
        c.query = make_object_query(scene, id, seed + id, tau, threshold);
        c.label = c.query.label;
        c.gt_gaussians = scene.gaussians_of_object(id);
        if (c.gt_gaussians.empty()) continue;
        if (with_masks)
            for (const auto& view : scene.views)
                c.gt_masks.push_back(render_selection_mask(scene, c.gt_gaussians, view.camera, 0.5, raster));
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string_view to_string(BenchmarkMode mode) {
    switch (mode) {
    case BenchmarkMode::instance_only: return "instance_only";
    case BenchmarkMode::language_only: return "language_only";
    case BenchmarkMode::collaborative: return "collaborative";
    }
    return "unknown";
}

BenchmarkMode parse_benchmark_mode(std::string_view name) {
    for (auto mode : {BenchmarkMode::instance_only, BenchmarkMode::language_only, BenchmarkMode::collaborative})
        if (name == to_string(mode)) return mode;
    throw Error(Errc::invalid_argument, "unknown benchmark mode '" + std::string(name) + "'");
}

void EvalReport::finalize() {
    const double n = static_cast<double>(per_query.size());
    double iou = 0.0, acc = 0.0, time = 0.0, iou2 = 0.0;
    std::size_t with_2d = 0;
    for (const auto& q : per_query) {
        iou += q.iou_3d;
        acc += q.iou_3d >= acc_threshold ? 1.0 : 0.0;
        time += q.runtime_s;
        if (q.iou_2d) {
            iou2 += *q.iou_2d;
            ++with_2d;
        }
    }
    miou = n > 0 ? iou / n : 0.0;
    macc = n > 0 ? acc / n : 0.0;
    mean_runtime_s = n > 0 ? time / n : 0.0;
    miou_2d = with_2d > 0 ? std::optional<double>(iou2 / static_cast<double>(with_2d)) : std::nullopt;
}

KMeansResult kmeans(const RowMatrix<double>& points, int k, int restarts, std::uint64_t seed, int max_iterations) {
    const Eigen::Index n = points.rows();
    if (k < 1 || n < k) throw Error(Errc::invalid_argument, "kmeans: need 1 <= k <= number of points");
    std::mt19937_64 rng(seed);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();

    for (int attempt = 0; attempt < std::max(1, restarts); ++attempt) {
        RowMatrix<double> centers(k, points.cols());
        std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
        centers.row(0) = points.row(first(rng));
        Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
        for (int c = 1; c < k; ++c) {
            const double total = d2.sum();
            Eigen::Index pick = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double target = u(rng);
                for (pick = 0; pick < n - 1; ++pick) {
                    target -= d2[pick];
                    if (target <= 0.0) break;
                }
            } else {
                pick = first(rng);
            }
            centers.row(c) = points.row(pick);
            d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
        }

        std::vector<std::uint32_t> labels(static_cast<std::size_t>(n), 0);
        double inertia = 0.0;
        for (int iter = 0; iter < max_iterations; ++iter) {
            bool changed = false;
            inertia = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::Index arg = 0;
                const double dist = (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&arg);
                inertia += dist;
                auto& label = labels[static_cast<std::size_t>(i)];
                if (label != static_cast<std::uint32_t>(arg)) changed = true;
                label = static_cast<std::uint32_t>(arg);
            }
            if (iter > 0 && !changed) break;
            RowMatrix<double> sums = RowMatrix<double>::Zero(k, points.cols());
            Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
            for (Eigen::Index i = 0; i < n; ++i) {
                sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
                counts[labels[static_cast<std::size_t>(i)]] += 1.0;
            }
            for (int c = 0; c < k; ++c)
                if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.labels = labels;
            best.centers = centers;
        }
    }
    return best;
}

std::vector<EvalReport> run_benchmark(const GaussianScene& scene, const std::vector<QueryCase>& cases,
                                      std::span<const BenchmarkMode> modes, const BenchmarkConfig& cfg) {
    if (!scene.has_language()) throw Error(Errc::stage_order, "benchmark: language field not materialized");
    const InstanceIndex index(scene);
    std::vector<EvalReport> reports;

    for (BenchmarkMode mode : modes) {
        EvalReport report;
        report.mode = mode;
        report.acc_threshold = cfg.acc_threshold;

        KMeansResult clusters;
        if (mode == BenchmarkMode::instance_only) {
            const auto start = std::chrono::steady_clock::now();
            const int k = cfg.kmeans_k > 0 ? cfg.kmeans_k : static_cast<int>(scene.vocabulary.size());
            clusters = kmeans(index.unit_features(), std::max(1, k), cfg.kmeans_restarts, cfg.seed,
                              cfg.kmeans_max_iterations);
            report.setup_runtime_s = seconds_since(start);
        }

        for (const auto& c : cases) {
            const auto start = std::chrono::steady_clock::now();
            std::vector<std::uint32_t> pred;
            switch (mode) {
            case BenchmarkMode::collaborative:
                pred = refine(scene, c.query, index).final;
                break;
            case BenchmarkMode::language_only: {
                const auto rel = compute_relevance(scene, c.query);
                for (std::size_t i = 0; i < rel.size(); ++i)
                    if (rel[i] > c.query.tau) pred.push_back(static_cast<std::uint32_t>(i));
                break;
            }
            case BenchmarkMode::instance_only: {
                const auto rel = compute_relevance(scene, c.query);
                const auto k = static_cast<std::size_t>(clusters.centers.rows());
                std::vector<double> sum(k, 0.0), count(k, 0.0);
                for (std::size_t i = 0; i < rel.size(); ++i) {
                    sum[clusters.labels[i]] += rel[i];
                    count[clusters.labels[i]] += 1.0;
                }
                std::size_t best = 0;
                double best_mean = -1.0;
                for (std::size_t j = 0; j < k; ++j)
                    if (count[j] > 0 && sum[j] / count[j] > best_mean) {
                        best_mean = sum[j] / count[j];
                        best = j;
                    }
                for (std::size_t i = 0; i < rel.size(); ++i)
                    if (clusters.labels[i] == best) pred.push_back(static_cast<std::uint32_t>(i));
                break;
            }
            }
            QueryScore score;
            score.runtime_s = seconds_since(start);
            score.label = c.label;
            score.predicted = pred.size();
            score.iou_3d = iou_3d(pred, c.gt_gaussians);
            if (cfg.eval_2d && !c.gt_masks.empty()) {
                double sum = 0.0;
                for (std::size_t v = 0; v < scene.views.size() && v < c.gt_masks.size(); ++v)
                    sum += iou_2d_rendered(scene, pred, scene.views[v].camera, c.gt_masks[v], cfg.raster);
                score.iou_2d = sum / static_cast<double>(std::min(scene.views.size(), c.gt_masks.size()));
            }
            report.per_query.push_back(std::move(score));
        }
        report.finalize();
        reports.push_back(std::move(report));
    }
    return reports;
}

std::string report_json(const std::vector<EvalReport>& reports, bool include_timing) {
    auto timing = [&](double v) { return include_timing ? json(v) : json(nullptr); };
    json out = json::array();
    for (const auto& r : reports) {
        json queries = json::array();
        for (const auto& q : r.per_query) {
            json item = {{"label", q.label}, {"iou_3d", q.iou_3d}, {"predicted", q.predicted},
                         {"runtime_s", timing(q.runtime_s)}};
            item["iou_2d"] = q.iou_2d ? json(*q.iou_2d) : json(nullptr);
            queries.push_back(item);
        }
        out.push_back({{"mode", std::string(to_string(r.mode))},
                       {"mIoU", r.miou},
                       {"mAcc", r.macc},
                       {"acc_threshold", r.acc_threshold},
                       {"mIoU_2d", r.miou_2d ? json(*r.miou_2d) : json(nullptr)},
                       {"mean_query_time_s", timing(r.mean_runtime_s)},
                       {"setup_time_s", timing(r.setup_runtime_s)},
                       {"per_query", queries}});
    }
    return json{{"reports", out}}.dump(1) + "\n";
}

std::string report_table(const std::vector<EvalReport>& reports, bool include_timing) {
    std::ostringstream ss;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s | %8s | %8s | %8s | %12s\n", "Inference", "mIoU", "mAcc", "mIoU-2D",
                  "Query time");
    ss << line << std::string(64, '-') << "\n";
    for (const auto& r : reports) {
        char iou2[16] = "-";
        if (r.miou_2d) std::snprintf(iou2, sizeof iou2, "%.2f", 100.0 * *r.miou_2d);
        char time[24] = "-";
        if (include_timing) std::snprintf(time, sizeof time, "%.4f s", r.mean_runtime_s);
        std::snprintf(line, sizeof line, "%-16s | %8.2f | %8.2f | %8s | %12s\n", std::string(to_string(r.mode)).c_str(),
                      100.0 * r.miou, 100.0 * r.macc, iou2, time);
        ss << line;
    }
    return ss.str();
}

} // namespace splatseg
