// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/instance_field.hpp"

#include "splatseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splatseg {

void TrainConfig::validate() const {
    if (steps < 0) throw Error(Errc::invalid_argument, "train: steps must be >= 0");
    if (samples_per_segment < 2) throw Error(Errc::invalid_argument, "train: samples_per_segment must be >= 2");
    if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "train: learning_rate must be positive");
}

std::vector<std::uint32_t> PixelSampleBatch::pixels() const {
    std::vector<std::uint32_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.pixel);
    return out;
}

std::map<SegmentId, std::vector<std::uint32_t>> segment_pixels(const ViewSupervision& view) {
    std::map<SegmentId, std::vector<std::uint32_t>> out;
    for (std::size_t p = 0; p < view.instance_mask.size(); ++p)
        if (const SegmentId id = view.instance_mask[p]; id != 0) out[id].push_back(static_cast<std::uint32_t>(p));
    return out;
}

PixelSampleBatch sample_pixels(const std::map<SegmentId, std::vector<std::uint32_t>>& segments,
                               std::size_t view_index, int samples_per_segment, std::mt19937_64& rng) {
    PixelSampleBatch batch;
    batch.view_index = view_index;
    std::vector<std::uint32_t> pool;
    for (const auto& [id, pixels] : segments) {
        if (id == 0 || pixels.size() < 2) continue;
        pool.assign(pixels.begin(), pixels.end());
        const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(samples_per_segment));
        auto& members = batch.by_segment[id];
        for (std::size_t k = 0; k < take; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
            members.push_back(batch.samples.size());
            batch.samples.push_back({pool[k], id});
        }
    }
    return batch;
}

PixelSampleBatch sample_pixels(const ViewSupervision& view, std::size_t view_index, int samples_per_segment,
                               std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_pixels(segment_pixels(view), view_index, samples_per_segment, rng);
}

InfoNceResult infonce_loss(const RowMatrix<double>& features, std::span<const SegmentId> segments) {
    const Eigen::Index n = features.rows();
    if (static_cast<std::size_t>(n) != segments.size())
        throw Error(Errc::shape_mismatch, "infonce: feature rows != segment labels");
    if (n < 2) throw Error(Errc::degenerate, "infonce: need at least two pixel samples");

    std::map<SegmentId, Eigen::Index> group_of;
    for (SegmentId id : segments) group_of.emplace(id, 0);
    Eigen::Index groups = 0;
    for (auto& [id, g] : group_of) g = groups++;

    std::vector<Eigen::Index> label(static_cast<std::size_t>(n));
    Eigen::VectorXd count = Eigen::VectorXd::Zero(groups);
    RowMatrix<double> centroids = RowMatrix<double>::Zero(groups, features.cols());
    for (Eigen::Index u = 0; u < n; ++u) {
        const Eigen::Index g = group_of.at(segments[static_cast<std::size_t>(u)]);
        label[static_cast<std::size_t>(u)] = g;
        centroids.row(g) += features.row(u);
        count[g] += 1.0;
    }
    for (Eigen::Index g = 0; g < groups; ++g) centroids.row(g) /= count[g];

    const RowMatrix<double> sim = features * centroids.transpose();
    RowMatrix<double> dsim(n, groups);
    double loss = 0.0;
    for (Eigen::Index u = 0; u < n; ++u) {
        const double peak = sim.row(u).maxCoeff();
        const Eigen::RowVectorXd e = (sim.row(u).array() - peak).exp().matrix();
        const double total = e.sum();
        const double lse = peak + std::log(total);
        const Eigen::Index own = label[static_cast<std::size_t>(u)];
        loss += lse - sim(u, own);
        dsim.row(u) = e / total;
        dsim(u, own) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    loss *= inv_n;
    dsim *= inv_n;

    InfoNceResult out;
    out.loss = loss;
    out.grad = dsim * centroids;
    const RowMatrix<double> dcentroid = dsim.transpose() * features;
    for (Eigen::Index u = 0; u < n; ++u) {
        const Eigen::Index g = label[static_cast<std::size_t>(u)];
        out.grad.row(u) += dcentroid.row(g) / count[g];
    }
    return out;
}

InfoNceResult infonce_loss(const FeatureMatrix& rendered, const PixelSampleBatch& batch) {
    if (batch.empty()) throw Error(Errc::invalid_argument, "infonce: empty batch");
    RowMatrix<double> features(static_cast<Eigen::Index>(batch.samples.size()), rendered.cols());
    std::vector<SegmentId> segments;
    segments.reserve(batch.samples.size());
    for (std::size_t k = 0; k < batch.samples.size(); ++k) {
        const auto& s = batch.samples[k];
        if (s.pixel >= rendered.rows()) throw Error(Errc::shape_mismatch, "infonce: sample outside rendered grid");
        features.row(static_cast<Eigen::Index>(k)) = rendered.row(s.pixel).cast<double>();
        segments.push_back(s.segment);
    }
    return infonce_loss(features, segments);
}

void init_instance_features(GaussianScene& scene, std::uint64_t seed, double stddev) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    scene.instance.resize(static_cast<Eigen::Index>(scene.size()), scene.d_instance);
    for (Eigen::Index i = 0; i < scene.instance.rows(); ++i)
        for (Eigen::Index k = 0; k < scene.instance.cols(); ++k) scene.instance(i, k) = static_cast<float>(normal(rng));
}

std::vector<double> train_instance_field(GaussianScene& scene, const TrainConfig& cfg, const TrainProgress& progress) {
    cfg.validate();
    std::vector<double> trace;
    if (cfg.steps == 0) return trace;

    struct ViewData {
        std::size_t index;
        BlendPlan plan;
        std::map<SegmentId, std::vector<std::uint32_t>> segments;
    };
    std::vector<ViewData> views;
    for (std::size_t k = 0; k < scene.views.size(); ++k) {
        auto segments = segment_pixels(scene.views[k]);
        std::erase_if(segments, [](const auto& kv) { return kv.second.size() < 2; });
        if (segments.empty()) continue;
        views.push_back({k, BlendPlan::build(scene, scene.views[k].camera, cfg.raster), std::move(segments)});
    }
    if (views.empty()) throw Error(Errc::no_supervision, "train: no view has a nonzero segment");

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(views.size());
    std::size_t cursor = order.size();

    RowMatrix<double> params = scene.instance.cast<double>();
    RowMatrix<double> m1 = RowMatrix<double>::Zero(params.rows(), params.cols());
    RowMatrix<double> m2 = m1;
    trace.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const ViewData& view = views[order[cursor++]];
        const PixelSampleBatch batch = sample_pixels(view.segments, view.index, cfg.samples_per_segment, rng);
        const std::vector<std::uint32_t> pixels = batch.pixels();
        std::vector<SegmentId> labels;
        labels.reserve(batch.samples.size());
        for (const auto& s : batch.samples) labels.push_back(s.segment);

        const RowMatrix<double> rendered = view.plan.forward_pixels(params, pixels);
        const InfoNceResult res = infonce_loss(rendered, labels);
        if (!std::isfinite(res.loss))
            throw Error(Errc::non_finite, "train: non-finite loss at step " + std::to_string(step));
        const RowMatrix<double> grad = view.plan.backward_pixels(res.grad, pixels);

        if (cfg.optimizer == OptimizerKind::adam) {
            const double t = step + 1.0;
            const double c1 = 1.0 - std::pow(cfg.beta1, t);
            const double c2 = 1.0 - std::pow(cfg.beta2, t);
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
            m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
            params.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon);
        } else {
            params -= cfg.learning_rate * grad;
        }
        trace.push_back(res.loss);
        if (progress) progress(step, res.loss);
    }

    scene.instance = params.cast<float>();
    scene.stage.trained = true;
    return trace;
}

FeatureSeparation feature_separation(const GaussianScene& scene) {
    std::map<ObjectId, Eigen::VectorXd> sums;
    std::map<ObjectId, double> counts;
    Eigen::VectorXd total = Eigen::VectorXd::Zero(scene.d_instance);
    double n = 0.0;
    for (std::size_t i = 0; i < scene.object_ids.size(); ++i) {
        const ObjectId id = scene.object_ids[i];
        if (id == 0) continue;
        Eigen::VectorXd f = scene.instance.row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
        const double norm = f.norm();
        if (norm > 0.0) f /= norm;
        auto [it, inserted] = sums.try_emplace(id, Eigen::VectorXd::Zero(scene.d_instance));
        it->second += f;
        counts[id] += 1.0;
        total += f;
        n += 1.0;
    }
    double intra_sum = 0.0, intra_pairs = 0.0, self_sq = 0.0, count_sq = 0.0;
    for (const auto& [id, s] : sums) {
        const double c = counts[id];
        intra_sum += 0.5 * (s.squaredNorm() - c);
        intra_pairs += 0.5 * c * (c - 1.0);
        self_sq += s.squaredNorm();
        count_sq += c * c;
    }
    FeatureSeparation out;
    if (intra_pairs > 0) out.intra_cosine = intra_sum / intra_pairs;
    const double inter_pairs = 0.5 * (n * n - count_sq);
    if (inter_pairs > 0) out.inter_cosine = 0.5 * (total.squaredNorm() - self_sq) / inter_pairs;
    return out;
}

std::vector<double> moving_average(std::span<const double> trace, std::size_t window) {
    std::vector<double> out(trace.size());
    double running = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        running += trace[i];
        if (i >= window) running -= trace[i - window];
        out[i] = running / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

} // namespace splatseg
