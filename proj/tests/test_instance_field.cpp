// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/instance_field.hpp"
#include "splatseg/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <set>

using namespace splatseg;
using namespace splatseg::test;

namespace {

/// Straight transcription of the loss in long double.
long double naive_infonce(const RowMatrix<double>& f, const std::vector<SegmentId>& seg) {
    std::map<SegmentId, std::vector<long double>> centroid;
    std::map<SegmentId, long double> count;
    for (Eigen::Index u = 0; u < f.rows(); ++u) {
        auto& c = centroid[seg[static_cast<std::size_t>(u)]];
        c.resize(static_cast<std::size_t>(f.cols()), 0.0L);
        for (Eigen::Index d = 0; d < f.cols(); ++d) c[static_cast<std::size_t>(d)] += f(u, d);
        count[seg[static_cast<std::size_t>(u)]] += 1.0L;
    }
    for (auto& [id, c] : centroid)
        for (auto& x : c) x /= count[id];
    long double total = 0.0L;
    for (Eigen::Index u = 0; u < f.rows(); ++u) {
        long double denom = 0.0L, own = 0.0L;
        for (const auto& [id, c] : centroid) {
            long double dot = 0.0L;
            for (Eigen::Index d = 0; d < f.cols(); ++d) dot += f(u, d) * c[static_cast<std::size_t>(d)];
            denom += std::exp(dot);
            if (id == seg[static_cast<std::size_t>(u)]) own = dot;
        }
        total += std::log(denom) - own;
    }
    return total / static_cast<long double>(f.rows());
}

RowMatrix<double> random_features(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    RowMatrix<double> f(rows, cols);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = normal(rng);
    return f;
}

ViewSupervision view_with_segments(int width, int height, const std::vector<std::pair<SegmentId, int>>& spans) {
    ViewSupervision v;
    v.camera.width = width;
    v.camera.height = height;
    v.instance_mask.assign(v.camera.pixel_count(), 0);
    std::size_t at = 0;
    for (const auto& [id, len] : spans)
        for (int k = 0; k < len; ++k) v.instance_mask[at++] = id;
    return v;
}

SceneSpec tiny_spec(int objects, std::uint64_t seed) {
    SceneSpec spec;
    spec.num_objects = objects;
    spec.gaussians_per_object = 20;
    spec.num_views = 4;
    spec.image_size = 48;
    spec.seed = seed;
    return spec;
}

} // namespace

TEST_CASE("segment_pixels groups the mask by id in pixel order") {
    auto v = view_with_segments(10, 10, {{3, 5}, {0, 10}, {7, 4}});
    v.instance_mask[50] = 3;
    const auto seg = segment_pixels(v);
    REQUIRE(seg.size() == 2);
    CHECK(seg.at(3) == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 50});
    CHECK(seg.at(7) == std::vector<std::uint32_t>{15, 16, 17, 18});
    CHECK(seg.count(0) == 0);
}

TEST_CASE("sampler takes every pixel of a small segment") {
    const auto v = view_with_segments(10, 10, {{4, 10}});
    const auto batch = sample_pixels(v, 0, 64, 1);
    REQUIRE(batch.samples.size() == 10);
    std::set<std::uint32_t> seen;
    for (const auto& s : batch.samples) {
        CHECK(s.segment == 4);
        seen.insert(s.pixel);
    }
    CHECK(seen.size() == 10);
}

TEST_CASE("sampler draws distinct member pixels per segment and never id 0") {
    const auto v = view_with_segments(20, 20, {{1, 100}, {0, 50}, {2, 100}, {5, 100}, {9, 1}});
    const auto batch = sample_pixels(v, 3, 64, 42);
    CHECK(batch.view_index == 3);
    CHECK(batch.samples.size() == 192);
    CHECK(batch.by_segment.size() == 3);
    std::set<std::uint32_t> seen;
    for (const auto& s : batch.samples) {
        CHECK(s.segment != 0);
        CHECK(s.segment != 9);
        CHECK(v.instance_mask[s.pixel] == s.segment);
        seen.insert(s.pixel);
    }
    CHECK(seen.size() == batch.samples.size());
    for (const auto& [id, idx] : batch.by_segment) {
        CHECK(idx.size() == 64);
        for (std::size_t i : idx) CHECK(batch.samples[i].segment == id);
    }
    CHECK(batch.pixels().size() == 192);

    const auto again = sample_pixels(v, 3, 64, 42);
    for (std::size_t i = 0; i < batch.samples.size(); ++i) CHECK(again.samples[i].pixel == batch.samples[i].pixel);
}

TEST_CASE("sampler is uniform over a segment") {
    const auto v = view_with_segments(4, 1, {{1, 4}});
    std::mt19937_64 rng(9);
    const auto seg = segment_pixels(v);
    std::vector<int> hits(4, 0);
    const int draws = 8000;
    for (int t = 0; t < draws; ++t)
        for (const auto& s : sample_pixels(seg, 0, 2, rng).samples) ++hits[s.pixel];
    // each pixel is chosen with probability 1/2; 4 sigma is about 0.022
    for (int h : hits) CHECK(std::abs(h / double(draws) - 0.5) < 0.025);
}

TEST_CASE("infonce of a single segment is exactly zero") {
    const auto f = random_features(1, 12, 5);
    const std::vector<SegmentId> seg(12, 4);
    const auto r = infonce_loss(f, seg);
    CHECK(r.loss == 0.0);
    CHECK(r.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("infonce of identical features over two segments is log 2") {
    RowMatrix<double> f(6, 3);
    f.rowwise() = Eigen::RowVector3d(0.3, -1.2, 2.0);
    const std::vector<SegmentId> seg{1, 1, 1, 2, 2, 2};
    CHECK(infonce_loss(f, seg).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("infonce matches a long-double transcription and is non-negative") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto f = random_features(s, 30, 4, 0.2 + 0.3 * static_cast<double>(s % 5));
        std::vector<SegmentId> seg(30);
        for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<SegmentId>(1 + (i * 7 + s) % 4);
        const auto r = infonce_loss(f, seg);
        const double want = static_cast<double>(naive_infonce(f, seg));
        CHECK(r.loss == doctest::Approx(want).epsilon(1e-10));
        CHECK(r.loss >= 0.0);
    }
}

TEST_CASE("infonce stays finite for large logits") {
    const auto f = random_features(3, 16, 4, 40.0);
    std::vector<SegmentId> seg(16);
    for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<SegmentId>(i % 2);
    const auto r = infonce_loss(f, seg);
    CHECK(std::isfinite(r.loss));
    CHECK(r.grad.allFinite());
}

TEST_CASE("infonce gradient matches central differences") {
    const auto f = random_features(11, 18, 5, 0.7);
    std::vector<SegmentId> seg(18);
    for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<SegmentId>(10 + i % 3);
    const auto r = infonce_loss(f, seg);
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index u = 0; u < f.rows(); ++u)
        for (Eigen::Index d = 0; d < f.cols(); ++d) {
            RowMatrix<double> p = f, m = f;
            p(u, d) += h;
            m(u, d) -= h;
            const double fd = (infonce_loss(p, seg).loss - infonce_loss(m, seg).loss) / (2 * h);
            worst = std::max(worst, std::abs(fd - r.grad(u, d)) / std::max(1.0, std::abs(fd)));
        }
    CHECK(worst <= 1e-6);
}

TEST_CASE("infonce does not depend on segment labels or sample order") {
    const auto f = random_features(5, 24, 3);
    std::vector<SegmentId> seg(24), relabeled(24);
    const SegmentId remap[3] = {900, 2, 41};
    for (std::size_t i = 0; i < seg.size(); ++i) {
        seg[i] = static_cast<SegmentId>(i % 3);
        relabeled[i] = remap[i % 3];
    }
    const auto a = infonce_loss(f, seg);
    const auto b = infonce_loss(f, relabeled);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    CHECK(max_abs(a.grad, b.grad) <= 1e-14);

    std::vector<Eigen::Index> perm(24);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
    RowMatrix<double> g(24, 3);
    std::vector<SegmentId> pseg(24);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        g.row(static_cast<Eigen::Index>(i)) = f.row(perm[i]);
        pseg[i] = seg[static_cast<std::size_t>(perm[i])];
    }
    CHECK(infonce_loss(g, pseg).loss == doctest::Approx(a.loss).epsilon(1e-12));
}

TEST_CASE("infonce rejects mismatched inputs") {
    const auto f = random_features(1, 4, 2);
    const std::vector<SegmentId> seg{1, 2, 3};
    CHECK(catch_error([&] { infonce_loss(f, seg); }).thrown);
}

TEST_CASE("init_instance_features is seeded and small") {
    auto a = generate_synthetic_scene(tiny_spec(2, 0));
    auto b = a;
    init_instance_features(a, 17);
    init_instance_features(b, 17);
    CHECK(a.instance == b.instance);
    const double var = a.instance.cast<double>().squaredNorm() / static_cast<double>(a.instance.size());
    CHECK(std::sqrt(var) == doctest::Approx(0.01).epsilon(0.15));
    init_instance_features(b, 18);
    CHECK(a.instance != b.instance);
}

TEST_CASE("zero steps leave the scene untouched") {
    auto scene = generate_synthetic_scene(tiny_spec(2, 1));
    const auto before = scene.instance;
    TrainConfig cfg;
    cfg.steps = 0;
    const auto trace = train_instance_field(scene, cfg);
    CHECK(trace.empty());
    CHECK(scene.instance == before);
    CHECK(!scene.stage.trained);
}

TEST_CASE("training is deterministic and touches only instance features") {
    const auto scene0 = generate_synthetic_scene(tiny_spec(3, 2));
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.seed = 5;
    auto a = scene0, b = scene0;
    std::vector<int> steps_seen;
    const auto ta = train_instance_field(a, cfg, [&](int s, double) { steps_seen.push_back(s); });
    const auto tb = train_instance_field(b, cfg);
    CHECK(ta == tb);
    CHECK(a.instance == b.instance);
    CHECK(steps_seen.size() == 60);
    CHECK(steps_seen.back() == 59);
    CHECK(a.stage.trained);
    CHECK(a.positions == scene0.positions);
    CHECK(a.scales == scene0.scales);
    CHECK(a.rotations == scene0.rotations);
    CHECK(a.opacities == scene0.opacities);
    CHECK(a.colors == scene0.colors);
    CHECK(a.object_ids == scene0.object_ids);
    CHECK(a.instance != scene0.instance);
    for (double l : ta) CHECK(l >= 0.0);
}

TEST_CASE("training separates two objects and the smoothed loss decreases") {
    auto scene = generate_synthetic_scene(tiny_spec(2, 3));
    TrainConfig cfg;
    cfg.steps = 1500;
    cfg.samples_per_segment = 32;
    const auto before = feature_separation(scene);
    const auto trace = train_instance_field(scene, cfg);
    const auto after = feature_separation(scene);
    CHECK(after.intra_cosine > 0.9);
    CHECK(after.inter_cosine < before.inter_cosine);
    CHECK(after.inter_cosine < 0.5);
    CHECK(trace.back() < trace.front());

    const auto ma = moving_average(trace, 500);
    for (std::size_t t = 999; t < ma.size(); ++t) CHECK(ma[t] <= ma[t - 500]);
}

TEST_CASE("sgd is selectable") {
    auto scene = generate_synthetic_scene(tiny_spec(2, 4));
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.learning_rate = 0.5;
    const auto trace = train_instance_field(scene, cfg);
    CHECK(trace.size() == 5);
}

TEST_CASE("training without any segment reports no supervision") {
    auto scene = random_scene(1, 5, 3);
    ViewSupervision v;
    v.camera = front_camera(8, 8.0);
    v.instance_mask.assign(64, 0);
    scene.views.push_back(v);
    TrainConfig cfg;
    cfg.steps = 3;
    CHECK(catch_error([&] { train_instance_field(scene, cfg); }).is(Errc::no_supervision));
    cfg.samples_per_segment = 1;
    CHECK(catch_error([&] { train_instance_field(scene, cfg); }).is(Errc::invalid_argument));
}

TEST_CASE("feature separation matches all-pairs cosine") {
    auto scene = generate_synthetic_scene(tiny_spec(3, 6));
    scene.object_ids[0] = 0;
    const auto got = feature_separation(scene);
    double intra = 0, inter = 0;
    double ni = 0, ne = 0;
    const auto n = scene.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (scene.object_ids[i] == 0 || scene.object_ids[j] == 0) continue;
            const Eigen::VectorXd a = scene.instance.row(static_cast<Eigen::Index>(i)).cast<double>().normalized();
            const Eigen::VectorXd b = scene.instance.row(static_cast<Eigen::Index>(j)).cast<double>().normalized();
            if (scene.object_ids[i] == scene.object_ids[j]) intra += a.dot(b), ni += 1;
            else inter += a.dot(b), ne += 1;
        }
    CHECK(got.intra_cosine == doctest::Approx(intra / ni).epsilon(1e-9));
    CHECK(got.inter_cosine == doctest::Approx(inter / ne).epsilon(1e-9));
}

TEST_CASE("moving average uses a shorter window at the start") {
    const std::vector<double> x{4, 2, 6, 8, 0};
    const auto ma = moving_average(x, 3);
    const std::vector<double> want{4, 3, 4, 16.0 / 3, 14.0 / 3};
    REQUIRE(ma.size() == want.size());
    for (std::size_t i = 0; i < ma.size(); ++i) CHECK(ma[i] == doctest::Approx(want[i]).epsilon(1e-14));
}
