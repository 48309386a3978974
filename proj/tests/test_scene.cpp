// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"
#include "splatseg/scene_io.hpp"
#include "splatseg/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstring>

using namespace splatseg;
using namespace splatseg::test;
namespace fs = std::filesystem;

namespace {

template <class M>
bool same_bits(const M& a, const M& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

bool same_scene(const GaussianScene& a, const GaussianScene& b) {
    if (a.d_instance != b.d_instance || a.d_language != b.d_language) return false;
    if (!same_bits(a.positions, b.positions) || !same_bits(a.scales, b.scales) ||
        !same_bits(a.rotations, b.rotations) || !same_bits(a.colors, b.colors) ||
        !same_bits(a.instance, b.instance) || !same_bits(a.language, b.language) ||
        !same_bits(a.opacities, b.opacities))
        return false;
    if (a.object_ids != b.object_ids || a.vocabulary != b.vocabulary || !(a.stage == b.stage)) return false;
    if (a.views.size() != b.views.size()) return false;
    for (std::size_t k = 0; k < a.views.size(); ++k) {
        const auto& x = a.views[k];
        const auto& y = b.views[k];
        if (x.instance_mask != y.instance_mask || x.segment_language != y.segment_language ||
            x.language_free != y.language_free)
            return false;
        const auto& c = x.camera;
        const auto& d = y.camera;
        if (c.width != d.width || c.height != d.height || c.fx != d.fx || c.fy != d.fy || c.cx != d.cx ||
            c.cy != d.cy || c.rotation != d.rotation || c.translation != d.translation)
            return false;
    }
    return true;
}

SceneSpec small_spec(std::uint64_t seed) {
    SceneSpec spec;
    spec.num_objects = 3;
    spec.gaussians_per_object = 12;
    spec.num_views = 3;
    spec.image_size = 32;
    spec.seed = seed;
    return spec;
}

fs::path data_dir() { return fs::path(SPLATSEG_TEST_DATA) / "minimal"; }

void copy_minimal(const fs::path& to) {
    fs::copy(data_dir(), to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

} // namespace

TEST_CASE("synthetic generation is a pure function of the spec") {
    const auto a = generate_synthetic_scene(small_spec(7));
    const auto b = generate_synthetic_scene(small_spec(7));
    CHECK(same_scene(a, b));
    const auto c = generate_synthetic_scene(small_spec(8));
    CHECK(!same_bits(a.positions, c.positions));

    TempDir d1("gen1"), d2("gen2");
    save_scene(a, d1.path());
    save_scene(b, d2.path());
    CHECK(tree_bytes(d1.path()) == tree_bytes(d2.path()));
}

TEST_CASE("single object scene with five Gaussians") {
    SceneSpec spec = small_spec(1);
    spec.num_objects = 1;
    spec.gaussians_per_object = 5;
    const auto scene = generate_synthetic_scene(spec);
    REQUIRE(scene.size() == 5);
    for (ObjectId id : scene.object_ids) CHECK(id == 1);
    CHECK(scene.vocabulary.size() == 1);
    for (const auto& v : scene.views) {
        const auto ids = v.segment_ids();
        REQUIRE(ids.size() == 1);
        CHECK(ids[0] == 1);
        CHECK(v.segment_language.count(1) == 1);
    }
}

TEST_CASE("vocabulary is near-orthogonal and unit length") {
    SceneSpec spec = small_spec(3);
    spec.num_objects = 8;
    spec.d_language = 32;
    const auto scene = generate_synthetic_scene(spec);
    REQUIRE(scene.vocabulary.size() == 8);
    for (const auto& [i, a] : scene.vocabulary) {
        const Eigen::Map<const Eigen::VectorXf> va(a.data(), static_cast<Eigen::Index>(a.size()));
        CHECK(va.norm() == doctest::Approx(1.0).epsilon(1e-6));
        for (const auto& [j, b] : scene.vocabulary) {
            if (j <= i) continue;
            const Eigen::Map<const Eigen::VectorXf> vb(b.data(), static_cast<Eigen::Index>(b.size()));
            CHECK(std::abs(va.dot(vb)) <= 0.2);
        }
    }
}

TEST_CASE("noise-free segment embeddings equal the vocabulary entry") {
    const auto scene = generate_synthetic_scene(small_spec(4));
    for (const auto& v : scene.views)
        for (const auto& [id, vec] : v.segment_language) CHECK(vec == scene.vocabulary.at(id));
}

TEST_CASE("invalid specs are rejected") {
    SceneSpec spec = small_spec(0);
    spec.num_objects = 8;
    spec.d_language = 6;
    CHECK(catch_error([&] { generate_synthetic_scene(spec); }).is(Errc::invalid_argument));
    spec = small_spec(0);
    spec.num_objects = 0;
    CHECK(catch_error([&] { generate_synthetic_scene(spec); }).is(Errc::invalid_argument));
    spec = small_spec(0);
    spec.gaussians_per_object = 0;
    CHECK(catch_error([&] { generate_synthetic_scene(spec); }).is(Errc::invalid_argument));
}

TEST_CASE("masks are the dominant contributor of a brute-force blend") {
    SceneSpec spec = small_spec(11);
    spec.background_gaussians = 6;
    const auto scene = generate_synthetic_scene(spec);
    const auto n = static_cast<Eigen::Index>(scene.size());
    // One-hot per Gaussian: rendered channel g is that Gaussian's blend weight.
    const RowMatrix<double> onehot = RowMatrix<double>::Identity(n, n);
    std::size_t mismatched = 0, total = 0, labeled = 0;
    for (const auto& v : scene.views) {
        const auto img = naive_render(scene, v.camera, onehot);
        for (std::size_t p = 0; p < v.camera.pixel_count(); ++p) {
            std::uint32_t want = 0;
            if (img.alpha[p] >= kMaskMinAlpha) {
                Eigen::Index best = 0;
                const double w = img.channels.row(static_cast<Eigen::Index>(p)).maxCoeff(&best);
                if (w > 0.0) want = scene.object_ids[static_cast<std::size_t>(best)];
            }
            mismatched += v.instance_mask[p] != want;
            labeled += want != 0;
            ++total;
        }
    }
    CHECK(labeled > 0);
    // float vs double splats may flip pixels sitting exactly on a tie or on the alpha cut.
    CHECK(static_cast<double>(mismatched) <= 0.005 * static_cast<double>(total));
}

TEST_CASE("save then load reproduces the scene bit for bit") {
    auto scene = generate_synthetic_scene(small_spec(5));
    scene.language = FeatureMatrix::Random(static_cast<Eigen::Index>(scene.size()), scene.d_language);
    scene.stage.trained = true;
    scene.stage.mapped = "kernel";
    scene.views[0].language_free.insert(99);
    TempDir dir("roundtrip");
    save_scene(scene, dir.path());
    const auto back = load_scene(dir.path());
    CHECK(same_scene(scene, back));

    TempDir again("roundtrip2");
    save_scene(back, again.path());
    CHECK(tree_bytes(dir.path()) == tree_bytes(again.path()));
}

TEST_CASE("golden minimal container loads with the documented values") {
    const auto scene = load_scene(data_dir());
    REQUIRE(scene.size() == 1);
    CHECK(scene.d_instance == 2);
    CHECK(scene.d_language == 4);
    CHECK(scene.positions(0, 2) == 5.0f);
    CHECK(scene.scales(0, 0) == 0.25f);
    CHECK(scene.scales(0, 1) == 0.5f);
    CHECK(scene.scales(0, 2) == 0.125f);
    CHECK(scene.rotations(0, 0) == 1.0f);
    CHECK(scene.opacities[0] == 0.75f);
    CHECK(scene.colors(0, 1) == 0.5f);
    CHECK(scene.instance(0, 0) == 0.5f);
    CHECK(scene.instance(0, 1) == -2.0f);
    CHECK(!scene.has_language());
    REQUIRE(scene.object_ids.size() == 1);
    CHECK(scene.object_ids[0] == 1);
    CHECK(scene.vocabulary.at(1) == std::vector<float>{0.f, 1.f, 0.f, 0.f});
    REQUIRE(scene.views.size() == 1);
    const auto& v = scene.views[0];
    CHECK(v.camera.width == 4);
    CHECK(v.camera.fx == 8.0);
    CHECK(v.camera.cx == 1.5);
    CHECK(v.mask_at(1, 1) == 1);
    CHECK(v.mask_at(0, 0) == 0);
    CHECK(v.segment_ids() == std::vector<SegmentId>{1});
    CHECK(v.segment_language.at(1) == std::vector<float>{0.f, 1.f, 0.f, 0.f});
    CHECK(!scene.stage.trained);
    CHECK(scene.stage.mapped.empty());
}

TEST_CASE("manifest and tensor file disagreements are reported by field") {
    TempDir dir("corrupt");
    const fs::path d = dir / "scene";

    SUBCASE("row count mismatch") {
        const auto scene = random_scene(2, 10, 2);
        save_scene(scene, d);
        FeatureMatrix nine = scene.positions.topRows(9);
        write_matrix(d / "positions.f32", nine);
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::shape_mismatch));
        CHECK(c.mentions("positions"));
    }
    SUBCASE("missing tensor file") {
        copy_minimal(d);
        fs::remove(d / "opacities.f32");
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::missing_file));
        CHECK(c.mentions("opacities"));
    }
    SUBCASE("missing manifest") {
        fs::create_directories(d);
        CHECK(catch_error([&] { load_scene(d); }).is(Errc::missing_file));
    }
    SUBCASE("non-finite value") {
        copy_minimal(d);
        const float bad[2] = {0.5f, std::numeric_limits<float>::quiet_NaN()};
        write_f32(d / "instance.f32", bad);
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::non_finite));
        CHECK(c.mentions("instance"));
    }
    SUBCASE("manifest shape disagrees with dimensions") {
        copy_minimal(d);
        auto text = file_bytes(d / "manifest.json");
        const auto pos = text.find("\"d_I\": 2");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 8, "\"d_I\": 3");
        write_text(d / "manifest.json", text);
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::shape_mismatch));
        CHECK(c.mentions("instance"));
    }
    SUBCASE("short mask") {
        copy_minimal(d);
        const std::uint32_t few[3] = {0, 0, 0};
        write_u32(d / "mask_0.u32", few);
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::shape_mismatch));
        CHECK(c.mentions("view 0"));
    }
    SUBCASE("segment embedding of the wrong length") {
        copy_minimal(d);
        write_text(d / "segments_0.json", "{\"1\": [1.0, 0.0]}");
        const auto c = catch_error([&] { load_scene(d); });
        CHECK(c.is(Errc::shape_mismatch));
        CHECK(c.mentions("segment 1"));
    }
}

TEST_CASE("validate names the violated invariant") {
    auto base = single_gaussian(0.5f, {1.f});
    CHECK_NOTHROW(base.validate());

    auto s = base;
    s.rotations(0, 0) = 2.f;
    auto c = catch_error([&] { s.validate(); });
    CHECK(c.is(Errc::invalid_argument));
    CHECK(c.mentions("rotation"));

    s = base;
    s.scales(0, 1) = 0.f;
    c = catch_error([&] { s.validate(); });
    CHECK(c.is(Errc::invalid_argument));
    CHECK(c.mentions("scale"));

    s = base;
    s.opacities[0] = 1.5f;
    CHECK(catch_error([&] { s.validate(); }).mentions("opacity"));

    s = base;
    s.positions(0, 0) = std::numeric_limits<float>::infinity();
    c = catch_error([&] { s.validate(); });
    CHECK(c.is(Errc::non_finite));
    CHECK(c.mentions("positions"));

    s = base;
    s.instance.resize(1, 3);
    s.instance.setZero();
    c = catch_error([&] { s.validate(); });
    CHECK(c.is(Errc::shape_mismatch));
    CHECK(c.mentions("instance"));

    s = base;
    s.object_ids = {4};
    s.vocabulary[1] = std::vector<float>(4, 0.5f);
    CHECK(catch_error([&] { s.validate(); }).mentions("vocabulary"));

    s = base;
    s.vocabulary[1] = std::vector<float>(3, 0.f);
    CHECK(catch_error([&] { s.validate(); }).is(Errc::shape_mismatch));
}

TEST_CASE("push_back and gaussian() are inverse") {
    GaussianScene scene(2, 4);
    Gaussian g;
    g.position = {1.f, 2.f, 3.f};
    g.instance_feature = Eigen::VectorXf::Constant(2, 0.25f);
    g.gt_object_id = 3;
    scene.push_back(g);
    g.position = {4.f, 5.f, 6.f};
    g.gt_object_id = 1;
    scene.push_back(g);
    REQUIRE(scene.size() == 2);
    CHECK(scene.gaussian(1).position == g.position);
    CHECK(scene.gaussian(1).gt_object_id == ObjectId{1});
    CHECK(scene.gaussians_of_object(3) == std::vector<std::uint32_t>{0});
    CHECK(scene.max_object_id() == 3);

    Gaussian bad;
    bad.instance_feature = Eigen::VectorXf::Zero(5);
    CHECK(catch_error([&] { scene.push_back(bad); }).is(Errc::shape_mismatch));
}

TEST_CASE("look_at camera sees its target at the principal point") {
    const Eigen::Vector3d eye(1.0, 2.0, -3.0), target(0.5, -0.5, 2.0);
    const auto cam = Camera::look_at(eye, target, 41, 31, 50.0);
    const Eigen::Vector3d p = cam.to_camera(target);
    CHECK(p.z() == doctest::Approx((target - eye).norm()));
    const auto px = pinhole(cam, target);
    CHECK(px.x() == doctest::Approx(cam.cx));
    CHECK(px.y() == doctest::Approx(cam.cy));
    CHECK((cam.center() - eye).norm() < 1e-12);
    CHECK((cam.rotation * cam.rotation.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
}
