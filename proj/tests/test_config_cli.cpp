// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/cli.hpp"
#include "splatseg/config.hpp"
#include "splatseg/scene_io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace splatseg;
using namespace splatseg::test;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "splatseg");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    return run_cli(static_cast<int>(args.size()), argv.data());
}

std::vector<std::string> small_gen(const fs::path& out) {
    return {"gen", "--out", out.string(), "--objects", "2", "--gaussians-per-object", "12",
            "--views", "2", "--image-size", "32", "--seed", "4", "--deterministic"};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(file_bytes(p)); }

} // namespace

TEST_CASE("config defaults carry the reference values") {
    const PipelineConfig c;
    CHECK(c.scene.d_instance == 16);
    CHECK(c.train.steps == 30000);
    CHECK(c.train.learning_rate == 2.5e-3);
    CHECK(c.train.epsilon == 1e-15);
    CHECK(c.mapper.kind == "kernel");
    CHECK(c.mapper.sigma == 0.1);
    CHECK(c.mapper.pairs.min_pixels == 20);
    CHECK(c.mapper.mlp.hidden == 256);
    CHECK(c.inference.tau == 0.5);
    CHECK(!c.inference.threshold.automatic);
    CHECK(c.inference.threshold.value == 0.8);
    CHECK(c.eval.benchmark.acc_threshold == 0.25);
    CHECK(c.eval.benchmark.kmeans_restarts == 10);
    CHECK(c.eval.modes.size() == 3);
}

TEST_CASE("config files set values by section") {
    const auto c = parse_config(R"(
# comment line
[scene]
num_objects = 5   # trailing comment
language_noise = 0.25
[train]
steps = 1200
optimizer = sgd
[mapper]
kind = mlp
sigma = 0.05
[inference]
similarity = auto
[eval]
modes = collaborative, language_only
eval_2d = true
)");
    CHECK(c.scene.num_objects == 5);
    CHECK(c.scene.language_noise == 0.25);
    CHECK(c.train.steps == 1200);
    CHECK(c.train.optimizer == OptimizerKind::sgd);
    CHECK(c.mapper.kind == "mlp");
    CHECK(c.mapper.sigma == 0.05);
    CHECK(c.inference.threshold.automatic);
    CHECK(c.eval.modes == std::vector<BenchmarkMode>{BenchmarkMode::collaborative, BenchmarkMode::language_only});
    CHECK(c.eval.benchmark.eval_2d);
    CHECK(c.scene.d_instance == 16);

    const auto fixed = parse_config("[inference]\nsimilarity = 0.7\n", c);
    CHECK(!fixed.inference.threshold.automatic);
    CHECK(fixed.inference.threshold.value == 0.7);
    CHECK(fixed.train.steps == 1200);
}

TEST_CASE("config errors are reported with their line") {
    auto err = catch_error([] { parse_config("[train]\nstepz = 3\n"); });
    CHECK(err.is(Errc::config));
    CHECK(err.mentions("line 2"));
    CHECK(err.mentions("train.stepz"));
    CHECK(catch_error([] { parse_config("[training]\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("steps = 3\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("[train]\nsteps = many\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("[train]\nsteps 3\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("[mapper]\nkind = forest\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("[eval]\nmodes = joint\n"); }).is(Errc::config));
    CHECK(catch_error([] { parse_config("[eval]\nmodes = ,\n"); }).is(Errc::config));
    CHECK(catch_error([] { load_config("/nonexistent/splatseg.cfg"); }).is(Errc::missing_file));
}

TEST_CASE("every documented key is accepted") {
    const auto keys = config_keys();
    CHECK(keys.size() >= 25);
    for (const auto& key : keys) {
        const auto dot = key.find('.');
        REQUIRE(dot != std::string::npos);
        std::string value = "1";
        if (key == "train.optimizer") value = "adam";
        if (key == "mapper.kind") value = "kernel";
        if (key == "eval.modes") value = "collaborative";
        if (key == "scene.language_noise" || key == "inference.similarity" || key == "inference.tau") value = "0.5";
        const std::string text = "[" + key.substr(0, dot) + "]\n" + key.substr(dot + 1) + " = " + value + "\n";
        CHECK_NOTHROW(parse_config(text));
    }
}

TEST_CASE("cli usage errors and help") {
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"gen"}) == 2);
    CHECK(run({"--help"}) == 0);
    CHECK(run({"query", "--help"}) == 0);
    CHECK(exit_status(0) == 10);
    CHECK(exit_status(static_cast<int>(Errc::stage_order)) == 15);
}

TEST_CASE("cli gen is reproducible and refuses to clobber") {
    TempDir dir("cli_gen");
    const auto a = dir / "a", b = dir / "b";
    REQUIRE(run(small_gen(a)) == 0);
    REQUIRE(run(small_gen(b)) == 0);
    CHECK(tree_bytes(a) == tree_bytes(b));
    CHECK(load_scene(a).size() == 24);

    CHECK(run(small_gen(a)) == exit_status(static_cast<int>(Errc::invalid_argument)));
    auto again = small_gen(a);
    again.push_back("--overwrite");
    CHECK(run(again) == 0);
    CHECK(tree_bytes(a) == tree_bytes(b));
}

TEST_CASE("cli flags override config values") {
    TempDir dir("cli_cfg");
    const auto cfg = dir / "run.cfg";
    write_text(cfg, "[scene]\nnum_objects = 3\ngaussians_per_object = 7\nimage_size = 24\nnum_views = 2\n");
    REQUIRE(run({"gen", "--out", (dir / "s").string(), "--config", cfg.string(), "--objects", "2"}) == 0);
    const auto scene = load_scene(dir / "s");
    CHECK(scene.size() == 14);
    CHECK(scene.vocabulary.size() == 2);
    CHECK(scene.views.front().camera.width == 24);

    write_text(cfg, "[scene]\nbogus = 1\n");
    CHECK(run({"gen", "--out", (dir / "t").string(), "--config", cfg.string()}) ==
          exit_status(static_cast<int>(Errc::config)));
}

TEST_CASE("cli stages enforce their order and report missing inputs") {
    TempDir dir("cli_order");
    const auto s = dir / "s";
    REQUIRE(run(small_gen(s)) == 0);
    CHECK(run({"map", "--scene", s.string()}) == exit_status(static_cast<int>(Errc::stage_order)));
    CHECK(run({"query", "--scene", s.string(), "--out", (dir / "q").string(), "--query-object-id", "1"}) ==
          exit_status(static_cast<int>(Errc::stage_order)));
    CHECK(run({"train", "--scene", (dir / "absent").string()}) == exit_status(static_cast<int>(Errc::missing_file)));
    CHECK(run({"train", "--scene", s.string(), "--steps", "5", "--preset", "fast"}) == 2);
}

TEST_CASE("cli pipeline writes the documented outputs") {
    TempDir dir("cli_pipe");
    const auto s = dir / "s";
    REQUIRE(run(small_gen(s)) == 0);
    REQUIRE(run({"train", "--scene", s.string(), "--steps", "40", "--quiet"}) == 0);
    const auto train = read_json(s / "train.json");
    CHECK(train["steps"] == 40);
    CHECK(train.contains("final_loss"));
    CHECK(file_bytes(s / "loss.csv").rfind("step,loss\n", 0) == 0);

    REQUIRE(run({"map", "--scene", s.string(), "--min-pixels", "5"}) == 0);
    CHECK(fs::exists(s / "mapping" / "mapping.json"));
    CHECK(load_scene(s).stage.mapped == "kernel");

    const auto q = dir / "q";
    REQUIRE(run({"query", "--scene", s.string(), "--out", q.string(), "--query-object-id", "2", "--export-ply"}) == 0);
    const auto result = read_json(q / "result.json");
    for (const char* key : {"seeds", "seed_order", "regions", "skipped", "final", "tau", "similarity_threshold"})
        CHECK(result.contains(key));
    CHECK(result["tau"] == 0.5);
    CHECK(file_bytes(q / "selection.ply").rfind("ply\n", 0) == 0);

    // a raw float32 query vector of the wrong length is rejected
    const float two[2] = {1.f, 0.f};
    write_f32(dir / "q.f32", two);
    CHECK(run({"query", "--scene", s.string(), "--out", q.string(), "--query-vec", (dir / "q.f32").string()}) ==
          exit_status(static_cast<int>(Errc::shape_mismatch)));
    CHECK(run({"query", "--scene", s.string(), "--out", q.string()}) ==
          exit_status(static_cast<int>(Errc::invalid_argument)));

    const auto e = dir / "e";
    REQUIRE(run({"eval", "--scene", s.string(), "--out", e.string(), "--modes", "collaborative,language_only",
                 "--deterministic"}) == 0);
    const auto report = read_json(e / "report.json");
    REQUIRE(report["reports"].size() == 2);
    CHECK(report["reports"][0]["mode"] == "collaborative");
    CHECK(report["reports"][0]["mean_query_time_s"].is_null());
    CHECK(fs::exists(e / "report.txt"));

    // train again: the stale language field is dropped
    REQUIRE(run({"train", "--scene", s.string(), "--steps", "3", "--quiet"}) == 0);
    CHECK(load_scene(s).stage.mapped.empty());
    CHECK(!load_scene(s).has_language());
}
