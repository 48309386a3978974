// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/cli.hpp"

#include "splatseg/config.hpp"
#include "splatseg/error.hpp"
#include "splatseg/eval.hpp"
#include "splatseg/inference.hpp"
#include "splatseg/ins2lang.hpp"
#include "splatseg/instance_field.hpp"
#include "splatseg/parallel.hpp"
#include "splatseg/scene_io.hpp"
#include "splatseg/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

namespace splatseg {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Flags bound to a scratch PipelineConfig; only the ones actually given on
// the command line are copied over the config file values.
struct Overrides {
    PipelineConfig flags;
    std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&, PipelineConfig&)>>> binds;

    template <class Get>
    CLI::Option* bind(CLI::App* app, const std::string& name, Get get, const std::string& desc) {
        CLI::Option* opt = app->add_option(name, get(flags), desc);
        binds.emplace_back(opt, [get](PipelineConfig& dst, PipelineConfig& src) { get(dst) = get(src); });
        return opt;
    }

    PipelineConfig resolve(const std::string& config_path) {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        for (auto& [opt, apply] : binds)
            if (opt->count() > 0) apply(cfg, flags);
        return cfg;
    }
};

struct Common {
    std::string config;
    unsigned threads = 0;
    std::uint64_t seed = 0;
    bool deterministic = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key = value configuration file; flags override it")->check(CLI::ExistingFile);
    app->add_option("--threads", c.threads, "worker threads (0 = hardware concurrency)");
    app->add_option("--seed", c.seed, "seed for every random choice of this command");
    app->add_flag("--deterministic", c.deterministic, "write null timing fields so reruns are byte-identical");
}

fs::path resolve_path(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal(); }

fs::path require_scene_dir(const std::string& p) {
    const fs::path dir = resolve_path(p);
    if (!fs::exists(dir / "manifest.json"))
        throw Error(Errc::missing_file, "no scene at " + dir.string() + " (manifest.json missing)");
    return dir;
}

json timing(bool deterministic, double value) { return deterministic ? json(nullptr) : json(value); }

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(1) + "\n"); }

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_trace_csv(const fs::path& path, const std::vector<double>& trace) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i) + "," + format_double(trace[i]) + "\n";
    write_text(path, out);
}

SimilarityThreshold parse_threshold(const std::string& text, SimilarityThreshold base) {
    if (text == "auto") {
        base.automatic = true;
        return base;
    }
    try {
        std::size_t used = 0;
        base.value = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw Error(Errc::invalid_argument, "--T expects a number in (0,1) or 'auto', got '" + text + "'");
    }
    base.automatic = false;
    return base;
}

// Default contrast set for a free embedding: every vocabulary vector that is
// not the query itself, plus one seeded random direction.
std::vector<Eigen::VectorXf> default_canonicals(const GaussianScene& scene, const Eigen::VectorXf& query,
                                                std::uint64_t seed) {
    std::vector<Eigen::VectorXf> canon;
    for (const auto& [id, vec] : scene.vocabulary) {
        Eigen::VectorXf v = Eigen::Map<const Eigen::VectorXf>(vec.data(), static_cast<Eigen::Index>(vec.size()));
        v.normalize();
        if (v.dot(query) < 0.99f) canon.push_back(v);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd r(scene.d_language);
    for (Eigen::Index k = 0; k < r.size(); ++k) r[k] = normal(rng);
    canon.push_back(r.normalized().cast<float>());
    return canon;
}

std::vector<Eigen::VectorXf> read_vectors(const fs::path& path, int dim, const std::string& field) {
    if (!fs::exists(path)) throw Error(Errc::missing_file, field + ": " + path.string() + " not found");
    const auto bytes = fs::file_size(path);
    const auto stride = static_cast<std::uintmax_t>(dim) * sizeof(float);
    if (bytes == 0 || bytes % stride != 0)
        throw Error(Errc::shape_mismatch, field + ": file size is not a multiple of d_L floats");
    const auto values = read_f32(path, bytes / sizeof(float), field);
    std::vector<Eigen::VectorXf> out;
    for (std::size_t off = 0; off < values.size(); off += static_cast<std::size_t>(dim))
        out.emplace_back(Eigen::Map<const Eigen::VectorXf>(values.data() + off, dim));
    return out;
}

Eigen::VectorXf unit_or_throw(Eigen::VectorXf v, const std::string& field) {
    const float n = v.norm();
    if (!(n > 0.f) || !std::isfinite(n)) throw Error(Errc::invalid_argument, field + ": zero or non-finite vector");
    return v / n;
}

void require_mapped(const GaussianScene& scene, const std::string& command) {
    if (scene.stage.mapped.empty() || !scene.has_language())
        throw Error(Errc::stage_order, command + ": language field not materialized (run map first)");
}

json index_list(std::span<const std::uint32_t> v) { return json(std::vector<std::uint32_t>(v.begin(), v.end())); }

void write_ply(const fs::path& path, const GaussianScene& scene, std::span<const std::uint32_t> selection) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << selection.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    auto byte = [](float c) { return static_cast<int>(std::lround(std::clamp(c, 0.f, 1.f) * 255.f)); };
    for (const std::uint32_t i : selection) {
        const auto r = static_cast<Eigen::Index>(i);
        out << format_double(scene.positions(r, 0)) << ' ' << format_double(scene.positions(r, 1)) << ' '
            << format_double(scene.positions(r, 2)) << ' ' << byte(scene.colors(r, 0)) << ' '
            << byte(scene.colors(r, 1)) << ' ' << byte(scene.colors(r, 2)) << '\n';
    }
    write_text(path, out.str());
}

// ---------------------------------------------------------------- gen

struct GenArgs {
    Common common;
    std::string out;
    bool overwrite = false;
};

void cmd_gen(GenArgs& a, Overrides& ov) {
    set_thread_count(a.common.threads);
    PipelineConfig cfg = ov.resolve(a.common.config);
    cfg.scene.seed = a.common.seed;
    const fs::path out = resolve_path(a.out);
    if (fs::exists(out / "manifest.json") && !a.overwrite)
        throw Error(Errc::invalid_argument, out.string() + " already holds a scene (pass --overwrite)");
    const auto start = Clock::now();
    const GaussianScene scene = generate_synthetic_scene(cfg.scene);
    save_scene(scene, out);
    const SceneSpec& s = cfg.scene;
    write_json(out / "gen.json", {{"command", "gen"},
                                  {"seed", a.common.seed},
                                  {"num_objects", s.num_objects},
                                  {"gaussians_per_object", s.gaussians_per_object},
                                  {"d_instance", s.d_instance},
                                  {"d_language", s.d_language},
                                  {"num_views", s.num_views},
                                  {"image_size", s.image_size},
                                  {"background_gaussians", s.background_gaussians},
                                  {"language_noise", s.language_noise},
                                  {"cluster_radius", s.cluster_radius},
                                  {"n_gaussians", scene.size()},
                                  {"elapsed_s", timing(a.common.deterministic, seconds_since(start))}});
    std::cout << "gen: " << scene.size() << " gaussians, " << scene.views.size() << " views -> " << out.string()
              << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    Common common;
    std::string scene;
    std::string out;
    std::string preset;
    std::string optimizer = "adam";
    bool quiet = false;
};

void cmd_train(TrainArgs& a, Overrides& ov, CLI::Option* steps_opt, CLI::Option* optimizer_opt) {
    set_thread_count(a.common.threads);
    PipelineConfig cfg = ov.resolve(a.common.config);
    if (!a.preset.empty() && steps_opt->count() == 0) {
        if (a.preset == "fast") cfg.train.steps = kFastSteps;
        else if (a.preset == "medium") cfg.train.steps = kMediumSteps;
        else cfg.train.steps = kDefaultSteps;
    }
    if (optimizer_opt->count() > 0) cfg.train.optimizer = a.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    cfg.train.seed = a.common.seed;
    const fs::path in = require_scene_dir(a.scene);
    const fs::path out = a.out.empty() ? in : resolve_path(a.out);
    GaussianScene scene = load_scene(in);
    // A new instance field invalidates any earlier mapping.
    scene.language = FeatureMatrix();
    scene.stage.mapped.clear();

    const int every = std::max(1, cfg.train.steps / 10);
    const auto start = Clock::now();
    const auto trace = train_instance_field(scene, cfg.train, [&](int step, double loss) {
        if (!a.quiet && ((step + 1) % every == 0))
            std::cerr << "train: step " << step + 1 << "/" << cfg.train.steps << " loss " << format_double(loss) << "\n";
    });
    const double elapsed = seconds_since(start);
    save_scene(scene, out);
    write_trace_csv(out / "loss.csv", trace);
    json record = {{"command", "train"},
                   {"seed", a.common.seed},
                   {"steps", cfg.train.steps},
                   {"samples_per_segment", cfg.train.samples_per_segment},
                   {"learning_rate", cfg.train.learning_rate},
                   {"optimizer", cfg.train.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                   {"final_loss", trace.empty() ? json(nullptr) : json(trace.back())},
                   {"elapsed_s", timing(a.common.deterministic, elapsed)}};
    if (scene.has_object_ids()) {
        const auto sep = feature_separation(scene);
        record["intra_cosine"] = sep.intra_cosine;
        record["inter_cosine"] = sep.inter_cosine;
    }
    write_json(out / "train.json", record);
    std::cout << "train: " << cfg.train.steps << " steps, final loss "
              << (trace.empty() ? std::string("n/a") : format_double(trace.back())) << " -> " << out.string() << "\n";
}

// ---------------------------------------------------------------- map

struct MapArgs {
    Common common;
    std::string scene;
    std::string out;
};

void cmd_map(MapArgs& a, Overrides& ov) {
    set_thread_count(a.common.threads);
    PipelineConfig cfg = ov.resolve(a.common.config);
    cfg.mapper.mlp.seed = a.common.seed;
    const fs::path in = require_scene_dir(a.scene);
    const fs::path out = a.out.empty() ? in : resolve_path(a.out);
    GaussianScene scene = load_scene(in);
    if (!scene.stage.trained) throw Error(Errc::stage_order, "map: instance field not trained (run train first)");

    const auto start = Clock::now();
    const MappingPairSet pairs = build_training_pairs(scene, cfg.mapper.pairs);
    MappingFunction phi;
    std::vector<double> mlp_trace;
    if (cfg.mapper.kind == "kernel") {
        phi = make_kernel_mapping(pairs, cfg.mapper.sigma, cfg.mapper.max_pairs, a.common.seed);
    } else {
        MlpFit fit = fit_mlp(pairs, cfg.mapper.mlp);
        mlp_trace = std::move(fit.loss_trace);
        phi = std::move(fit.mapping);
    }
    apply_mapping(scene, phi);
    const double elapsed = seconds_since(start);
    save_scene(scene, out);
    save_mapping(phi, out / "mapping");
    json record = {{"command", "map"},
                   {"seed", a.common.seed},
                   {"mapper", cfg.mapper.kind},
                   {"pairs", pairs.size()},
                   {"training_steps", cfg.mapper.kind == "kernel" ? 0 : cfg.mapper.mlp.steps},
                   {"elapsed_s", timing(a.common.deterministic, elapsed)}};
    if (cfg.mapper.kind == "kernel") {
        record["sigma"] = std::get<KernelMapping>(phi).sigma;
        record["retained_pairs"] = std::get<KernelMapping>(phi).pairs.size();
    } else {
        record["final_error"] = mlp_trace.empty() ? json(nullptr) : json(mlp_trace.back());
        write_trace_csv(out / "mlp_loss.csv", mlp_trace);
    }
    write_json(out / "map.json", record);
    std::cout << "map: " << cfg.mapper.kind << " mapping from " << pairs.size() << " pairs -> " << out.string()
              << "\n";
}

// ---------------------------------------------------------------- query

struct QueryArgs {
    Common common;
    std::string scene;
    std::string out;
    std::string query_vec;
    std::string canonical;
    std::string threshold = "0.8";
    std::string label;
    std::int64_t object_id = -1;
    bool export_ply = false;
};

void cmd_query(QueryArgs& a, Overrides& ov, CLI::Option* threshold_opt) {
    set_thread_count(a.common.threads);
    PipelineConfig cfg = ov.resolve(a.common.config);
    SimilarityThreshold threshold = cfg.inference.threshold;
    if (threshold_opt->count() > 0) threshold = parse_threshold(a.threshold, threshold);
    const fs::path in = require_scene_dir(a.scene);
    const fs::path out = resolve_path(a.out);
    if (!a.query_vec.empty() && !fs::exists(resolve_path(a.query_vec)))
        throw Error(Errc::missing_file, "query vector " + a.query_vec + " not found");
    GaussianScene scene = load_scene(in);
    require_mapped(scene, "query");

    Query q;
    bool normalized = false;
    if (a.object_id >= 0) {
        q = make_object_query(scene, static_cast<ObjectId>(a.object_id), a.common.seed, cfg.inference.tau, threshold);
    } else {
        const auto vecs = read_vectors(resolve_path(a.query_vec), scene.d_language, "query vector");
        if (vecs.size() != 1) throw Error(Errc::shape_mismatch, "query vector: expected exactly d_L floats");
        normalized = std::abs(vecs[0].norm() - 1.f) > 1e-4f;
        q.embedding = unit_or_throw(vecs[0], "query vector");
        q.tau = cfg.inference.tau;
        q.threshold = threshold;
        q.label = "embedding";
    }
    if (!a.canonical.empty()) {
        q.canonical.clear();
        for (auto& v : read_vectors(resolve_path(a.canonical), scene.d_language, "canonical"))
            q.canonical.push_back(unit_or_throw(v, "canonical"));
    } else if (a.object_id < 0) {
        q.canonical = default_canonicals(scene, q.embedding, a.common.seed);
    }
    if (!a.label.empty()) q.label = a.label;
    q.validate(scene.d_language);

    const auto start = Clock::now();
    const InstanceIndex index(scene);
    const RefinementResult r = refine(scene, q, index);
    const double elapsed = seconds_since(start);

    json regions = json::array();
    for (const auto& reg : r.regions) {
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const auto m : reg.members) centroid += scene.positions.row(m).cast<double>().transpose();
        centroid /= static_cast<double>(reg.members.size());
        regions.push_back({{"center", reg.center},
                           {"center_relevance", reg.center_relevance},
                           {"size", reg.members.size()},
                           {"centroid", {centroid.x(), centroid.y(), centroid.z()}},
                           {"score", reg.score ? json(*reg.score) : json(nullptr)},
                           {"accepted", reg.accepted}});
    }
    json result = {{"command", "query"},
                   {"seed", a.common.seed},
                   {"label", q.label},
                   {"tau", q.tau},
                   {"similarity_threshold", r.similarity_threshold},
                   {"similarity_auto", q.threshold.automatic},
                   {"query_normalized", normalized},
                   {"canonical_count", q.canonical.size()},
                   {"empty_seeds", r.empty_seeds},
                   {"seeds", index_list(r.seeds)},
                   {"seed_order", index_list(r.seed_order)},
                   {"regions", regions},
                   {"skipped", index_list(r.skipped)},
                   {"final", index_list(r.final)},
                   {"elapsed_s", timing(a.common.deterministic, elapsed)}};
    fs::create_directories(out);
    write_json(out / "result.json", result);
    if (a.export_ply) write_ply(out / "selection.ply", scene, r.final);
    std::cout << "query: " << r.seeds.size() << " seeds, " << r.accepted_regions().size() << " accepted regions, "
              << r.final.size() << " gaussians -> " << (out / "result.json").string() << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    Common common;
    std::string scene;
    std::string out;
    std::string cases;
    std::string modes = "instance_only,language_only,collaborative";
    std::string threshold = "0.8";
    bool eval_2d = false;
};

std::vector<QueryCase> read_cases(const fs::path& path, const GaussianScene& scene, const PipelineConfig& cfg,
                                  std::uint64_t seed) {
    json doc;
    try {
        doc = json::parse(read_text(path, "cases"));
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "cases: " + std::string(e.what()));
    }
    if (!doc.contains("cases") || !doc["cases"].is_array())
        throw Error(Errc::invalid_argument, "cases: expected an object with a \"cases\" array");
    const bool masks = cfg.eval.benchmark.eval_2d;
    std::vector<QueryCase> cases;
    std::size_t k = 0;
    for (const auto& item : doc["cases"]) {
        const std::string where = "cases[" + std::to_string(k++) + "]";
        QueryCase c;
        try {
            if (item.contains("object_id")) {
                const auto id = item["object_id"].get<ObjectId>();
                c.query = make_object_query(scene, id, seed + id, cfg.inference.tau, cfg.inference.threshold);
                c.gt_gaussians = item.contains("gt") ? item["gt"].get<std::vector<std::uint32_t>>()
                                                     : scene.gaussians_of_object(id);
            } else {
                const auto e = item.at("embedding").get<std::vector<float>>();
                if (static_cast<int>(e.size()) != scene.d_language)
                    throw Error(Errc::shape_mismatch, where + ": embedding length != d_L");
                c.query.embedding =
                    unit_or_throw(Eigen::Map<const Eigen::VectorXf>(e.data(), scene.d_language), where);
                if (item.contains("canonical")) {
                    for (const auto& cv : item["canonical"].get<std::vector<std::vector<float>>>()) {
                        if (static_cast<int>(cv.size()) != scene.d_language)
                            throw Error(Errc::shape_mismatch, where + ": canonical length != d_L");
                        c.query.canonical.push_back(
                            unit_or_throw(Eigen::Map<const Eigen::VectorXf>(cv.data(), scene.d_language), where));
                    }
                } else {
                    c.query.canonical = default_canonicals(scene, c.query.embedding, seed + k);
                }
                c.query.tau = cfg.inference.tau;
                c.query.threshold = cfg.inference.threshold;
                c.gt_gaussians = item.at("gt").get<std::vector<std::uint32_t>>();
            }
            c.query.label = c.label = item.value("label", c.query.label.empty() ? where : c.query.label);
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_argument, where + ": " + e.what());
        }
        for (const auto g : c.gt_gaussians)
            if (g >= scene.size()) throw Error(Errc::invalid_argument, where + ": gt index out of range");
        if (masks)
            for (const auto& view : scene.views)
                c.gt_masks.push_back(
                    render_selection_mask(scene, c.gt_gaussians, view.camera, 0.5, cfg.eval.benchmark.raster));
        cases.push_back(std::move(c));
    }
    if (cases.empty()) throw Error(Errc::invalid_argument, "cases: no cases");
    return cases;
}

void cmd_eval(EvalArgs& a, Overrides& ov, CLI::Option* modes_opt, CLI::Option* threshold_opt) {
    set_thread_count(a.common.threads);
    PipelineConfig cfg = ov.resolve(a.common.config);
    if (modes_opt->count() > 0) cfg.eval.modes = parse_mode_list(a.modes);
    if (threshold_opt->count() > 0) cfg.inference.threshold = parse_threshold(a.threshold, cfg.inference.threshold);
    cfg.eval.benchmark.seed = a.common.seed;
    if (a.eval_2d) cfg.eval.benchmark.eval_2d = true;
    const fs::path in = require_scene_dir(a.scene);
    const fs::path out = resolve_path(a.out);
    if (!a.cases.empty() && !fs::exists(resolve_path(a.cases)))
        throw Error(Errc::missing_file, "cases file " + a.cases + " not found");
    GaussianScene scene = load_scene(in);
    require_mapped(scene, "eval");

    const auto cases = a.cases.empty()
                           ? make_object_cases(scene, a.common.seed, cfg.inference.tau, cfg.inference.threshold,
                                               cfg.eval.benchmark.eval_2d, cfg.eval.benchmark.raster)
                           : read_cases(resolve_path(a.cases), scene, cfg, a.common.seed);
    const auto reports = run_benchmark(scene, cases, cfg.eval.modes, cfg.eval.benchmark);
    const bool with_timing = !a.common.deterministic;
    json doc = json::parse(report_json(reports, with_timing));
    doc["command"] = "eval";
    doc["seed"] = a.common.seed;
    doc["cases"] = cases.size();
    doc["tau"] = cfg.inference.tau;
    doc["similarity_threshold"] =
        cfg.inference.threshold.automatic ? json("auto") : json(cfg.inference.threshold.value);
    doc["mapper"] = scene.stage.mapped;
    fs::create_directories(out);
    write_json(out / "report.json", doc);
    const std::string table = report_table(reports, with_timing);
    write_text(out / "report.txt", table);
    std::cout << table;
}

} // namespace

int exit_status(int errc_value) { return 10 + errc_value; }

int run_cli(int argc, char** argv) {
    CLI::App app{"splatseg: collaborative instance/language Gaussian segmentation pipeline"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    Overrides ov;

    // gen
    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a synthetic ground-truth scene");
    add_common(g, gen.common);
    g->add_option("--out", gen.out, "scene directory")->required();
    g->add_flag("--overwrite", gen.overwrite, "replace an existing scene in --out");
    ov.bind(g, "--objects", [](PipelineConfig& c) -> int& { return c.scene.num_objects; }, "number of objects")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--gaussians-per-object", [](PipelineConfig& c) -> int& { return c.scene.gaussians_per_object; },
            "Gaussians per object")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--d-instance", [](PipelineConfig& c) -> int& { return c.scene.d_instance; },
            "instance feature dimension (default 16)")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--d-language", [](PipelineConfig& c) -> int& { return c.scene.d_language; },
            "language embedding dimension")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--views", [](PipelineConfig& c) -> int& { return c.scene.num_views; }, "number of views")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--image-size", [](PipelineConfig& c) -> int& { return c.scene.image_size; }, "view width and height")
        ->check(CLI::PositiveNumber);
    ov.bind(g, "--background", [](PipelineConfig& c) -> int& { return c.scene.background_gaussians; },
            "unlabeled clutter Gaussians")
        ->check(CLI::NonNegativeNumber);
    ov.bind(g, "--language-noise", [](PipelineConfig& c) -> double& { return c.scene.language_noise; },
            "std of noise on each view's segment embedding")
        ->check(CLI::NonNegativeNumber);
    ov.bind(g, "--cluster-radius", [](PipelineConfig& c) -> double& { return c.scene.cluster_radius; },
            "object blob radius")
        ->check(CLI::PositiveNumber);
    g->callback([&] { cmd_gen(gen, ov); });

    // train
    TrainArgs train;
    auto* t = app.add_subcommand("train", "optimize the instance field contrastively");
    add_common(t, train.common);
    t->add_option("--scene", train.scene, "input scene directory")->required();
    t->add_option("--out", train.out, "output scene directory (default: --scene)");
    auto* steps = ov.bind(t, "--steps", [](PipelineConfig& c) -> int& { return c.train.steps; },
                          "optimization steps (default 30000)")
                      ->check(CLI::PositiveNumber);
    t->add_option("--preset", train.preset, "fast = 3000, medium = 6000, full = 30000 steps")
        ->check(CLI::IsMember({"fast", "medium", "full"}))
        ->excludes(steps);
    ov.bind(t, "--samples-per-segment", [](PipelineConfig& c) -> int& { return c.train.samples_per_segment; },
            "pixels sampled per segment per step")
        ->check(CLI::PositiveNumber);
    ov.bind(t, "--lr", [](PipelineConfig& c) -> double& { return c.train.learning_rate; },
            "learning rate (3D-GS feature default 2.5e-3)")
        ->check(CLI::PositiveNumber);
    auto* optimizer = t->add_option("--optimizer", train.optimizer, "adam or sgd (default adam)")
                          ->check(CLI::IsMember({"adam", "sgd"}));
    t->add_flag("--quiet", train.quiet, "suppress the progress line");
    t->callback([&] { cmd_train(train, ov, steps, optimizer); });

    // map
    MapArgs map;
    auto* m = app.add_subcommand("map", "build the instance-to-language mapping and materialize the language field");
    add_common(m, map.common);
    m->add_option("--scene", map.scene, "input scene directory")->required();
    m->add_option("--out", map.out, "output scene directory (default: --scene)");
    ov.bind(m, "--mapper", [](PipelineConfig& c) -> std::string& { return c.mapper.kind; }, "kernel or mlp")
        ->check(CLI::IsMember({"kernel", "mlp"}));
    ov.bind(m, "--sigma", [](PipelineConfig& c) -> double& { return c.mapper.sigma; },
            "kernel bandwidth (default 0.1)")
        ->check(CLI::PositiveNumber);
    ov.bind(m, "--max-pairs", [](PipelineConfig& c) -> std::size_t& { return c.mapper.max_pairs; },
            "kernel pairs retained (seeded subsample above this)")
        ->check(CLI::PositiveNumber);
    ov.bind(m, "--min-pixels", [](PipelineConfig& c) -> int& { return c.mapper.pairs.min_pixels; },
            "smallest segment used as a training pair")
        ->check(CLI::PositiveNumber);
    ov.bind(m, "--mlp-steps", [](PipelineConfig& c) -> int& { return c.mapper.mlp.steps; },
            "MLP training steps (default 30000)")
        ->check(CLI::PositiveNumber);
    ov.bind(m, "--mlp-lr", [](PipelineConfig& c) -> double& { return c.mapper.mlp.learning_rate; }, "MLP learning rate")
        ->check(CLI::PositiveNumber);
    ov.bind(m, "--mlp-hidden", [](PipelineConfig& c) -> int& { return c.mapper.mlp.hidden; },
            "MLP hidden width (default 256)")
        ->check(CLI::PositiveNumber);
    m->callback([&] { cmd_map(map, ov); });

    // query
    QueryArgs query;
    auto* q = app.add_subcommand("query", "segment the Gaussians matching one embedding");
    add_common(q, query.common);
    q->add_option("--scene", query.scene, "mapped scene directory")->required();
    q->add_option("--out", query.out, "output directory for result.json")->required();
    auto* qv = q->add_option("--query-vec", query.query_vec, "raw little-endian float32 file with d_L values");
    auto* qo = q->add_option("--query-object-id", query.object_id, "use a vocabulary object's embedding");
    qv->excludes(qo);
    qo->excludes(qv);
    q->add_option("--canonical", query.canonical, "float32 file of K x d_L canonical vectors");
    ov.bind(q, "--tau", [](PipelineConfig& c) -> double& { return c.inference.tau; },
            "relevance threshold (default 0.5)")
        ->check(CLI::Range(0.0, 1.0));
    auto* qt = q->add_option("--T,--similarity", query.threshold, "expansion cosine threshold or 'auto'");
    q->add_option("--label", query.label, "label recorded in the result");
    q->add_flag("--export-ply", query.export_ply, "also write selection.ply (ASCII x y z r g b)");
    q->callback([&] {
        if (qv->count() == 0 && qo->count() == 0)
            throw Error(Errc::invalid_argument, "query: one of --query-vec or --query-object-id is required");
        cmd_query(query, ov, qt);
    });

    // eval
    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "run the segmentation benchmark");
    add_common(e, ev.common);
    e->add_option("--scene", ev.scene, "mapped scene directory")->required();
    e->add_option("--out", ev.out, "output directory for report.json and report.txt")->required();
    e->add_option("--cases", ev.cases, "JSON cases file (default: one case per vocabulary object)");
    auto* modes = e->add_option("--modes", ev.modes, "comma separated benchmark modes");
    ov.bind(e, "--tau", [](PipelineConfig& c) -> double& { return c.inference.tau; },
            "relevance threshold (default 0.5)")
        ->check(CLI::Range(0.0, 1.0));
    auto* et = e->add_option("--T,--similarity", ev.threshold, "expansion cosine threshold or 'auto'");
    ov.bind(e, "--acc-threshold", [](PipelineConfig& c) -> double& { return c.eval.benchmark.acc_threshold; },
            "IoU counted as a successful localization for mAcc");
    ov.bind(e, "--kmeans-k", [](PipelineConfig& c) -> int& { return c.eval.benchmark.kmeans_k; },
            "clusters for instance_only (0 = vocabulary size)");
    ov.bind(e, "--kmeans-restarts", [](PipelineConfig& c) -> int& { return c.eval.benchmark.kmeans_restarts; },
            "k-means restarts");
    e->add_flag("--eval-2d", ev.eval_2d, "also score rendered 2D masks in every view");
    e->callback([&] { cmd_eval(ev, ov, modes, et); });

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& err) {
            if (err.get_exit_code() == 0) return app.exit(err);
            std::string msg = err.what();
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            std::cerr << "error: usage: " << msg << "\n";
            return 2;
        }
    } catch (const Error& err) {
        std::string msg = err.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: " << to_string(err.code()) << ": " << msg << "\n";
        return exit_status(static_cast<int>(err.code()));
    } catch (const std::exception& err) {
        std::cerr << "error: internal: " << err.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace splatseg
