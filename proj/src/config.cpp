// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/config.hpp"

#include "splatseg/error.hpp"
#include "splatseg/scene_io.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace splatseg {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw Error(Errc::config, key + ": malformed value '" + text + "'");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw Error(Errc::config, key + ": expected true or false, got '" + text + "'");
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

struct Entry {
    const char* name; // section.key
    Setter set;
};

template <class T, class Get>
Setter number(Get get) {
    return [get](PipelineConfig& c, const std::string& k, const std::string& v) { get(c) = parse_number<T>(k, v); };
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        {"scene.num_objects", number<int>([](PipelineConfig& c) -> int& { return c.scene.num_objects; })},
        {"scene.gaussians_per_object", number<int>([](PipelineConfig& c) -> int& { return c.scene.gaussians_per_object; })},
        {"scene.d_instance", number<int>([](PipelineConfig& c) -> int& { return c.scene.d_instance; })},
        {"scene.d_language", number<int>([](PipelineConfig& c) -> int& { return c.scene.d_language; })},
        {"scene.num_views", number<int>([](PipelineConfig& c) -> int& { return c.scene.num_views; })},
        {"scene.image_size", number<int>([](PipelineConfig& c) -> int& { return c.scene.image_size; })},
        {"scene.background_gaussians", number<int>([](PipelineConfig& c) -> int& { return c.scene.background_gaussians; })},
        {"scene.language_noise", number<double>([](PipelineConfig& c) -> double& { return c.scene.language_noise; })},
        {"scene.cluster_radius", number<double>([](PipelineConfig& c) -> double& { return c.scene.cluster_radius; })},
        {"train.steps", number<int>([](PipelineConfig& c) -> int& { return c.train.steps; })},
        {"train.samples_per_segment", number<int>([](PipelineConfig& c) -> int& { return c.train.samples_per_segment; })},
        {"train.learning_rate", number<double>([](PipelineConfig& c) -> double& { return c.train.learning_rate; })},
        {"train.optimizer",
         [](PipelineConfig& c, const std::string& k, const std::string& v) {
             if (v == "adam") c.train.optimizer = OptimizerKind::adam;
             else if (v == "sgd") c.train.optimizer = OptimizerKind::sgd;
             else throw Error(Errc::config, k + ": expected adam or sgd, got '" + v + "'");
         }},
        {"mapper.kind",
         [](PipelineConfig& c, const std::string& k, const std::string& v) {
             if (v != "kernel" && v != "mlp") throw Error(Errc::config, k + ": expected kernel or mlp, got '" + v + "'");
             c.mapper.kind = v;
         }},
        {"mapper.sigma", number<double>([](PipelineConfig& c) -> double& { return c.mapper.sigma; })},
        {"mapper.max_pairs", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.mapper.max_pairs; })},
        {"mapper.min_pixels", number<int>([](PipelineConfig& c) -> int& { return c.mapper.pairs.min_pixels; })},
        {"mapper.mlp_steps", number<int>([](PipelineConfig& c) -> int& { return c.mapper.mlp.steps; })},
        {"mapper.mlp_learning_rate", number<double>([](PipelineConfig& c) -> double& { return c.mapper.mlp.learning_rate; })},
        {"mapper.mlp_hidden", number<int>([](PipelineConfig& c) -> int& { return c.mapper.mlp.hidden; })},
        {"inference.tau", number<double>([](PipelineConfig& c) -> double& { return c.inference.tau; })},
        {"inference.similarity",
         [](PipelineConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") {
                 c.inference.threshold.automatic = true;
             } else {
                 c.inference.threshold.automatic = false;
                 c.inference.threshold.value = parse_number<double>(k, v);
             }
         }},
        {"eval.modes", [](PipelineConfig& c, const std::string&, const std::string& v) { c.eval.modes = parse_mode_list(v); }},
        {"eval.acc_threshold", number<double>([](PipelineConfig& c) -> double& { return c.eval.benchmark.acc_threshold; })},
        {"eval.kmeans_k", number<int>([](PipelineConfig& c) -> int& { return c.eval.benchmark.kmeans_k; })},
        {"eval.kmeans_restarts", number<int>([](PipelineConfig& c) -> int& { return c.eval.benchmark.kmeans_restarts; })},
        {"eval.eval_2d",
         [](PipelineConfig& c, const std::string& k, const std::string& v) { c.eval.benchmark.eval_2d = parse_bool(k, v); }},
    };
    return table;
}

} // namespace

std::vector<BenchmarkMode> parse_mode_list(const std::string& text) {
    std::vector<BenchmarkMode> modes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            modes.push_back(parse_benchmark_mode(item));
        } catch (const Error& e) {
            throw Error(Errc::config, e.what());
        }
    }
    if (modes.empty()) throw Error(Errc::config, "mode list is empty");
    return modes;
}

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
    static const std::vector<std::string> sections = {"scene", "train", "mapper", "inference", "eval"};
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw Error(Errc::config, where + ": malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (std::find(sections.begin(), sections.end(), section) == sections.end())
                throw Error(Errc::config, where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(Errc::config, where + ": expected key = value");
        if (section.empty()) throw Error(Errc::config, where + ": key outside of a section");
        const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        const auto& table = entries();
        auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return key == e.name; });
        if (it == table.end()) throw Error(Errc::config, where + ": unknown key '" + key + "'");
        it->set(base, key, value);
    }
    return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    if (!std::filesystem::exists(path)) throw Error(Errc::missing_file, "config file " + path.string() + " not found");
    return parse_config(read_text(path, "config"), std::move(base));
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& e : entries()) keys.emplace_back(e.name);
    return keys;
}

} // namespace splatseg
