// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/eval.hpp"
#include "splatseg/inference.hpp"
#include "splatseg/ins2lang.hpp"
#include "splatseg/instance_field.hpp"
#include "splatseg/synthetic.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace splatseg {

struct MapperSettings {
    std::string kind = "kernel"; // kernel | mlp
    double sigma = 0.1;
    std::size_t max_pairs = kMaxKernelPairs;
    MlpConfig mlp;
    PairConfig pairs;
};

struct InferenceSettings {
    double tau = kDefaultTau;
    SimilarityThreshold threshold;
};

struct EvalSettings {
    std::vector<BenchmarkMode> modes = {BenchmarkMode::instance_only, BenchmarkMode::language_only,
                                        BenchmarkMode::collaborative};
    BenchmarkConfig benchmark;
};

/// Everything the command line can configure. Sections in the file map to
/// the members below; flags given on the command line override file values.
struct PipelineConfig {
    SceneSpec scene;
    TrainConfig train;
    MapperSettings mapper;
    InferenceSettings inference;
    EvalSettings eval;
};

/// Parses `key = value` lines grouped under [scene], [train], [mapper],
/// [inference] and [eval] headers onto `base`. `#` starts a comment.
/// Unknown sections or keys and malformed values raise Error(config).
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Every recognized key as "section.key", in file order.
std::vector<std::string> config_keys();

/// Comma separated list of mode names.
std::vector<BenchmarkMode> parse_mode_list(const std::string& text);

} // namespace splatseg
