// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatseg/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace splatseg {

inline constexpr int kSceneFormatVersion = 1;

/// Writes the scene container: manifest.json plus little-endian tensor files.
void save_scene(const GaussianScene& scene, const std::filesystem::path& dir);

/// Reads a scene container. Missing files, shape mismatches against the
/// manifest and non-finite values raise Error naming the offending field.
GaussianScene load_scene(const std::filesystem::path& dir);

// Raw tensor files: little-endian, row-major, no header.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
void write_u32(const std::filesystem::path& path, std::span<const std::uint32_t> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count, const std::string& field);
std::vector<std::uint32_t> read_u32(const std::filesystem::path& path, std::size_t expected_count,
                                    const std::string& field);

void write_matrix(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                          const std::string& field);

/// Writes bytes to a file atomically enough for our purposes (truncate + write).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path, const std::string& field);

} // namespace splatseg
