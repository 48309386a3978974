// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splatseg {

enum class Errc {
    invalid_argument,
    io,
    missing_file,
    shape_mismatch,
    non_finite,
    stage_order,
    config,
    no_supervision,
    degenerate,
};

/// Stable snake_case name, used as the machine-parsable prefix of CLI errors.
std::string_view to_string(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message);

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace splatseg
