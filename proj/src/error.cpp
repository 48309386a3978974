// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/error.hpp"

namespace splatseg {

std::string_view to_string(Errc code) {
    switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io: return "io";
    case Errc::missing_file: return "missing_file";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::stage_order: return "stage_order";
    case Errc::config: return "config";
    case Errc::no_supervision: return "no_supervision";
    case Errc::degenerate: return "degenerate";
    }
    return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

} // namespace splatseg
