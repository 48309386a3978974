// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace splatseg {

/// Entry point of the `splatseg` tool (gen, train, map, query, eval).
/// Returns 0 on success. Failures print one line `error: <code>: <message>`
/// to stderr and return a nonzero status.
int run_cli(int argc, char** argv);

/// Exit status used for an error code (distinct per code, never 0).
int exit_status(int errc_value);

} // namespace splatseg
