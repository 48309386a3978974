// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/cli.hpp"

int main(int argc, char** argv) { return splatseg::run_cli(argc, argv); }
