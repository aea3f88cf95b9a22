// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace lrsms {

// Exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitDivergence = 3,
  kExitCorrupt = 4,
  kExitAllDiverged = 5,
};

// Entry point of the lrsms command-line tool.
int run_cli(int argc, char** argv);

}  // namespace lrsms
