// Copyright 2026 The lrsms Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrsms/cli.hpp"

int main(int argc, char** argv) { return lrsms::run_cli(argc, argv); }
