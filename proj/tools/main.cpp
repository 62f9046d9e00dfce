// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return miner::cli::run(argc, argv); }
