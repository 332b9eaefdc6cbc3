// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "lepo/cli.hpp"

int main(int argc, char** argv) { return lepo::cli::run(argc, argv, std::cout, std::cerr); }
