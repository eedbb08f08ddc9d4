// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>
BENCHMARK_MAIN();
