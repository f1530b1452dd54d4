#include <benchmark/benchmark.h>

// The packaged benchmark_main archive carries LTO bytecode from another
// compiler build, so main lives here.
BENCHMARK_MAIN();
