/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

// Serial reference kernels against their OpenMP versions.

#include "vgssl/kernels.hpp"
#include "vgssl/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace vgssl;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal();
    }
    return v;
}

template <bool Parallel> void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1);
    const auto b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::omp::matmul(a, b, c, n, n, n);
        } else {
            kernels::serial::matmul(a, b, c, n, n, n);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel> void bm_pairwise_l2(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const std::size_t n = 1000;
    const std::size_t d = 64;
    const auto a = random_values(m * d, 3);
    const auto b = random_values(n * d, 4);
    std::vector<double> out(m * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::omp::pairwise_l2(a, b, out, m, n, d);
        } else {
            kernels::serial::pairwise_l2(a, b, out, m, n, d);
        }
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * static_cast<std::int64_t>(m * n));
}

template <bool Parallel> void bm_topk(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const std::size_t n = 5000;
    const auto dist = random_values(m * n, 5);
    for (auto _ : state) {
        auto result = Parallel ? kernels::omp::topk_rows(dist, m, n, 10) : kernels::serial::topk_rows(dist, m, n, 10);
        benchmark::DoNotOptimize(result.data());
    }
}

void thread_setup(const benchmark::State&) { kernels::configure_threads(); }

} // namespace

BENCHMARK(bm_matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<true>)->Name("matmul/omp")->Arg(64)->Arg(256)->Setup(thread_setup);
BENCHMARK(bm_pairwise_l2<false>)->Name("pairwise_l2/serial")->Arg(10)->Arg(100);
BENCHMARK(bm_pairwise_l2<true>)->Name("pairwise_l2/omp")->Arg(10)->Arg(100)->Setup(thread_setup);
BENCHMARK(bm_topk<false>)->Name("topk/serial")->Arg(10)->Arg(100);
BENCHMARK(bm_topk<true>)->Name("topk/omp")->Arg(10)->Arg(100)->Setup(thread_setup);

BENCHMARK_MAIN();
