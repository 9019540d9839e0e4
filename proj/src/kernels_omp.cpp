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

#include "kernel_rows.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace vgssl::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1U << 14;

bool go_parallel(std::size_t rows, std::size_t work) {
    return rows > 1 && work >= kParallelThreshold && thread_count() > 1 && !omp_in_parallel();
}

} // namespace

void configure_threads(int requested) {
    if (requested <= 0) {
        if (const char* env = std::getenv("VGSSL_THREADS")) {
            try {
                requested = std::stoi(env);
            } catch (const std::exception&) {
                requested = 0;
            }
        }
    }
    if (requested > 0) {
        omp_set_num_threads(requested);
    }
}

int thread_count() { return omp_get_max_threads(); }

namespace omp {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m, m * k * n))
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        detail::matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
    }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m, m * k * n))
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        detail::matmul_bt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
    }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (go_parallel(k, m * k * n))
    for (std::ptrdiff_t p = 0; p < rows; ++p) {
        detail::matmul_at_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(p), m, k, n);
    }
}

void pairwise_l2(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t n, std::size_t d) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m, m * n * d))
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        detail::pairwise_l2_row(a.data(), b.data(), out.data(), static_cast<std::size_t>(i), n, d);
    }
}

std::vector<std::vector<Neighbor>> topk_rows(std::span<const double> dist, std::size_t m, std::size_t n,
                                             std::size_t k) {
    std::vector<std::vector<Neighbor>> result(m);
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(dynamic, 8) if (go_parallel(m, m * n * 8))
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        result[static_cast<std::size_t>(i)] = detail::topk_row(dist.data(), static_cast<std::size_t>(i), n, k);
    }
    return result;
}

} // namespace omp
} // namespace vgssl::kernels
