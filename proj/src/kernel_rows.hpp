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

#pragma once

// Per-output-row bodies shared by the serial and OpenMP kernels. Keeping one
// definition guarantees both variants accumulate in the same order.

#include "vgssl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vgssl::kernels::detail {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                       std::size_t n) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] += av * brow[j];
        }
    }
}

inline void matmul_bt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                          std::size_t n) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            acc += arow[p] * brow[p];
        }
        c[i * n + j] = acc;
    }
}

inline void matmul_at_row(const double* a, const double* b, double* c, std::size_t p, std::size_t m,
                          std::size_t k, std::size_t n) {
    double* crow = c + p * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double av = a[i * k + p];
        const double* brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] += av * brow[j];
        }
    }
}

inline void pairwise_l2_row(const double* a, const double* b, double* out, std::size_t i, std::size_t n,
                            std::size_t d) {
    const double* arow = a + i * d;
    for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * d;
        double acc = 0.0;
        for (std::size_t p = 0; p < d; ++p) {
            const double diff = arow[p] - brow[p];
            acc += diff * diff;
        }
        out[i * n + j] = std::sqrt(acc);
    }
}

inline std::vector<Neighbor> topk_row(const double* dist, std::size_t i, std::size_t n, std::size_t k) {
    std::vector<Neighbor> row(n);
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = Neighbor{j, dist[i * n + j]};
    }
    const auto kk = std::min(k, n);
    const auto less = [](const Neighbor& x, const Neighbor& y) {
        return x.distance < y.distance || (x.distance == y.distance && x.index < y.index);
    };
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(kk), row.end(), less);
    row.resize(kk);
    return row;
}

} // namespace vgssl::kernels::detail
