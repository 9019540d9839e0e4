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

namespace vgssl::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        detail::matmul_row(a.data(), b.data(), c.data(), i, k, n);
    }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        detail::matmul_bt_row(a.data(), b.data(), c.data(), i, k, n);
    }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        detail::matmul_at_row(a.data(), b.data(), c.data(), p, m, k, n);
    }
}

void pairwise_l2(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t n, std::size_t d) {
    for (std::size_t i = 0; i < m; ++i) {
        detail::pairwise_l2_row(a.data(), b.data(), out.data(), i, n, d);
    }
}

std::vector<std::vector<Neighbor>> topk_rows(std::span<const double> dist, std::size_t m, std::size_t n,
                                             std::size_t k) {
    std::vector<std::vector<Neighbor>> result(m);
    for (std::size_t i = 0; i < m; ++i) {
        result[i] = detail::topk_row(dist.data(), i, n, k);
    }
    return result;
}

} // namespace vgssl::kernels::serial
