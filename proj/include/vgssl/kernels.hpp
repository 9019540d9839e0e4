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

#include <cstddef>
#include <span>
#include <vector>

// Dense kernels behind the tape, mining and retrieval hot loops.
//
// Every kernel has a serial reference in vgssl::kernels::serial and an OpenMP
// version in vgssl::kernels::omp. The OpenMP versions split work over output
// rows only; each output element is accumulated in the same order as the
// serial reference, so both produce bit-identical results for any thread
// count. The unqualified entry points dispatch to the OpenMP versions.

namespace vgssl::kernels {

/// A (candidate index, distance) pair as produced by top-k selection.
struct Neighbor {
    std::size_t index;
    double distance;
};

namespace serial {

/// c[m x n] = a[m x k] * b[k x n], all row-major.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);

/// c[m x n] = a[m x k] * b[n x k]^T.
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);

/// c[k x n] = a[m x k]^T * b[m x n].
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);

/// out[i x j] = Euclidean distance between row i of a[m x d] and row j of b[n x d].
void pairwise_l2(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t n, std::size_t d);

/// Per row of dist[m x n], the k smallest entries ordered by (distance, index).
std::vector<std::vector<Neighbor>> topk_rows(std::span<const double> dist, std::size_t m, std::size_t n,
                                             std::size_t k);

} // namespace serial

namespace omp {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void pairwise_l2(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t n, std::size_t d);
std::vector<std::vector<Neighbor>> topk_rows(std::span<const double> dist, std::size_t m, std::size_t n,
                                             std::size_t k);

} // namespace omp

using omp::matmul;
using omp::matmul_at;
using omp::matmul_bt;
using omp::pairwise_l2;
using omp::topk_rows;

/// Caps OpenMP worker threads. Reads VGSSL_THREADS when called with 0.
void configure_threads(int requested = 0);

/// Worker threads the OpenMP kernels will use.
int thread_count();

} // namespace vgssl::kernels
