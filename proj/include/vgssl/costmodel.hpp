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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Accounting of training-data preparation: how many embeddings are extracted,
// how many query-candidate distances are evaluated, and how many embeddings
// must be held at once. Counters count logical operations (one forward of one
// sample is one extraction), not FLOPs.

namespace vgssl::cost {

struct CostLedger {
    std::uint64_t extractions = 0;
    std::uint64_t comparisons = 0;
    std::uint64_t peak_cached = 0;
    /// Queries dropped by mining because their positive or negative set was empty.
    std::uint64_t skipped_queries = 0;

    void note_cached(std::uint64_t n) { peak_cached = n > peak_cached ? n : peak_cached; }
    /// Sums counts and keeps the larger peak.
    void merge(const CostLedger& other);
    bool operator==(const CostLedger&) const = default;
};

enum class PreparationMode { FullHNM, PartialHNM, Random, PairOnly };

std::string_view preparation_mode_name(PreparationMode mode);
PreparationMode parse_preparation_mode(std::string_view name);

/// Sizes that drive the closed-form cost.
struct CostInputs {
    std::uint64_t n_q = 0;  ///< queries prepared
    std::uint64_t n_k = 0;  ///< database size
    std::uint64_t n_kp = 0; ///< distinct positives embedded
    std::uint64_t n_kn = 0; ///< eligible negatives per query (full mining)
    std::uint64_t pool = 0; ///< negative pool size (partial mining)
    /// Pair-only: also match every query against every positive, mirroring the
    /// O(#queries * #positives) matching term.
    bool verify_positives = false;
};

/// Closed forms with unit constants:
///   FullHNM     extractions n_q + n_k, comparisons n_q * n_kn, cached n_q + n_k
///   PartialHNM  extractions n_q + pool + n_kp, comparisons n_q * pool, cached = extractions
///   Random      nothing
///   PairOnly    extractions n_q + n_kp, comparisons 0 (n_q * n_kp when verifying), cached = extractions
/// With n_q = 0 every counter is 0.
CostLedger predict_cost(PreparationMode mode, const CostInputs& in);

struct CounterCheck {
    std::string counter;
    std::uint64_t measured = 0;
    std::uint64_t predicted = 0;
    bool pass = false;
};

struct LedgerReport {
    bool pass = true;
    std::vector<CounterCheck> counters;

    /// One line per failing counter, empty when everything passed.
    std::string failures() const;
};

/// Passes iff every counter lies in [predicted * (1 - slack), predicted * (1 + slack)].
LedgerReport assert_ledger(const CostLedger& measured, const CostLedger& predicted, double slack);

} // namespace vgssl::cost
