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

#include "vgssl/autodiff.hpp"
#include "vgssl/costmodel.hpp"
#include "vgssl/geodata.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace vgssl::sampling {

using geo::SampleId;

enum class PairKind { QueryPositive, IdenticalNegative };

/// Two views fed to a pair loss. IdenticalNegative pairs repeat one database sample.
struct Pair {
    SampleId anchor_id = 0;
    SampleId partner_id = 0;
    PairKind kind = PairKind::QueryPositive;

    bool operator==(const Pair&) const = default;
};

struct Triplet {
    SampleId query_id = 0;
    SampleId positive_id = 0;
    SampleId negative_id = 0;

    bool operator==(const Triplet&) const = default;
};

enum class MiningMode { FullHNM, PartialHNM, Random };

struct MiningConfig {
    MiningMode mode = MiningMode::FullHNM;
    /// Negatives drawn per epoch for PartialHNM.
    std::size_t pool_size = 0;

    void validate() const;
};

cost::PreparationMode preparation_mode(MiningMode mode);

/// Positive and negative sets of every query, aligned with ds.queries.
struct QueryNeighborhoods {
    std::vector<std::vector<SampleId>> positives;
    std::vector<std::vector<SampleId>> negatives;
};

QueryNeighborhoods compute_neighborhoods(const geo::GeoDataset& ds);

/// Query-positive pairs plus identical-negative pairs at ratio eta.
///
/// Draws m_q queries (uniformly, without replacement) among those with a
/// non-empty positive set and one uniform positive for each. Then draws
/// round(eta * m_q) database samples (ties to even) that lie outside the
/// positive set of every drawn query and pairs each with itself. The result
/// is shuffled; everything is a pure function of rng_seed.
std::vector<Pair> build_pairs(const geo::GeoDataset& ds, std::size_t m_q, double eta, std::uint64_t rng_seed);
std::vector<Pair> build_pairs(const geo::GeoDataset& ds, const QueryNeighborhoods& hoods, std::size_t m_q,
                              double eta, std::uint64_t rng_seed);

/// Embeds samples by id; one output row per id.
using EmbedFn = std::function<ad::Tensor(std::span<const SampleId>)>;

/// Triplets for the margin-loss baseline.
///
/// Draws m_q queries; queries lacking positives or negatives are skipped and
/// counted in ledger.skipped_queries. Positives are uniform over the positive
/// set. FullHNM embeds the drawn queries and the whole database and takes the
/// nearest negative-eligible sample; PartialHNM does the same over one pool of
/// pool_size database samples drawn for the call; Random draws a uniform
/// negative without embedding anything.
std::vector<Triplet> mine_triplets(const geo::GeoDataset& ds, std::size_t m_q, const MiningConfig& cfg,
                                   const EmbedFn& embed, std::uint64_t rng_seed, cost::CostLedger& ledger);
std::vector<Triplet> mine_triplets(const geo::GeoDataset& ds, const QueryNeighborhoods& hoods, std::size_t m_q,
                                   const MiningConfig& cfg, const EmbedFn& embed, std::uint64_t rng_seed,
                                   cost::CostLedger& ledger);

struct Candidate {
    SampleId id = 0;
    std::span<const double> embedding;
};

/// Candidate minimizing the L2 distance between L2-normalized vectors; ties go to the smaller id.
SampleId hardest_negative(std::span<const double> query, std::span<const Candidate> candidates);

/// Extraction-phase cost of a pair batch: every query anchor and every
/// distinct positive partner is embedded once; nothing is matched.
void record_pair_preparation(std::span<const Pair> pairs, cost::CostLedger& ledger);

/// Optional matching pass for pair batches: compares every query with every
/// positive partner of the batch and counts those comparisons (the embeddings
/// themselves are already counted by record_pair_preparation). Returns how many
/// queries have their nearest partner inside their own positive set.
std::size_t verify_pair_positives(const geo::GeoDataset& ds, std::span<const Pair> pairs, const EmbedFn& embed,
                                  cost::CostLedger& ledger);

} // namespace vgssl::sampling
