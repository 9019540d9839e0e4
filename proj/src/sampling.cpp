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

#include "vgssl/sampling.hpp"

#include "vgssl/errors.hpp"
#include "vgssl/kernels.hpp"
#include "vgssl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace vgssl::sampling {

using geo::GeoDataset;

void MiningConfig::validate() const {
    if (mode == MiningMode::PartialHNM && pool_size < 1) {
        throw std::invalid_argument("partial mining needs pool_size >= 1");
    }
}

cost::PreparationMode preparation_mode(MiningMode mode) {
    switch (mode) {
    case MiningMode::FullHNM: return cost::PreparationMode::FullHNM;
    case MiningMode::PartialHNM: return cost::PreparationMode::PartialHNM;
    case MiningMode::Random: return cost::PreparationMode::Random;
    }
    return cost::PreparationMode::Random;
}

QueryNeighborhoods compute_neighborhoods(const GeoDataset& ds) {
    QueryNeighborhoods hoods;
    hoods.positives.resize(ds.queries.size());
    hoods.negatives.resize(ds.queries.size());
    for (std::size_t i = 0; i < ds.queries.size(); ++i) {
        hoods.positives[i] = geo::positive_set(ds.queries[i], ds);
        hoods.negatives[i] = geo::negative_set(ds.queries[i], ds);
    }
    return hoods;
}

std::vector<Pair> build_pairs(const GeoDataset& ds, std::size_t m_q, double eta, std::uint64_t rng_seed) {
    return build_pairs(ds, compute_neighborhoods(ds), m_q, eta, rng_seed);
}

std::vector<Pair> build_pairs(const GeoDataset& ds, const QueryNeighborhoods& hoods, std::size_t m_q, double eta,
                              std::uint64_t rng_seed) {
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw std::invalid_argument("database negative ratio eta must be finite and >= 0");
    }
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ds.queries.size(); ++i) {
        if (!hoods.positives[i].empty()) {
            eligible.push_back(i);
        }
    }
    if (m_q > eligible.size()) {
        throw SamplingError("build_pairs: asked for " + std::to_string(m_q) + " queries but only " +
                            std::to_string(eligible.size()) + " queries have a non-empty positive set");
    }
    Rng rng(rng_seed);
    const auto drawn = rng.sample(eligible, m_q);

    std::vector<Pair> pairs;
    std::unordered_set<SampleId> excluded;
    for (auto qi : drawn) {
        const auto& pos = hoods.positives[qi];
        const SampleId partner = pos[rng.below(pos.size())];
        pairs.push_back({ds.queries[qi].id, partner, PairKind::QueryPositive});
        excluded.insert(pos.begin(), pos.end());
    }

    const auto n_neg = static_cast<std::size_t>(round_half_even(eta * static_cast<double>(m_q)));
    if (n_neg > 0) {
        std::vector<SampleId> pool;
        for (const auto& s : ds.database) {
            if (!excluded.contains(s.id)) {
                pool.push_back(s.id);
            }
        }
        if (n_neg > pool.size()) {
            throw SamplingError("build_pairs: eta = " + std::to_string(eta) + " needs " + std::to_string(n_neg) +
                                " database negatives but only " + std::to_string(pool.size()) +
                                " lie outside the drawn queries' positive sets");
        }
        for (auto id : rng.sample(pool, n_neg)) {
            pairs.push_back({id, id, PairKind::IdenticalNegative});
        }
    }
    rng.shuffle(std::span<Pair>(pairs));
    return pairs;
}

SampleId hardest_negative(std::span<const double> query, std::span<const Candidate> candidates) {
    if (candidates.empty()) {
        throw std::invalid_argument("hardest_negative: no candidates");
    }
    const auto norm = [](std::span<const double> v) {
        double acc = 0.0;
        for (double x : v) {
            acc += x * x;
        }
        return std::sqrt(acc);
    };
    const double qn = norm(query);
    if (!(qn > 0.0)) {
        throw NumericError("hardest_negative: query embedding has zero norm");
    }
    SampleId best = 0;
    double best_dist = 0.0;
    bool first = true;
    for (const auto& c : candidates) {
        if (c.embedding.size() != query.size()) {
            throw std::invalid_argument("hardest_negative: candidate " + std::to_string(c.id) + " has dimension " +
                                        std::to_string(c.embedding.size()) + ", query has " +
                                        std::to_string(query.size()));
        }
        const double cn = norm(c.embedding);
        if (!(cn > 0.0)) {
            throw NumericError("hardest_negative: candidate " + std::to_string(c.id) + " has zero norm");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < query.size(); ++i) {
            const double d = query[i] / qn - c.embedding[i] / cn;
            acc += d * d;
        }
        const double dist = std::sqrt(acc);
        if (first || dist < best_dist || (dist == best_dist && c.id < best)) {
            best = c.id;
            best_dist = dist;
            first = false;
        }
    }
    return best;
}

namespace {

/// Embeds ids and L2-normalizes the rows.
ad::Tensor embed_normalized(const EmbedFn& embed, std::span<const SampleId> ids) {
    ad::Tensor out = embed(ids);
    if (out.rows() != ids.size()) {
        throw std::invalid_argument("embedding function returned " + std::to_string(out.rows()) + " rows for " +
                                    std::to_string(ids.size()) + " ids");
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < out.cols(); ++c) {
            acc += out(r, c) * out(r, c);
        }
        const double n = std::sqrt(acc);
        if (!(n > 0.0)) {
            throw NumericError("embedding of sample " + std::to_string(ids[r]) + " has zero norm");
        }
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) /= n;
        }
    }
    return out;
}

std::span<const double> row_of(const ad::Tensor& t, std::size_t r) {
    return t.data().subspan(r * t.cols(), t.cols());
}

} // namespace

std::vector<Triplet> mine_triplets(const GeoDataset& ds, std::size_t m_q, const MiningConfig& cfg,
                                   const EmbedFn& embed, std::uint64_t rng_seed, cost::CostLedger& ledger) {
    return mine_triplets(ds, compute_neighborhoods(ds), m_q, cfg, embed, rng_seed, ledger);
}

std::vector<Triplet> mine_triplets(const GeoDataset& ds, const QueryNeighborhoods& hoods, std::size_t m_q,
                                   const MiningConfig& cfg, const EmbedFn& embed, std::uint64_t rng_seed,
                                   cost::CostLedger& ledger) {
    cfg.validate();
    if (m_q > ds.queries.size()) {
        throw SamplingError("mine_triplets: asked for " + std::to_string(m_q) + " queries but the dataset has " +
                            std::to_string(ds.queries.size()));
    }
    Rng rng(rng_seed);
    std::vector<std::size_t> all(ds.queries.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> kept;
    for (auto qi : rng.sample(all, m_q)) {
        if (hoods.positives[qi].empty() || hoods.negatives[qi].empty()) {
            ++ledger.skipped_queries;
            continue;
        }
        kept.push_back(qi);
    }
    std::vector<Triplet> triplets(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto& pos = hoods.positives[kept[i]];
        triplets[i].query_id = ds.queries[kept[i]].id;
        triplets[i].positive_id = pos[rng.below(pos.size())];
    }

    if (cfg.mode == MiningMode::Random) {
        for (std::size_t i = 0; i < kept.size(); ++i) {
            const auto& neg = hoods.negatives[kept[i]];
            triplets[i].negative_id = neg[rng.below(neg.size())];
        }
        return triplets;
    }
    if (kept.empty()) {
        return triplets;
    }

    std::vector<SampleId> query_ids;
    for (const auto& t : triplets) {
        query_ids.push_back(t.query_id);
    }
    const ad::Tensor query_emb = embed_normalized(embed, query_ids);

    std::vector<SampleId> candidate_ids;
    if (cfg.mode == MiningMode::FullHNM) {
        for (const auto& s : ds.database) {
            candidate_ids.push_back(s.id);
        }
    } else {
        std::vector<SampleId> db_ids;
        for (const auto& s : ds.database) {
            db_ids.push_back(s.id);
        }
        candidate_ids = rng.sample(db_ids, std::min(cfg.pool_size, db_ids.size()));
        std::sort(candidate_ids.begin(), candidate_ids.end());
    }
    const ad::Tensor candidate_emb = embed_normalized(embed, candidate_ids);
    std::uint64_t extracted = query_ids.size() + candidate_ids.size();
    if (cfg.mode == MiningMode::PartialHNM) {
        // The partial cache also holds the chosen positives.
        std::set<SampleId> positives;
        for (const auto& t : triplets) {
            positives.insert(t.positive_id);
        }
        const std::vector<SampleId> positive_ids(positives.begin(), positives.end());
        (void)embed_normalized(embed, positive_ids);
        extracted += positive_ids.size();
    }
    ledger.extractions += extracted;
    ledger.note_cached(extracted);

    std::unordered_map<SampleId, std::size_t> row_of_candidate;
    for (std::size_t r = 0; r < candidate_ids.size(); ++r) {
        row_of_candidate[candidate_ids[r]] = r;
    }

    std::vector<std::uint64_t> comparisons(kept.size(), 0);
    std::vector<char> dropped(kept.size(), 0);
    const auto n_kept = static_cast<std::ptrdiff_t>(kept.size());
#pragma omp parallel for schedule(dynamic, 4) if (kernels::thread_count() > 1)
    for (std::ptrdiff_t ii = 0; ii < n_kept; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        std::vector<Candidate> candidates;
        for (auto id : hoods.negatives[kept[i]]) {
            const auto it = row_of_candidate.find(id);
            if (it != row_of_candidate.end()) {
                candidates.push_back({id, row_of(candidate_emb, it->second)});
            }
        }
        comparisons[i] = candidates.size();
        if (candidates.empty()) {
            dropped[i] = 1;
            continue;
        }
        triplets[i].negative_id = hardest_negative(row_of(query_emb, i), candidates);
    }

    std::vector<Triplet> result;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        ledger.comparisons += comparisons[i];
        if (dropped[i] != 0) {
            ++ledger.skipped_queries;
        } else {
            result.push_back(triplets[i]);
        }
    }
    return result;
}

void record_pair_preparation(std::span<const Pair> pairs, cost::CostLedger& ledger) {
    std::set<SampleId> queries;
    std::set<SampleId> partners;
    for (const auto& p : pairs) {
        if (p.kind == PairKind::QueryPositive) {
            queries.insert(p.anchor_id);
            partners.insert(p.partner_id);
        }
    }
    const std::uint64_t n = queries.size() + partners.size();
    ledger.extractions += n;
    ledger.note_cached(n);
}

std::size_t verify_pair_positives(const GeoDataset& ds, std::span<const Pair> pairs, const EmbedFn& embed,
                                  cost::CostLedger& ledger) {
    std::vector<SampleId> query_ids;
    std::set<SampleId> partner_set;
    for (const auto& p : pairs) {
        if (p.kind == PairKind::QueryPositive) {
            query_ids.push_back(p.anchor_id);
            partner_set.insert(p.partner_id);
        }
    }
    std::sort(query_ids.begin(), query_ids.end());
    query_ids.erase(std::unique(query_ids.begin(), query_ids.end()), query_ids.end());
    const std::vector<SampleId> partner_ids(partner_set.begin(), partner_set.end());
    if (query_ids.empty()) {
        return 0;
    }
    const ad::Tensor q = embed_normalized(embed, query_ids);
    const ad::Tensor k = embed_normalized(embed, partner_ids);
    std::vector<double> dist(query_ids.size() * partner_ids.size());
    kernels::pairwise_l2(q.data(), k.data(), dist, query_ids.size(), partner_ids.size(), q.cols());
    ledger.comparisons += query_ids.size() * partner_ids.size();
    const auto nearest = kernels::topk_rows(dist, query_ids.size(), partner_ids.size(), 1);

    std::size_t verified = 0;
    for (std::size_t i = 0; i < query_ids.size(); ++i) {
        const auto& query = ds.sample(query_ids[i]);
        const auto& partner = ds.sample(partner_ids[nearest[i].front().index]);
        if (geo::distance_m(query.position, partner.position) <= ds.r_pos) {
            ++verified;
        }
    }
    return verified;
}

} // namespace vgssl::sampling
