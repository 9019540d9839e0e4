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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vgssl/errors.hpp"
#include "vgssl/rng.hpp"
#include "vgssl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

using namespace vgssl;
using namespace vgssl::sampling;
using geo::GeoDataset;

namespace {

GeoDataset dataset(std::size_t places, std::size_t per_place, double qf, std::uint64_t seed = 1) {
    geo::SynthConfig sc;
    sc.seed = seed;
    sc.n_places = places;
    sc.db_per_place = per_place;
    sc.query_fraction = qf;
    sc.feature_dim = 6;
    return geo::synth_dataset(sc);
}

EmbedFn feature_embed(const GeoDataset& ds) {
    return [&ds](std::span<const SampleId> ids) {
        ad::Tensor out(ad::Shape{ids.size(), ds.feature_dim()});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& f = ds.sample(ids[i]).features;
            std::copy(f.begin(), f.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * f.size()));
        }
        return out;
    };
}

std::vector<double> unit(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    std::vector<double> out;
    for (double x : v) {
        out.push_back(x / n);
    }
    return out;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(acc);
}

} // namespace

TEST_SUITE("build_pairs") {
    TEST_CASE("eight queries with eta 0.25 give two identical negatives") {
        const auto ds = dataset(20, 4, 0.5);
        const auto pairs = build_pairs(ds, 8, 0.25, 3);
        CHECK(pairs.size() == 10);
        CHECK(std::count_if(pairs.begin(), pairs.end(),
                            [](const Pair& p) { return p.kind == PairKind::IdenticalNegative; }) == 2);
    }

    TEST_CASE("eta 0 produces no identical negatives") {
        const auto ds = dataset(20, 4, 0.5);
        for (const auto& p : build_pairs(ds, 10, 0.0, 3)) {
            CHECK(p.kind == PairKind::QueryPositive);
        }
    }

    TEST_CASE("one hundred queries at eta 1 never reuse a positive partner") {
        const auto ds = dataset(250, 2, 0.4);
        const auto pairs = build_pairs(ds, 100, 1.0, 5);
        std::set<SampleId> partners;
        std::vector<SampleId> negatives;
        for (const auto& p : pairs) {
            if (p.kind == PairKind::QueryPositive) {
                partners.insert(p.partner_id);
            } else {
                negatives.push_back(p.anchor_id);
            }
        }
        CHECK(negatives.size() == 100);
        for (auto id : negatives) {
            CHECK_FALSE(partners.contains(id));
        }
    }

    TEST_CASE("pair contracts hold over randomized calls") {
        const auto ds = dataset(30, 3, 0.5, 8);
        const auto hoods = compute_neighborhoods(ds);
        Rng rng(12);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t m_q = rng.below(16);
            const double eta = 0.25 * static_cast<double>(rng.below(9));
            const std::uint64_t seed = rng.next_u64();
            const auto pairs = build_pairs(ds, hoods, m_q, eta, seed);
            CHECK(pairs.size() == m_q + static_cast<std::size_t>(round_half_even(eta * static_cast<double>(m_q))));
            CHECK(pairs == build_pairs(ds, hoods, m_q, eta, seed));

            std::set<SampleId> drawn_positive_sets;
            std::set<SampleId> anchors;
            for (const auto& p : pairs) {
                if (p.kind == PairKind::QueryPositive) {
                    CHECK(ds.sample(p.anchor_id).role == geo::Role::Query);
                    const auto pos = geo::positive_set(ds.sample(p.anchor_id), ds);
                    CHECK(std::binary_search(pos.begin(), pos.end(), p.partner_id));
                    drawn_positive_sets.insert(pos.begin(), pos.end());
                    CHECK(anchors.insert(p.anchor_id).second);
                }
            }
            std::set<SampleId> negatives;
            for (const auto& p : pairs) {
                if (p.kind == PairKind::IdenticalNegative) {
                    CHECK(p.anchor_id == p.partner_id);
                    CHECK_FALSE(drawn_positive_sets.contains(p.anchor_id));
                    CHECK(negatives.insert(p.anchor_id).second);
                }
            }
        }
    }

    TEST_CASE("shortfalls are named") {
        const auto ds = dataset(10, 2, 0.5);
        CHECK_THROWS_WITH_AS(build_pairs(ds, 6, 0.0, 1), doctest::Contains("only 5 queries"), SamplingError);
        // 5 queries take 10 of the 20 database samples as positives.
        CHECK_THROWS_WITH_AS(build_pairs(ds, 5, 2.5, 1), doctest::Contains("only 10"), SamplingError);
        CHECK_THROWS_AS(build_pairs(ds, 2, -1.0, 1), std::invalid_argument);
    }

    TEST_CASE("queries with empty positive sets are never drawn") {
        auto ds = dataset(6, 2, 1.0);
        ds.queries[0].position = geo::Position::planar(-1000.0, -1000.0);
        ds.reindex();
        for (std::uint64_t s = 0; s < 20; ++s) {
            for (const auto& p : build_pairs(ds, 5, 0.0, s)) {
                CHECK(p.anchor_id != ds.queries[0].id);
            }
        }
        CHECK_THROWS_AS(build_pairs(ds, 6, 0.0, 1), SamplingError);
    }
}

TEST_SUITE("hardest_negative") {
    TEST_CASE("single candidate") {
        const std::vector<double> q{1.0, 0.0};
        const std::vector<double> a{0.3, 0.9};
        const std::vector<Candidate> c{{42, a}};
        CHECK(hardest_negative(q, c) == 42);
    }

    TEST_CASE("nearest after normalization") {
        const std::vector<double> q{1.0, 0.0};
        const std::vector<double> a{1.0, 0.1};
        const std::vector<double> b{0.0, 1.0};
        const std::vector<Candidate> c{{1, b}, {2, a}};
        CHECK(hardest_negative(q, c) == 2);
    }

    TEST_CASE("ties go to the smaller id") {
        const std::vector<double> q{1.0, 0.0};
        const std::vector<double> a{0.0, 1.0};
        const std::vector<double> b{0.0, -1.0};
        const std::vector<Candidate> c{{9, a}, {4, b}};
        CHECK(hardest_negative(q, c) == 4);
    }

    TEST_CASE("errors") {
        const std::vector<double> q{1.0, 0.0};
        CHECK_THROWS_AS(hardest_negative(q, {}), std::invalid_argument);
        const std::vector<double> bad{1.0, 0.0, 0.0};
        const std::vector<Candidate> c{{1, bad}};
        CHECK_THROWS_AS(hardest_negative(q, c), std::invalid_argument);
    }
}

TEST_SUITE("mine_triplets") {
    TEST_CASE("random mining embeds nothing") {
        const auto ds = dataset(20, 4, 0.5);
        cost::CostLedger ledger;
        int calls = 0;
        const EmbedFn counting = [&](std::span<const SampleId> ids) {
            ++calls;
            return ad::Tensor(ad::Shape{ids.size(), 1}, 1.0);
        };
        const auto t = mine_triplets(ds, 10, {MiningMode::Random, 0}, counting, 1, ledger);
        CHECK(t.size() == 10);
        CHECK(calls == 0);
        CHECK(ledger.extractions == 0);
        CHECK(ledger.comparisons == 0);
    }

    TEST_CASE("full mining over 10 queries and 100 database samples") {
        const auto ds = dataset(20, 5, 0.5);
        REQUIRE(ds.queries.size() == 10);
        REQUIRE(ds.database.size() == 100);
        cost::CostLedger ledger;
        const auto t = mine_triplets(ds, 10, {MiningMode::FullHNM, 0}, feature_embed(ds), 2, ledger);
        CHECK(t.size() == 10);
        std::uint64_t negatives = 0;
        for (const auto& q : ds.queries) {
            negatives += geo::negative_set(q, ds).size();
        }
        CHECK(ledger.comparisons == negatives);
        CHECK(ledger.comparisons == 10 * 95);
        CHECK(ledger.extractions == 110);
        CHECK(ledger.peak_cached == 110);
    }

    TEST_CASE("partial mining compares against at most the pool") {
        const auto ds = dataset(20, 5, 0.5);
        cost::CostLedger ledger;
        const auto t = mine_triplets(ds, 10, {MiningMode::PartialHNM, 20}, feature_embed(ds), 2, ledger);
        CHECK(ledger.comparisons <= 200);
        std::set<SampleId> positives;
        for (const auto& x : t) {
            positives.insert(x.positive_id);
        }
        CHECK(ledger.extractions == 10 + 20 + positives.size());
        CHECK_THROWS_AS(mine_triplets(ds, 10, {MiningMode::PartialHNM, 0}, feature_embed(ds), 2, ledger),
                        std::invalid_argument);
    }

    TEST_CASE("full mining equals a brute-force argmin and is deterministic") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto ds = dataset(15, 3 + seed % 4, 0.6, seed);
            cost::CostLedger ledger;
            const auto t = mine_triplets(ds, ds.queries.size(), {MiningMode::FullHNM, 0}, feature_embed(ds), seed,
                                         ledger);
            cost::CostLedger again;
            CHECK(t == mine_triplets(ds, ds.queries.size(), {MiningMode::FullHNM, 0}, feature_embed(ds), seed,
                                     again));
            for (const auto& x : t) {
                const auto& q = ds.sample(x.query_id);
                const auto qn = unit(q.features);
                SampleId best = -1;
                double best_d = std::numeric_limits<double>::infinity();
                for (auto id : geo::negative_set(q, ds)) {
                    const double d = dist(qn, unit(ds.sample(id).features));
                    if (d < best_d || (d == best_d && id < best)) {
                        best = id;
                        best_d = d;
                    }
                }
                CHECK(x.negative_id == best);
                const auto pos = geo::positive_set(q, ds);
                CHECK(std::binary_search(pos.begin(), pos.end(), x.positive_id));
            }
        }
    }

    TEST_CASE("queries without positives are skipped and counted") {
        auto ds = dataset(8, 2, 1.0);
        ds.queries[3].position = geo::Position::planar(-5000.0, 0.0);
        ds.reindex();
        cost::CostLedger ledger;
        const auto t = mine_triplets(ds, ds.queries.size(), {MiningMode::Random, 0}, feature_embed(ds), 1, ledger);
        CHECK(t.size() == ds.queries.size() - 1);
        CHECK(ledger.skipped_queries == 1);
    }
}

TEST_CASE("pair preparation cost counts queries and distinct partners only") {
    const auto ds = dataset(20, 4, 0.5);
    const auto pairs = build_pairs(ds, 10, 1.0, 4);
    cost::CostLedger ledger;
    record_pair_preparation(pairs, ledger);
    CHECK(ledger.extractions == 20);
    CHECK(ledger.comparisons == 0);
    const auto verified = verify_pair_positives(ds, pairs, feature_embed(ds), ledger);
    CHECK(ledger.comparisons == 100);
    CHECK(verified <= 10);
}
