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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "vgssl/costmodel.hpp"
#include "vgssl/gradcheck.hpp"
#include "vgssl/kernels.hpp"
#include "vgssl/losses.hpp"
#include "vgssl/mining_bench.hpp"
#include "vgssl/retrieval.hpp"
#include "vgssl/rng.hpp"
#include "vgssl/sampling.hpp"
#include "vgssl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace vgssl;
using loss::Method;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) {
                detail << "first failure: " << what << "; ";
            }
            pass = false;
        }
    }
};

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------

void gradient_correctness(Verdict& v) {
    const std::vector<Method> methods{Method::Triplet, Method::SimCLR,      Method::MoCov2, Method::BYOL,
                                      Method::SimSiam, Method::BarlowTwins, Method::VICReg};
    gradcheck::Options opts;
    opts.instances = 20;
    const auto start = std::chrono::steady_clock::now();
    const auto results = gradcheck::run_gradcheck(methods, opts);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    double worst = 0.0;
    for (const auto& r : results) {
        v.require(r.instances >= 20, std::string(loss::method_name(r.method)) + " ran too few instances");
        v.require(r.max_rel_error < 1e-4, std::string(loss::method_name(r.method)) + " relative error " +
                                              std::to_string(r.max_rel_error));
        worst = std::max(worst, r.max_rel_error);
    }
    v.require(opts.batch <= 8 && opts.embed_dim <= 16, "instance size out of range");
    v.require(seconds < 60.0, "runtime " + fixed(seconds, 1) + " s");
    v.detail << "7 methods x 20 instances, worst relative error " << worst << ", " << fixed(seconds, 1) << " s";
}

// ---------------------------------------------------------------------------

void loss_identities(Verdict& v) {
    using ad::Tensor;
    ad::Tape tape;
    {
        const auto q = tape.leaf(Tensor::from_rows({{0.6, 0.8}, {1.0, 0.0}}));
        const auto kn = tape.leaf(Tensor::from_rows({{-0.4, 0.8}, {0.0, 1.0}}));
        const double value = loss::triplet_margin_loss(q, q, kn, 0.1).item();
        v.require(value == 0.0, "triplet inactive hinge gave " + std::to_string(value));
    }
    Rng rng(2024);
    const auto random = [&](std::size_t r, std::size_t c) {
        Tensor t(ad::Shape{r, c});
        for (auto& x : t.data()) {
            x = rng.normal();
        }
        return t;
    };
    double pred_min = 4.0;
    double pred_max = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        ad::Tape t;
        const auto p = t.leaf(random(6, 5));
        const double same = loss::embedding_prediction_loss(p, p).item();
        v.require(std::abs(same) <= 1e-12, "embedding prediction pred=target gave " + std::to_string(same));
        const double other = loss::embedding_prediction_loss(p, t.leaf(random(6, 5))).item();
        pred_min = std::min(pred_min, other);
        pred_max = std::max(pred_max, other);
        v.require(other >= 0.0 && other <= 4.0, "embedding prediction out of [0, 4]");
    }
    {
        const double bt = loss::barlow_twins_loss(tape.constant(Tensor::identity(6)), 5e-3).item();
        v.require(bt == 0.0, "Barlow Twins at identity gave " + std::to_string(bt));
    }
    {
        const auto z = tape.leaf(Tensor::from_rows({{2.0, 2.0}, {-2.0, 2.0}, {2.0, -2.0}, {-2.0, -2.0}}));
        const double vic = loss::vicreg_loss(z, z, 25.0, 25.0, 1.0, 1.0).item();
        v.require(std::abs(vic) <= 1e-6, "VICReg zero case gave " + std::to_string(vic));
    }
    double worst_swap = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        ad::Tape t;
        const auto a = loss::l2_normalize_rows(t.leaf(random(2 + trial % 7, 4)));
        const auto b = loss::l2_normalize_rows(t.leaf(random(a.shape().rows, 4)));
        const double ab = loss::infonce_loss(a, b, 0.07, true).item();
        const double ba = loss::infonce_loss(b, a, 0.07, true).item();
        worst_swap = std::max(worst_swap, std::abs(ab - ba));
    }
    v.require(worst_swap <= 1e-12, "InfoNCE swap difference " + std::to_string(worst_swap));
    v.detail << "prediction loss range seen [" << fixed(pred_min) << ", " << fixed(pred_max)
             << "], InfoNCE swap difference " << worst_swap;
}

// ---------------------------------------------------------------------------

void sampler_contract(Verdict& v) {
    geo::SynthConfig sc;
    sc.seed = 77;
    sc.n_places = 60;
    sc.db_per_place = 4;
    sc.query_fraction = 0.5;
    sc.feature_dim = 4;
    const auto ds = geo::synth_dataset(sc);
    const auto hoods = sampling::compute_neighborhoods(ds);
    Rng rng(5);
    std::size_t calls = 0;
    for (; calls < 1000; ++calls) {
        const std::size_t m_q = rng.below(31);
        const double eta = 0.125 * static_cast<double>(rng.below(17));
        const std::uint64_t seed = rng.next_u64();
        const auto pairs = sampling::build_pairs(ds, hoods, m_q, eta, seed);
        const auto expected = m_q + static_cast<std::size_t>(std::llrint(eta * static_cast<double>(m_q)));
        v.require(pairs.size() == expected, "pair count " + std::to_string(pairs.size()) + " != " +
                                                std::to_string(expected));
        std::set<geo::SampleId> partners;
        for (const auto& p : pairs) {
            if (p.kind == sampling::PairKind::QueryPositive) {
                partners.insert(p.partner_id);
            }
        }
        for (const auto& p : pairs) {
            if (p.kind == sampling::PairKind::IdenticalNegative) {
                v.require(!partners.contains(p.anchor_id), "identical negative collides with a positive partner");
            }
        }
        v.require(sampling::build_pairs(ds, hoods, m_q, eta, seed) == pairs, "same seed gave different pairs");
    }
    v.detail << calls << " randomized calls";
}

// ---------------------------------------------------------------------------

std::vector<double> unit(std::span<const double> x) {
    double n = 0.0;
    for (double e : x) {
        n += e * e;
    }
    n = std::sqrt(n);
    std::vector<double> out;
    for (double e : x) {
        out.push_back(e / n);
    }
    return out;
}

void retrieval_oracle(Verdict& v) {
    Rng rng(99);
    std::size_t reports = 0;
    for (int instance = 0; instance < 100; ++instance) {
        geo::SynthConfig sc;
        sc.seed = rng.next_u64();
        sc.n_places = 5 + rng.below(46);
        sc.db_per_place = 1 + rng.below(4);
        sc.query_fraction = 1.0;
        sc.feature_dim = 2 + rng.below(6);
        sc.view_noise = 1.5;
        sc.spacing_m = 51.0 + static_cast<double>(rng.below(30));
        const auto ds = geo::synth_dataset(sc);
        const std::size_t dim = sc.feature_dim;
        const std::size_t m = ds.database.size();
        const std::size_t nq = ds.queries.size();
        if (m > 200 || nq > 50) {
            v.require(false, "instance larger than allowed");
        }

        ad::Tensor db(ad::Shape{m, dim});
        std::vector<geo::SampleId> ids;
        std::vector<geo::Position> pos;
        for (std::size_t r = 0; r < m; ++r) {
            ids.push_back(ds.database[r].id);
            pos.push_back(ds.database[r].position);
            std::copy(ds.database[r].features.begin(), ds.database[r].features.end(),
                      db.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
        }
        // Shuffle insertion order; the index must not depend on it.
        std::vector<std::size_t> perm(m);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<geo::SampleId> shuffled_ids;
        std::vector<geo::Position> shuffled_pos;
        for (auto p : perm) {
            shuffled_ids.push_back(ids[p]);
            shuffled_pos.push_back(pos[p]);
        }
        const auto index = retrieval::make_index(shuffled_ids, db.gather_rows(perm), shuffled_pos);

        ad::Tensor qv(ad::Shape{nq, dim});
        for (std::size_t r = 0; r < nq; ++r) {
            std::copy(ds.queries[r].features.begin(), ds.queries[r].features.end(),
                      qv.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
        }

        std::vector<std::vector<geo::SampleId>> ranked(nq);
        for (std::size_t qi = 0; qi < nq; ++qi) {
            const auto qn = unit(qv.data().subspan(qi * dim, dim));
            std::vector<std::pair<double, geo::SampleId>> scored;
            for (std::size_t r = 0; r < m; ++r) {
                const auto dn = unit(db.data().subspan(r * dim, dim));
                double d = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    d += (dn[c] - qn[c]) * (dn[c] - qn[c]);
                }
                scored.emplace_back(d, ids[r]);
            }
            std::sort(scored.begin(), scored.end());
            for (const auto& s : scored) {
                ranked[qi].push_back(s.second);
            }
            const std::size_t k = 1 + rng.below(m + 5);
            std::vector<geo::SampleId> expected(ranked[qi].begin(),
                                                ranked[qi].begin() + static_cast<std::ptrdiff_t>(std::min(k, m)));
            v.require(retrieval::knn(index, qv.data().subspan(qi * dim, dim), k) == expected,
                      "knn differs from the sort oracle");
        }

        std::vector<std::size_t> ns;
        for (std::size_t n = 1; n <= m; n += 1 + rng.below(4)) {
            ns.push_back(n);
        }
        const auto report = retrieval::recall_at_n(ds, index, qv, ns);
        ++reports;
        v.require(std::is_sorted(report.recalls.begin(), report.recalls.end()), "recall not monotone in N");
        for (std::size_t i = 0; i < ns.size(); ++i) {
            std::size_t hits = 0;
            for (std::size_t qi = 0; qi < nq; ++qi) {
                for (std::size_t j = 0; j < ns[i]; ++j) {
                    if (geo::distance_m(ds.queries[qi].position, ds.sample(ranked[qi][j]).position) <= 25.0) {
                        ++hits;
                        break;
                    }
                }
            }
            v.require(report.recalls[i] == static_cast<double>(hits) / static_cast<double>(nq),
                      "recall differs from the exhaustive oracle");
        }
    }
    v.detail << "100 instances (M <= 200, queries <= 50), " << reports << " monotone reports";
}

// ---------------------------------------------------------------------------

void cost_reproduction(Verdict& v) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t pool = 50;
    double worst_full = 0.0;
    double worst_partial = 0.0;
    std::size_t rows = 0;
    for (std::size_t n_k : {100, 1000, 5000}) {
        for (std::size_t n_q : {10, 50, 100}) {
            const auto ds = bench::bench_dataset(n_q, n_k, 8, 1000 + n_q + n_k);
            const auto hoods = sampling::compute_neighborhoods(ds);
            std::uint64_t eligible = 0;
            std::set<std::vector<geo::SampleId>> positive_sets;
            for (const auto& q : ds.queries) {
                eligible += geo::negative_set(q, ds).size();
                positive_sets.insert(geo::positive_set(q, ds));
            }
            const auto full = bench::measure_preparation(ds, cost::PreparationMode::FullHNM, pool, 1, 0.05);
            const double full_rel = std::abs(static_cast<double>(full.measured.comparisons) -
                                             static_cast<double>(eligible)) /
                                    static_cast<double>(eligible);
            worst_full = std::max(worst_full, full_rel);
            v.require(full_rel <= 0.05, "FullHNM comparisons off at n_q=" + std::to_string(n_q));

            const auto partial = bench::measure_preparation(ds, cost::PreparationMode::PartialHNM, pool, 1, 0.05);
            const double target = static_cast<double>(n_q * pool);
            const double partial_rel =
                std::abs(static_cast<double>(partial.measured.comparisons) - target) / target;
            worst_partial = std::max(worst_partial, partial_rel);
            v.require(partial_rel <= 0.05, "PartialHNM comparisons off at n_q=" + std::to_string(n_q));

            const auto pairs = bench::measure_preparation(ds, cost::PreparationMode::PairOnly, pool, 1, 0.05);
            v.require(pairs.measured.comparisons == 0, "PairOnly compared embeddings");
            // Every bench query has exactly one positive, so n_kp is the number of distinct positive sets.
            v.require(pairs.measured.extractions == n_q + positive_sets.size(), "PairOnly extractions differ");
            rows += 3;
        }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    v.require(seconds < 120.0, "runtime " + fixed(seconds, 1) + " s");
    v.detail << rows << " rows, worst FullHNM deviation " << fixed(100.0 * worst_full, 2) << "%, worst PartialHNM "
             << fixed(100.0 * worst_partial, 2) << "%, " << fixed(seconds, 1) << " s";
}

// ---------------------------------------------------------------------------

geo::GeoDataset desk_dataset(std::uint64_t replicate) {
    geo::SynthConfig sc;
    sc.seed = 100 + replicate;
    sc.n_places = 20;
    sc.db_per_place = 8;
    sc.query_fraction = 0.5;
    sc.feature_dim = 32;
    // About 0.73 untrained R@1 averaged over encoder initializations.
    sc.view_noise = 0.8;
    return geo::synth_dataset(sc);
}

struct DeskResult {
    std::vector<double> untrained;
    std::vector<double> final_r1;
    double seconds = 0.0;
};

DeskResult desk_runs(Method method, std::size_t layers, double eta) {
    DeskResult out;
    const auto start = std::chrono::steady_clock::now();
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto ds = desk_dataset(s);
        train::TrainConfig cfg;
        cfg.method = train::MethodConfig::preset(method, ds.feature_dim(), layers, 64, eta);
        cfg.epochs = 100;
        cfg.lr = 1e-3;
        cfg.seed = s;
        cfg.eval_every = cfg.epochs;
        cfg.recall_n = {1};
        auto state = train::init_train_state(cfg);
        out.untrained.push_back(train::evaluate(state.encoder, ds, cfg.recall_n, 25.0).recalls[0]);
        const auto run = train::train_run(cfg, ds, state);
        out.final_r1.push_back(run.final_recall()->recalls[0]);
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

std::string describe(const std::string& label, const DeskResult& r) {
    const auto s = train::summarize(r.final_r1);
    std::ostringstream os;
    os << label << " R@1 median " << fixed(median3(r.final_r1)) << " (mean " << fixed(s.mean) << " +- "
       << fixed(s.std) << ", untrained median " << fixed(median3(r.untrained)) << ", " << fixed(r.seconds, 1)
       << " s)";
    return os.str();
}

void learnability(Verdict& v) {
    const auto simclr = desk_runs(Method::SimCLR, 1, 1.0);
    const auto bt = desk_runs(Method::BarlowTwins, 2, 1.0);
    v.require(median3(simclr.final_r1) >= 0.95, "SimCLR-FC-1-64-1 median R@1 below 0.95");
    v.require(median3(bt.final_r1) >= 0.95, "BT-FC-2-64-1 median R@1 below 0.95");
    v.require(simclr.seconds < 300.0 && bt.seconds < 300.0, "runtime above 5 minutes");
    v.detail << describe("SimCLR-FC-1-64-1", simclr) << "; " << describe("BT-FC-2-64-1", bt);
}

void collapse_trend(Verdict& v) {
    const auto simsiam0 = desk_runs(Method::SimSiam, 2, 0.0);
    const auto simsiam1 = desk_runs(Method::SimSiam, 2, 1.0);
    const auto bt0 = desk_runs(Method::BarlowTwins, 2, 0.0);
    const auto bt1 = desk_runs(Method::BarlowTwins, 2, 1.0);
    const double drop = median3(simsiam0.final_r1) - median3(simsiam1.final_r1);
    v.require(drop >= 0.05, "SimSiam R@1 drop from eta 0 to eta 1 is " + fixed(drop) + " (needs >= 0.05)");
    v.require(median3(bt1.final_r1) >= median3(bt0.final_r1) - 0.02, "BT degraded at eta 1");
    v.detail << describe("SimSiam-FC-2-64-0", simsiam0) << "; " << describe("SimSiam-FC-2-64-1", simsiam1) << "; "
             << describe("BT-FC-2-64-0", bt0) << "; " << describe("BT-FC-2-64-1", bt1);
}

// ---------------------------------------------------------------------------

void flag_audit(Verdict& v) {
    const auto flags = [](const train::FeatureFlags& f) {
        std::string s;
        s += f.momentum_encoder ? "ME " : "-- ";
        s += f.stop_gradient ? "SG " : "-- ";
        s += f.predictor ? "PR " : "-- ";
        s += f.batchnorm ? "BN" : "--";
        return s;
    };
    for (auto m : {Method::SimCLR, Method::MoCov2, Method::BYOL, Method::SimSiam, Method::BarlowTwins,
                   Method::VICReg}) {
        const auto audit = gradcheck::audit_gradient_flow(m, 8);
        v.require(audit.pass && audit.observed == train::reference_flags(m),
                  std::string(loss::method_name(m)) + " observed " + flags(audit.observed) + " " + audit.detail);
        v.detail << loss::method_name(m) << " [" << flags(audit.observed) << "] ";
    }
}

} // namespace

int main() {
    kernels::configure_threads();
    struct Criterion {
        int id;
        const char* name;
        std::function<void(Verdict&)> check;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", gradient_correctness},
        {2, "loss identities", loss_identities},
        {3, "sampler contract", sampler_contract},
        {4, "retrieval oracle equivalence", retrieval_oracle},
        {5, "preparation cost reproduction", cost_reproduction},
        {6, "learnability at desk scale", learnability},
        {7, "identical-negative collapse trend", collapse_trend},
        {8, "feature flag audit", flag_audit},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        Verdict v;
        try {
            c.check(v);
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail << "exception: " << e.what();
        }
        std::printf("criterion %d %-36s %s  %s\n", c.id, c.name, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
        std::fflush(stdout);
        failures += v.pass ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
