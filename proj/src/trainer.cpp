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

#include "vgssl/trainer.hpp"

#include "vgssl/errors.hpp"
#include "vgssl/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <stdexcept>

namespace vgssl::train {

using ad::Shape;
using ad::Tensor;
using geo::SampleId;
using loss::Method;

namespace {

/// Stream identifiers for derive_seed.
constexpr std::uint64_t kInitStream = 0x1000;
constexpr std::uint64_t kEpochStream = 0x2000;

template <typename E> [[noreturn]] void rethrow_as(const E&, const std::string& message) { throw E(message); }

[[noreturn]] void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const SamplingError& e) {
        rethrow_as(e, context + ": " + e.what());
    } catch (const NumericError& e) {
        rethrow_as(e, context + ": " + e.what());
    } catch (const InvalidState& e) {
        rethrow_as(e, context + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        rethrow_as(e, context + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(context + ": " + e.what());
    }
}

Tensor gather_features(const geo::GeoDataset& ds, std::span<const SampleId> ids) {
    const std::size_t f = ds.feature_dim();
    Tensor out(Shape{ids.size(), f});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& feats = ds.sample(ids[i]).features;
        std::copy(feats.begin(), feats.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * f));
    }
    return out;
}

struct BatchResult {
    double loss = 0.0;
    std::map<std::string, double> terms;
};

BatchResult optimize_batch(TrainState& state, const TrainConfig& cfg, const StepInputs& inputs) {
    ad::Tape tape;
    StepGraph g = build_step(state.encoder, cfg.method, tape, inputs);
    tape.backward(g.loss.value);
    std::vector<Tensor> grads;
    for (const auto& leaf : g.binding.online) {
        grads.push_back(tape.grad(leaf));
    }
    for (const auto& leaf : g.binding.predictor) {
        grads.push_back(tape.grad(leaf));
    }
    const double value = g.loss.item();
    if (!std::isfinite(value)) {
        throw NumericError("loss is not finite (" + std::to_string(value) + ")");
    }
    const auto params = trainable_parameters(state.encoder);
    adam_step(params, grads, state.adam, cfg.adam());
    if (state.encoder.config().momentum_target) {
        state.encoder.momentum_update(state.encoder.config().momentum);
    }
    return {value, g.loss.terms};
}

} // namespace

void adam_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                    std::to_string(grads.size()) + " gradients");
    }
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                                    " moments for " + std::to_string(params.size()) + " parameters");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!(p.shape() == g.shape()) || !(state.m[i].shape() == p.shape())) {
            throw std::invalid_argument("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                                        p.shape().str() + " vs gradient " + g.shape().str());
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            double gj = g[j];
            if (!cfg.decoupled) {
                gj += cfg.weight_decay * p[j];
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            if (cfg.decoupled) {
                p[j] -= cfg.lr * cfg.weight_decay * p[j];
            }
            p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

AdamConfig TrainConfig::adam() const {
    AdamConfig a;
    a.lr = learning_rate();
    a.weight_decay = weight_decay;
    a.decoupled = decoupled_weight_decay;
    return a;
}

void TrainConfig::validate() const {
    method.validate();
    if (batch_size < 2) {
        throw std::invalid_argument("batch_size must be >= 2");
    }
    if (!(learning_rate() >= 0.0) || !std::isfinite(learning_rate())) {
        throw std::invalid_argument("learning rate must be finite and >= 0");
    }
    if (!(weight_decay >= 0.0)) {
        throw std::invalid_argument("weight_decay must be >= 0");
    }
    if (queries_per_epoch < 1) {
        throw std::invalid_argument("queries_per_epoch must be >= 1");
    }
    if (!std::is_sorted(recall_n.begin(), recall_n.end()) || (!recall_n.empty() && recall_n.front() < 1)) {
        throw std::invalid_argument("recall_n must be ascending and >= 1");
    }
}

const retrieval::RecallReport* RunRecord::final_recall() const {
    for (auto it = epochs.rbegin(); it != epochs.rend(); ++it) {
        if (it->recall) {
            return &*it->recall;
        }
    }
    return nullptr;
}

TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    return TrainState{nn::Encoder::init(cfg.method.encoder, derive_seed(cfg.seed, kInitStream)), {}, 0};
}

std::vector<ad::Tensor*> trainable_parameters(nn::Encoder& encoder) {
    std::vector<ad::Tensor*> out;
    for (auto& p : encoder.state().online.params) {
        out.push_back(&p.value);
    }
    for (auto& p : encoder.state().predictor.params) {
        out.push_back(&p.value);
    }
    return out;
}

retrieval::RecallReport evaluate(const nn::Encoder& encoder, const geo::GeoDataset& ds,
                                 std::span<const std::size_t> n_values, double threshold_m) {
    const auto index = retrieval::build_index(ds, encoder);
    return retrieval::recall_at_n(ds, index, encoder, n_values, threshold_m);
}

EpochRecord train_epoch(TrainState& state, const TrainConfig& cfg, const geo::GeoDataset& ds,
                        const sampling::QueryNeighborhoods& hoods, cost::CostLedger& ledger) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t epoch = state.epochs_done;
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, kEpochStream + epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    const std::string context = "epoch " + std::to_string(rec.epoch);

    std::vector<StepInputs> batches;
    try {
        if (cfg.method.pair_based()) {
            std::size_t eligible = 0;
            for (const auto& pos : hoods.positives) {
                eligible += pos.empty() ? 0 : 1;
            }
            const std::size_t m_q = std::min(cfg.queries_per_epoch, eligible);
            const auto pairs = sampling::build_pairs(ds, hoods, m_q, cfg.method.eta, epoch_seed);
            sampling::record_pair_preparation(pairs, rec.ledger);
            if (cfg.verify_positives) {
                const sampling::EmbedFn embed = [&](std::span<const SampleId> ids) {
                    return retrieval::embed_samples(ds, state.encoder, ids);
                };
                sampling::verify_pair_positives(ds, pairs, embed, rec.ledger);
            }
            for (std::size_t begin = 0; begin < pairs.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(begin + cfg.batch_size, pairs.size());
                if (end - begin < 2) {
                    continue;
                }
                std::vector<SampleId> a;
                std::vector<SampleId> b;
                for (std::size_t i = begin; i < end; ++i) {
                    a.push_back(pairs[i].anchor_id);
                    b.push_back(pairs[i].partner_id);
                }
                batches.push_back({gather_features(ds, a), gather_features(ds, b), std::nullopt});
            }
        } else {
            const std::size_t m_q = std::min(cfg.queries_per_epoch, ds.queries.size());
            const sampling::EmbedFn embed = [&](std::span<const SampleId> ids) {
                return retrieval::embed_samples(ds, state.encoder, ids);
            };
            const auto triplets =
                sampling::mine_triplets(ds, hoods, m_q, cfg.method.mining, embed, epoch_seed, rec.ledger);
            for (std::size_t begin = 0; begin < triplets.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(begin + cfg.batch_size, triplets.size());
                if (end - begin < 2) {
                    continue;
                }
                std::vector<SampleId> q;
                std::vector<SampleId> p;
                std::vector<SampleId> n;
                for (std::size_t i = begin; i < end; ++i) {
                    q.push_back(triplets[i].query_id);
                    p.push_back(triplets[i].positive_id);
                    n.push_back(triplets[i].negative_id);
                }
                batches.push_back({gather_features(ds, q), gather_features(ds, p), gather_features(ds, n)});
            }
        }
    } catch (...) {
        rethrow_with_context(context + ", batch preparation");
    }

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        BatchResult r;
        try {
            r = optimize_batch(state, cfg, batches[bi]);
        } catch (...) {
            rethrow_with_context(context + ", batch " + std::to_string(bi + 1));
        }
        loss_sum += r.loss;
        for (const auto& [name, v] : r.terms) {
            rec.terms[name] += v;
        }
        rec.samples += batches[bi].view_a.rows();
    }
    rec.batches = batches.size();
    if (rec.batches > 0) {
        rec.loss = loss_sum / static_cast<double>(rec.batches);
        for (auto& [name, v] : rec.terms) {
            v /= static_cast<double>(rec.batches);
        }
    }
    state.epochs_done = epoch + 1;
    const bool last = state.epochs_done == cfg.epochs;
    if (!cfg.recall_n.empty() && cfg.eval_every > 0 && (state.epochs_done % cfg.eval_every == 0 || last)) {
        rec.recall = evaluate(state.encoder, ds, cfg.recall_n, cfg.threshold_m);
    }
    ledger.merge(rec.ledger);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

RunRecord train_run(const TrainConfig& cfg, const geo::GeoDataset& ds, TrainState& state,
                    const EpochCallback& on_epoch) {
    cfg.validate();
    ds.validate();
    RunRecord run{cfg.method.label(), cfg.seed, {}};
    const auto hoods = sampling::compute_neighborhoods(ds);
    cost::CostLedger total;
    while (state.epochs_done < cfg.epochs) {
        run.epochs.push_back(train_epoch(state, cfg, ds, hoods, total));
        if (on_epoch) {
            on_epoch(run.epochs.back(), state);
        }
    }
    return run;
}

RunRecord train_run(const TrainConfig& cfg, const geo::GeoDataset& ds) {
    TrainState state = init_train_state(cfg);
    return train_run(cfg, ds, state);
}

MetricSummary summarize(std::span<const double> values) {
    MetricSummary s;
    if (values.empty()) {
        return s;
    }
    for (double v : values) {
        s.mean += v;
    }
    s.mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) {
        acc += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(acc / static_cast<double>(values.size()));
    return s;
}

ExperimentReport run_experiment(const TrainConfig& cfg, const geo::GeoDataset& ds, std::size_t n_seeds,
                                bool parallel) {
    if (n_seeds < 1) {
        throw std::invalid_argument("run_experiment needs n_seeds >= 1");
    }
    cfg.validate();
    ExperimentReport report;
    report.runs.resize(n_seeds);
    std::vector<std::exception_ptr> errors(n_seeds);
    const auto n = static_cast<std::ptrdiff_t>(n_seeds);
#pragma omp parallel for schedule(dynamic, 1) if (parallel && n_seeds > 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            TrainConfig run_cfg = cfg;
            run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(i);
            report.runs[static_cast<std::size_t>(i)] = train_run(run_cfg, ds);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    std::vector<double> losses;
    std::map<std::size_t, std::vector<double>> recalls;
    for (const auto& run : report.runs) {
        if (!run.epochs.empty()) {
            losses.push_back(run.epochs.back().loss);
        }
        if (const auto* r = run.final_recall()) {
            for (std::size_t k = 0; k < r->n_values.size(); ++k) {
                recalls[r->n_values[k]].push_back(r->recalls[k]);
            }
        }
    }
    report.aggregate["final_loss"] = summarize(losses);
    for (const auto& [n_value, values] : recalls) {
        report.aggregate["R@" + std::to_string(n_value)] = summarize(values);
    }
    return report;
}

CsvLayout csv_layout(const TrainConfig& cfg) { return {loss::loss_term_names(cfg.method.loss), cfg.recall_n}; }

namespace {

std::string number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_epoch_csv_header(const CsvLayout& layout, std::ostream& out) {
    out << "epoch,loss";
    for (const auto& t : layout.terms) {
        out << ',' << t;
    }
    for (auto n : layout.recall_n) {
        out << ",R@" << n;
    }
    out << ",batches,samples,extractions,comparisons,peak_cached,skipped_queries\n";
}

void write_epoch_csv_row(const EpochRecord& e, const CsvLayout& layout, std::ostream& out) {
    out << e.epoch << ',' << number(e.loss);
    for (const auto& t : layout.terms) {
        const auto it = e.terms.find(t);
        out << ',' << (it == e.terms.end() ? std::string() : number(it->second));
    }
    for (auto n : layout.recall_n) {
        out << ',';
        if (!e.recall) {
            continue;
        }
        for (std::size_t k = 0; k < e.recall->n_values.size(); ++k) {
            if (e.recall->n_values[k] == n) {
                out << number(e.recall->recalls[k]);
            }
        }
    }
    out << ',' << e.batches << ',' << e.samples << ',' << e.ledger.extractions << ',' << e.ledger.comparisons << ','
        << e.ledger.peak_cached << ',' << e.ledger.skipped_queries << '\n';
}

void write_epoch_csv(const RunRecord& run, const CsvLayout& layout, std::ostream& out) {
    write_epoch_csv_header(layout, out);
    for (const auto& e : run.epochs) {
        write_epoch_csv_row(e, layout, out);
    }
}

} // namespace vgssl::train
