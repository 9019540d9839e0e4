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

#include "vgssl/costmodel.hpp"
#include "vgssl/encoder.hpp"
#include "vgssl/geodata.hpp"
#include "vgssl/method.hpp"
#include "vgssl/retrieval.hpp"
#include "vgssl/sampling.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace vgssl::train {

struct AdamConfig {
    double lr = 1e-4;
    double weight_decay = 1e-6;
    /// Apply weight decay directly to the parameters instead of adding it to the gradient.
    bool decoupled = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<ad::Tensor> m;
    std::vector<ad::Tensor> v;
    std::uint64_t step = 0;
};

/// One Adam update. Moments are allocated on the first call.
void adam_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads, AdamState& state,
               const AdamConfig& cfg);

struct TrainConfig {
    MethodConfig method;
    std::size_t batch_size = 64;
    std::size_t queries_per_epoch = 256;
    std::size_t epochs = 10;
    /// Unset means default_learning_rate(method).
    std::optional<double> lr;
    double weight_decay = 1e-6;
    bool decoupled_weight_decay = false;
    std::uint64_t seed = 0;
    /// Recall is evaluated every eval_every epochs and after the last one; 0 disables it.
    std::size_t eval_every = 1;
    std::vector<std::size_t> recall_n{1, 5, 10};
    double threshold_m = 25.0;
    /// Pair methods: also run the embedding-matching pass over positives and count it.
    bool verify_positives = false;

    double learning_rate() const { return lr ? *lr : default_learning_rate(method.method()); }
    AdamConfig adam() const;
    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    std::map<std::string, double> terms;
    std::size_t batches = 0;
    std::size_t samples = 0;
    std::optional<retrieval::RecallReport> recall;
    cost::CostLedger ledger;
    double seconds = 0.0;
};

struct RunRecord {
    std::string label;
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;

    /// Latest evaluated recall, if any.
    const retrieval::RecallReport* final_recall() const;
};

/// Everything needed to continue a run.
struct TrainState {
    nn::Encoder encoder;
    AdamState adam;
    std::size_t epochs_done = 0;
};

TrainState init_train_state(const TrainConfig& cfg);

/// Parameters updated by the optimizer: online encoder, then predictor.
std::vector<ad::Tensor*> trainable_parameters(nn::Encoder& encoder);

/// One epoch: sample pairs (or mine triplets), then loss, backward, Adam and
/// momentum update per batch. Batches with fewer than 2 samples are dropped.
/// Preparation cost is added to ledger and reported in the record.
EpochRecord train_epoch(TrainState& state, const TrainConfig& cfg, const geo::GeoDataset& ds,
                        const sampling::QueryNeighborhoods& hoods, cost::CostLedger& ledger);

retrieval::RecallReport evaluate(const nn::Encoder& encoder, const geo::GeoDataset& ds,
                                 std::span<const std::size_t> n_values, double threshold_m);

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// Trains from state.epochs_done up to cfg.epochs.
RunRecord train_run(const TrainConfig& cfg, const geo::GeoDataset& ds, TrainState& state,
                    const EpochCallback& on_epoch = {});
/// Fresh run with cfg.seed.
RunRecord train_run(const TrainConfig& cfg, const geo::GeoDataset& ds);

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; ///< population standard deviation
};

struct ExperimentReport {
    std::vector<RunRecord> runs;
    /// "final_loss" and "R@N" for every configured N, over runs.
    std::map<std::string, MetricSummary> aggregate;
};

MetricSummary summarize(std::span<const double> values);

/// n_seeds independent runs with seeds cfg.seed + 0 .. n_seeds - 1.
ExperimentReport run_experiment(const TrainConfig& cfg, const geo::GeoDataset& ds, std::size_t n_seeds,
                                bool parallel = true);

/// Column layout of the epoch CSV; fixed by the configuration so that every
/// run of one configuration (and every resumed segment) shares a header.
struct CsvLayout {
    std::vector<std::string> terms;
    std::vector<std::size_t> recall_n;
};
CsvLayout csv_layout(const TrainConfig& cfg);

/// Columns: epoch, loss, the method's loss terms, R@N per configured N (empty
/// when not evaluated that epoch), batches, samples and the ledger counters.
void write_epoch_csv_header(const CsvLayout& layout, std::ostream& out);
void write_epoch_csv_row(const EpochRecord& e, const CsvLayout& layout, std::ostream& out);
void write_epoch_csv(const RunRecord& run, const CsvLayout& layout, std::ostream& out);

} // namespace vgssl::train
