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

#include "vgssl/geodata.hpp"
#include "vgssl/mining_bench.hpp"
#include "vgssl/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

// JSON configuration files. Every object is read strictly: a key that is not
// part of the schema is an error, so misspelled hyperparameters never fall
// back to defaults silently.
namespace vgssl::config {

using Json = nlohmann::json;

Json load_json(const std::filesystem::path& path);

geo::SynthConfig parse_synth(const Json& j);
Json to_json(const geo::SynthConfig& cfg);

/// A training job: the train configuration plus the dataset to train on and
/// how many seeds to run.
struct TrainJob {
    train::TrainConfig train;
    std::string dataset;
    std::size_t n_seeds = 1;
};

/// Keys: dataset, n_seeds, method, proj_layers, embed_dim, hidden_dims, eta,
/// tau, margin, lambda_bt, lambda_inv, lambda_var, lambda_cov, std_margin,
/// symmetric, momentum, bn_eps, bn_momentum, mining, pool_size, batch_size,
/// queries_per_epoch, epochs, lr, weight_decay, decoupled_weight_decay, seed,
/// eval_every, recall_n, threshold_m, verify_positives. input_dim is taken
/// from the dataset when omitted (0).
TrainJob parse_train_job(const Json& j);
Json to_json(const TrainJob& job);
Json to_json(const train::TrainConfig& cfg);

/// Rebuilds a TrainConfig from to_json(TrainConfig) output.
train::TrainConfig parse_train_config(const Json& j);

/// Keys: n_q, n_k (lists), pool, modes (list of FullHNM, PartialHNM, Random,
/// PairOnly), slack, feature_dim, seed, verify_positives.
bench::MiningBenchConfig parse_mining_bench(const Json& j);

} // namespace vgssl::config
