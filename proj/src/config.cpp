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

#include "vgssl/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace vgssl::config {

namespace {

class StrictReader {
  public:
    StrictReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw std::invalid_argument(where_ + ": expected a JSON object");
        }
    }

    template <typename T> bool get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) {
            return false;
        }
        try {
            out = it->get<T>();
        } catch (const Json::exception& e) {
            throw std::invalid_argument(where_ + ": key '" + key + "' has the wrong type (" + e.what() + ")");
        }
        return true;
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.contains(item.key())) {
                throw std::invalid_argument(where_ + ": unknown key '" + item.key() + "'");
            }
        }
    }

  private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string mining_name(sampling::MiningMode m) {
    switch (m) {
    case sampling::MiningMode::FullHNM: return "full";
    case sampling::MiningMode::PartialHNM: return "partial";
    case sampling::MiningMode::Random: return "random";
    }
    return "full";
}

sampling::MiningMode parse_mining(const std::string& s) {
    if (s == "full") {
        return sampling::MiningMode::FullHNM;
    }
    if (s == "partial") {
        return sampling::MiningMode::PartialHNM;
    }
    if (s == "random") {
        return sampling::MiningMode::Random;
    }
    throw std::invalid_argument("unknown mining mode '" + s + "' (expected full, partial or random)");
}

/// Reads the training keys into cfg; the caller finishes the reader.
train::TrainConfig read_train(StrictReader& r) {
    std::string method_name = "SimCLR";
    r.get("method", method_name);
    const loss::Method method = loss::parse_method(method_name);
    std::size_t input_dim = 0;
    std::size_t proj_layers = 1;
    std::size_t embed_dim = 64;
    double eta = 0.0;
    r.get("input_dim", input_dim);
    r.get("proj_layers", proj_layers);
    r.get("embed_dim", embed_dim);
    r.get("eta", eta);

    train::TrainConfig cfg;
    nn::EncoderConfig defaults;
    std::vector<std::size_t> hidden = defaults.hidden_dims;
    r.get("hidden_dims", hidden);
    cfg.method = train::MethodConfig::preset(method, input_dim, proj_layers, embed_dim, eta);
    cfg.method.encoder.hidden_dims = hidden;
    if (method == loss::Method::Triplet) {
        cfg.method.encoder.embed_dim = cfg.method.encoder.trunk_width();
    }

    auto& l = cfg.method.loss;
    r.get("tau", l.tau);
    r.get("margin", l.margin);
    r.get("lambda_bt", l.lambda_bt);
    r.get("lambda_inv", l.lambda_inv);
    r.get("lambda_var", l.lambda_var);
    r.get("lambda_cov", l.lambda_cov);
    r.get("std_margin", l.std_margin);
    r.get("symmetric", l.symmetric);

    auto& e = cfg.method.encoder;
    r.get("momentum", e.momentum);
    r.get("bn_eps", e.bn_eps);
    r.get("bn_momentum", e.bn_momentum);

    std::string mining = mining_name(cfg.method.mining.mode);
    r.get("mining", mining);
    cfg.method.mining.mode = parse_mining(mining);
    r.get("pool_size", cfg.method.mining.pool_size);

    r.get("batch_size", cfg.batch_size);
    r.get("queries_per_epoch", cfg.queries_per_epoch);
    r.get("epochs", cfg.epochs);
    double lr = 0.0;
    if (r.get("lr", lr)) {
        cfg.lr = lr;
    }
    r.get("weight_decay", cfg.weight_decay);
    r.get("decoupled_weight_decay", cfg.decoupled_weight_decay);
    r.get("seed", cfg.seed);
    r.get("eval_every", cfg.eval_every);
    r.get("recall_n", cfg.recall_n);
    r.get("threshold_m", cfg.threshold_m);
    r.get("verify_positives", cfg.verify_positives);
    return cfg;
}

} // namespace

Json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file " + path.string());
    }
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

geo::SynthConfig parse_synth(const Json& j) {
    StrictReader r(j, "synth config");
    geo::SynthConfig c;
    r.get("seed", c.seed);
    r.get("n_places", c.n_places);
    r.get("db_per_place", c.db_per_place);
    r.get("query_fraction", c.query_fraction);
    r.get("feature_dim", c.feature_dim);
    r.get("view_noise", c.view_noise);
    r.get("spacing_m", c.spacing_m);
    r.get("r_pos", c.r_pos);
    r.get("r_neg", c.r_neg);
    std::string mode(geo::coord_mode_name(c.mode));
    r.get("mode", mode);
    c.mode = geo::parse_coord_mode(mode);
    r.get("origin_lat", c.origin_lat);
    r.get("origin_lon", c.origin_lon);
    r.get("buffer_per_place", c.buffer_per_place);
    r.finish();
    return c;
}

Json to_json(const geo::SynthConfig& c) {
    return Json{{"seed", c.seed},
                {"n_places", c.n_places},
                {"db_per_place", c.db_per_place},
                {"query_fraction", c.query_fraction},
                {"feature_dim", c.feature_dim},
                {"view_noise", c.view_noise},
                {"spacing_m", c.spacing_m},
                {"r_pos", c.r_pos},
                {"r_neg", c.r_neg},
                {"mode", std::string(geo::coord_mode_name(c.mode))},
                {"origin_lat", c.origin_lat},
                {"origin_lon", c.origin_lon},
                {"buffer_per_place", c.buffer_per_place}};
}

TrainJob parse_train_job(const Json& j) {
    StrictReader r(j, "train config");
    TrainJob job;
    r.get("dataset", job.dataset);
    r.get("n_seeds", job.n_seeds);
    job.train = read_train(r);
    r.finish();
    if (job.n_seeds < 1) {
        throw std::invalid_argument("train config: n_seeds must be >= 1");
    }
    return job;
}

train::TrainConfig parse_train_config(const Json& j) {
    StrictReader r(j, "train config");
    auto cfg = read_train(r);
    r.finish();
    return cfg;
}

Json to_json(const train::TrainConfig& cfg) {
    const auto& m = cfg.method;
    Json j{{"method", std::string(loss::method_name(m.method()))},
           {"input_dim", m.encoder.input_dim},
           {"proj_layers", m.encoder.proj_layers},
           {"embed_dim", m.encoder.embed_dim},
           {"hidden_dims", m.encoder.hidden_dims},
           {"eta", m.eta},
           {"tau", m.loss.tau},
           {"margin", m.loss.margin},
           {"lambda_bt", m.loss.lambda_bt},
           {"lambda_inv", m.loss.lambda_inv},
           {"lambda_var", m.loss.lambda_var},
           {"lambda_cov", m.loss.lambda_cov},
           {"std_margin", m.loss.std_margin},
           {"symmetric", m.loss.symmetric},
           {"momentum", m.encoder.momentum},
           {"bn_eps", m.encoder.bn_eps},
           {"bn_momentum", m.encoder.bn_momentum},
           {"mining", mining_name(m.mining.mode)},
           {"pool_size", m.mining.pool_size},
           {"batch_size", cfg.batch_size},
           {"queries_per_epoch", cfg.queries_per_epoch},
           {"epochs", cfg.epochs},
           {"lr", cfg.learning_rate()},
           {"weight_decay", cfg.weight_decay},
           {"decoupled_weight_decay", cfg.decoupled_weight_decay},
           {"seed", cfg.seed},
           {"eval_every", cfg.eval_every},
           {"recall_n", cfg.recall_n},
           {"threshold_m", cfg.threshold_m},
           {"verify_positives", cfg.verify_positives}};
    return j;
}

Json to_json(const TrainJob& job) {
    Json j = to_json(job.train);
    j["dataset"] = job.dataset;
    j["n_seeds"] = job.n_seeds;
    return j;
}

bench::MiningBenchConfig parse_mining_bench(const Json& j) {
    StrictReader r(j, "bench-mining config");
    bench::MiningBenchConfig c;
    r.get("n_q", c.n_q);
    r.get("n_k", c.n_k);
    r.get("pool", c.pool);
    std::vector<std::string> modes;
    if (r.get("modes", modes)) {
        c.modes.clear();
        for (const auto& m : modes) {
            c.modes.push_back(cost::parse_preparation_mode(m));
        }
    }
    r.get("slack", c.slack);
    r.get("feature_dim", c.feature_dim);
    r.get("seed", c.seed);
    r.get("verify_positives", c.verify_positives);
    r.finish();
    if (c.slack < 0.0) {
        throw std::invalid_argument("bench-mining config: slack must be >= 0");
    }
    return c;
}

} // namespace vgssl::config
