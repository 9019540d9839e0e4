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

#include "vgssl/checkpoint.hpp"
#include "vgssl/config.hpp"
#include "vgssl/geodata.hpp"
#include "vgssl/gradcheck.hpp"
#include "vgssl/kernels.hpp"
#include "vgssl/mining_bench.hpp"
#include "vgssl/retrieval.hpp"
#include "vgssl/trainer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace vgssl;
using config::Json;

namespace {

constexpr const char* kToolVersion = "vgssl 0.1.0";

struct GlobalOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_output(path);
    out << text;
    if (!out) {
        throw std::runtime_error("failed while writing " + path.string());
    }
}

geo::GeoDataset load_dataset(const std::string& path) {
    if (path.empty()) {
        throw std::invalid_argument("no dataset given (set \"dataset\" in the config or pass --dataset)");
    }
    if (!fs::exists(path)) {
        throw std::runtime_error("dataset " + path + " does not exist");
    }
    return geo::read_dataset(path);
}

int cmd_synth(const GlobalOptions& g, const std::string& name) {
    geo::SynthConfig sc = g.config.empty() ? geo::SynthConfig{} : config::parse_synth(config::load_json(g.config));
    if (g.seed) {
        sc.seed = *g.seed;
    }
    const auto ds = geo::synth_dataset(sc);
    const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    const fs::path csv = dir / (name + ".csv");
    geo::write_dataset(ds, csv);
    std::cout << "wrote " << ds.database.size() << " database and " << ds.queries.size() << " query samples ("
              << ds.feature_dim() << " features) to " << csv.string() << '\n';
    return 0;
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    fs::path dir;
    train::RunRecord run;
    std::size_t resumed_from = 0;
    std::string error;
};

SeedOutcome train_one_seed(const config::TrainJob& job, const train::TrainConfig& base, std::uint64_t seed,
                           const geo::GeoDataset& ds, const fs::path& out_dir, bool resume) {
    SeedOutcome o;
    o.seed = seed;
    train::TrainConfig cfg = base;
    cfg.seed = seed;
    o.dir = out_dir / (cfg.method.label() + "-s" + std::to_string(seed));
    fs::create_directories(o.dir);
    const fs::path ckpt_path = o.dir / "checkpoint.json";
    const fs::path csv_path = o.dir / "epochs.csv";
    const auto layout = train::csv_layout(cfg);

    train::TrainState state;
    if (resume && fs::exists(ckpt_path)) {
        auto ck = ckpt::load_checkpoint(ckpt_path);
        if (ck.config.method.label() != cfg.method.label() || ck.config.seed != seed) {
            throw std::invalid_argument("checkpoint " + ckpt_path.string() + " belongs to " +
                                        ck.config.method.label() + " seed " + std::to_string(ck.config.seed));
        }
        state = std::move(ck.state);
        o.resumed_from = state.epochs_done;
    } else {
        state = train::init_train_state(cfg);
        auto csv = open_output(csv_path);
        train::write_epoch_csv_header(layout, csv);
    }

    const auto started = utc_now();
    std::vector<double> seconds;
    const auto on_epoch = [&](const train::EpochRecord& e, const train::TrainState& s) {
        std::ofstream csv(csv_path, std::ios::app);
        train::write_epoch_csv_row(e, layout, csv);
        ckpt::save_checkpoint(ckpt_path, cfg, s);
        seconds.push_back(e.seconds);
    };
    o.run = train::train_run(cfg, ds, state, on_epoch);

    Json manifest;
    manifest["command"] = "train";
    manifest["tool_version"] = kToolVersion;
    config::TrainJob echo = job;
    echo.train = cfg;
    manifest["config"] = config::to_json(echo);
    manifest["label"] = cfg.method.label();
    manifest["seed"] = seed;
    manifest["seeds"] = Json::array();
    for (std::size_t i = 0; i < job.n_seeds; ++i) {
        manifest["seeds"].push_back(base.seed + i);
    }
    manifest["resumed_from_epoch"] = o.resumed_from;
    manifest["epochs_completed"] = state.epochs_done;
    manifest["outputs"] = {{"epochs_csv", csv_path.string()}, {"checkpoint", ckpt_path.string()}};
    manifest["started_utc"] = started;
    manifest["finished_utc"] = utc_now();
    manifest["epoch_seconds"] = seconds;
    write_text(o.dir / "manifest.json", manifest.dump(2) + "\n");
    return o;
}

int cmd_train(const GlobalOptions& g, const std::string& dataset_override, bool resume, bool serial) {
    if (g.config.empty()) {
        throw std::invalid_argument("train needs --config");
    }
    config::TrainJob job = config::parse_train_job(config::load_json(g.config));
    if (!dataset_override.empty()) {
        job.dataset = dataset_override;
    }
    if (g.seed) {
        job.train.seed = *g.seed;
    }
    const auto ds = load_dataset(job.dataset);
    auto& enc = job.train.method.encoder;
    if (enc.input_dim == 0) {
        enc.input_dim = ds.feature_dim();
    } else if (enc.input_dim != ds.feature_dim()) {
        throw std::invalid_argument("config input_dim " + std::to_string(enc.input_dim) + " does not match dataset " +
                                    "feature width " + std::to_string(ds.feature_dim()));
    }
    job.train.validate();
    const fs::path out_dir = g.out.empty() ? fs::path("runs") : fs::path(g.out);
    fs::create_directories(out_dir);

    std::vector<SeedOutcome> outcomes(job.n_seeds);
    const auto n = static_cast<std::ptrdiff_t>(job.n_seeds);
#pragma omp parallel for schedule(dynamic, 1) if (!serial && n > 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto seed = job.train.seed + static_cast<std::uint64_t>(i);
        try {
            outcomes[static_cast<std::size_t>(i)] = train_one_seed(job, job.train, seed, ds, out_dir, resume);
        } catch (const std::exception& e) {
            outcomes[static_cast<std::size_t>(i)].seed = seed;
            outcomes[static_cast<std::size_t>(i)].error = e.what();
        }
    }
    for (const auto& o : outcomes) {
        if (!o.error.empty()) {
            throw std::runtime_error("seed " + std::to_string(o.seed) + ": " + o.error);
        }
    }

    std::vector<double> losses;
    std::map<std::size_t, std::vector<double>> recalls;
    for (const auto& o : outcomes) {
        if (!o.run.epochs.empty()) {
            losses.push_back(o.run.epochs.back().loss);
        }
        if (const auto* r = o.run.final_recall()) {
            for (std::size_t k = 0; k < r->n_values.size(); ++k) {
                recalls[r->n_values[k]].push_back(r->recalls[k]);
            }
        }
        std::cout << o.dir.string() << ": " << o.run.epochs.size() << " epochs";
        if (o.resumed_from > 0) {
            std::cout << " (resumed after epoch " << o.resumed_from << ")";
        }
        std::cout << '\n';
    }
    const std::string label = job.train.method.label();
    std::ostringstream summary;
    summary << "metric,mean,std,n_seeds\n";
    const auto row = [&](const std::string& name, const std::vector<double>& values) {
        const auto s = train::summarize(values);
        summary << name << ',' << number(s.mean) << ',' << number(s.std) << ',' << values.size() << '\n';
        std::cout << label << ' ' << name << " = " << number(s.mean) << " +- " << number(s.std) << '\n';
    };
    if (!losses.empty()) {
        row("final_loss", losses);
    }
    for (const auto& [n_value, values] : recalls) {
        row("R@" + std::to_string(n_value), values);
    }
    write_text(out_dir / (label + "-summary.csv"), summary.str());
    return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& checkpoint, const std::string& dataset,
             std::vector<std::size_t> n_values, double threshold) {
    if (checkpoint.empty()) {
        throw std::invalid_argument("eval needs --checkpoint");
    }
    const auto ck = ckpt::load_checkpoint(checkpoint);
    const auto ds = load_dataset(dataset);
    const std::size_t in_dim = ck.config.method.encoder.input_dim;
    if (ds.feature_dim() != in_dim) {
        throw std::invalid_argument("dimension mismatch: checkpoint expects input_dim " + std::to_string(in_dim) +
                                    " but dataset " + dataset + " has " + std::to_string(ds.feature_dim()) +
                                    " features");
    }
    std::sort(n_values.begin(), n_values.end());
    n_values.erase(std::unique(n_values.begin(), n_values.end()), n_values.end());
    const auto report = train::evaluate(ck.state.encoder, ds, n_values, threshold);
    const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "N,recall,threshold_m,n_queries\n";
    for (std::size_t k = 0; k < report.n_values.size(); ++k) {
        csv << report.n_values[k] << ',' << number(report.recalls[k]) << ',' << number(report.threshold_m) << ','
            << report.n_queries << '\n';
        std::cout << "R@" << report.n_values[k] << " = " << number(report.recalls[k]) << '\n';
    }
    write_text(dir / "recall.csv", csv.str());
    return 0;
}

std::vector<loss::Method> parse_method_list(const std::string& text) {
    std::vector<loss::Method> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) {
            continue;
        }
        const auto last = item.find_last_not_of(" \t");
        out.push_back(loss::parse_method(item.substr(first, last - first + 1)));
    }
    return out;
}

int cmd_gradcheck(const GlobalOptions& g, const std::optional<std::string>& methods, std::size_t instances,
                  const std::string& fault) {
    const std::vector<loss::Method> all{loss::Method::Triplet, loss::Method::SimCLR,      loss::Method::MoCov2,
                                        loss::Method::BYOL,    loss::Method::SimSiam,     loss::Method::BarlowTwins,
                                        loss::Method::VICReg};
    const auto list = methods ? parse_method_list(*methods) : all;
    gradcheck::Options opts;
    opts.instances = instances;
    opts.seed = g.seed.value_or(0);
    if (!fault.empty()) {
        opts.inject_fault = loss::parse_method(fault);
    }
    const auto results = gradcheck::run_gradcheck(list, opts);
    std::ostringstream table;
    table << "method,instances,parameters,max_rel_error,pass\n";
    bool ok = true;
    for (const auto& r : results) {
        table << loss::method_name(r.method) << ',' << r.instances << ',' << r.parameters << ','
              << number(r.max_rel_error) << ',' << (r.pass ? "pass" : "FAIL") << '\n';
        ok = ok && r.pass;
    }
    std::cout << table.str();
    if (!g.out.empty()) {
        fs::create_directories(g.out);
        write_text(fs::path(g.out) / "gradcheck.csv", table.str());
    }
    for (const auto& r : results) {
        if (!r.pass) {
            std::cerr << "gradcheck failed for " << loss::method_name(r.method) << ": relative error "
                      << number(r.max_rel_error) << " >= " << number(opts.tolerance) << '\n';
        }
    }
    return ok ? 0 : 1;
}

int cmd_bench_mining(const GlobalOptions& g) {
    bench::MiningBenchConfig cfg =
        g.config.empty() ? bench::MiningBenchConfig{} : config::parse_mining_bench(config::load_json(g.config));
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    const auto rows = bench::run_mining_bench(cfg);
    std::ostringstream csv;
    bench::write_bench_csv(rows, csv);
    std::cout << csv.str();
    const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    write_text(dir / "bench_mining.csv", csv.str());
    bool ok = true;
    for (const auto& r : rows) {
        if (!r.report.pass) {
            ok = false;
            std::cerr << cost::preparation_mode_name(r.mode) << " n_q=" << r.n_q << " n_k=" << r.n_k << ":\n"
                      << r.report.failures();
        }
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    kernels::configure_threads();
    CLI::App app{"Pair-based self-supervised training and evaluation for visual geo-localization"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "JSON configuration file");
    app.add_option("--out", g.out, "Output directory");
    auto* seed_opt = app.add_option("--seed", seed, "Seed override");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic geo-referenced dataset");
    std::string synth_name = "dataset";
    synth->add_option("--name", synth_name, "File stem of the dataset CSV");

    auto* train_cmd = app.add_subcommand("train", "Train one configuration over one or more seeds");
    std::string dataset_override;
    bool resume = false;
    bool serial = false;
    train_cmd->add_option("--dataset", dataset_override, "Dataset CSV (overrides the config)");
    train_cmd->add_flag("--resume", resume, "Continue from checkpoints found in the run directories");
    train_cmd->add_flag("--serial", serial, "Run seeds one after another");

    auto* eval = app.add_subcommand("eval", "Recall@N of a checkpoint on a dataset");
    std::string checkpoint;
    std::string eval_dataset;
    std::vector<std::size_t> n_values{1, 5, 10};
    double threshold = 25.0;
    eval->add_option("--checkpoint", checkpoint, "checkpoint.json of a run")->required();
    eval->add_option("--dataset", eval_dataset, "Dataset CSV")->required();
    eval->add_option("--n", n_values, "N values")->delimiter(',');
    eval->add_option("--threshold", threshold, "Success radius in meters");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks per method");
    std::string methods_text;
    std::size_t instances = 20;
    std::string fault;
    auto* methods_opt = grad->add_option("--methods", methods_text, "Comma-separated methods (default: all)");
    grad->add_option("--instances", instances, "Random instances per method");
    grad->add_option("--inject-fault", fault, "Test hook: negate the analytic gradient of this method");

    auto* bench_cmd = app.add_subcommand("bench-mining", "Measured vs predicted preparation cost");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (seed_opt->count() > 0) {
        g.seed = seed;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(g, synth_name);
        }
        if (train_cmd->parsed()) {
            return cmd_train(g, dataset_override, resume, serial);
        }
        if (eval->parsed()) {
            return cmd_eval(g, checkpoint, eval_dataset, n_values, threshold);
        }
        if (grad->parsed()) {
            std::optional<std::string> methods;
            if (methods_opt->count() > 0) {
                methods = methods_text;
            }
            return cmd_gradcheck(g, methods, instances, fault);
        }
        if (bench_cmd->parsed()) {
            return cmd_bench_mining(g);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
