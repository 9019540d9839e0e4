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

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string output;
};

fs::path scratch() {
    static const fs::path dir = [] {
        const auto d = fs::temp_directory_path() / ("vgssl-cli-" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

Outcome run(const std::string& args) {
    const fs::path log = scratch() / "last.log";
    const std::string cmd = std::string("\"") + VGSSL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const char* kSynth = R"({"seed": 4, "n_places": 10, "db_per_place": 4, "query_fraction": 0.5, "feature_dim": 6})";

fs::path make_dataset(const std::string& name) {
    const fs::path cfg = scratch() / (name + "-synth.json");
    write_file(cfg, kSynth);
    const auto r = run("--config " + q(cfg) + " --out " + q(scratch()) + " synth --name " + name);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    return scratch() / (name + ".csv");
}

fs::path train_config(const std::string& name, const fs::path& dataset, std::size_t epochs) {
    const fs::path cfg = scratch() / (name + "-train.json");
    std::ostringstream os;
    os << R"({"method": "SimCLR", "proj_layers": 1, "embed_dim": 8, "hidden_dims": [8], "eta": 1,)"
       << R"( "batch_size": 4, "queries_per_epoch": 5, "lr": 0.001, "recall_n": [1, 2], "epochs": )" << epochs
       << R"(, "n_seeds": 2, "dataset": ")" << dataset.string() << "\"}";
    write_file(cfg, os.str());
    return cfg;
}

} // namespace

TEST_SUITE("synth") {
    TEST_CASE("writes the dataset and metadata, deterministically") {
        const auto a = make_dataset("det-a");
        const auto b = make_dataset("det-b");
        CHECK(fs::exists(a));
        CHECK(fs::exists(scratch() / "det-a.json"));
        CHECK(slurp(a) == slurp(b));
    }

    TEST_CASE("spacing below twice the negative radius fails with the constraint named") {
        const fs::path cfg = scratch() / "bad-synth.json";
        write_file(cfg, R"({"spacing_m": 30, "r_neg": 25})");
        const auto r = run("--config " + q(cfg) + " --out " + q(scratch()) + " synth --name bad");
        CHECK(r.code != 0);
        CHECK(r.output.find("spacing_m") != std::string::npos);
    }

    TEST_CASE("unknown configuration keys are rejected") {
        const fs::path cfg = scratch() / "typo-synth.json";
        write_file(cfg, R"({"n_place": 10})");
        const auto r = run("--config " + q(cfg) + " --out " + q(scratch()) + " synth --name typo");
        CHECK(r.code != 0);
        CHECK(r.output.find("unknown key 'n_place'") != std::string::npos);
    }
}

TEST_SUITE("train and eval") {
    TEST_CASE("runs land in labelled directories and resume continues the epoch count") {
        const auto ds = make_dataset("train-ds");
        const auto out = scratch() / "runs";
        const auto r = run("--config " + q(train_config("t2", ds, 2)) + " --out " + q(out) + " train");
        REQUIRE_MESSAGE(r.code == 0, r.output);
        const auto run_dir = out / "SimCLR-FC-1-8-1-s0";
        CHECK(fs::exists(run_dir / "manifest.json"));
        CHECK(fs::exists(run_dir / "checkpoint.json"));
        CHECK(fs::exists(out / "SimCLR-FC-1-8-1-s1" / "epochs.csv"));
        CHECK(fs::exists(out / "SimCLR-FC-1-8-1-summary.csv"));
        const std::string two_epochs = slurp(run_dir / "epochs.csv");

        const auto resumed =
            run("--config " + q(train_config("t4", ds, 4)) + " --out " + q(out) + " train --resume --serial");
        REQUIRE_MESSAGE(resumed.code == 0, resumed.output);
        CHECK(resumed.output.find("resumed after epoch 2") != std::string::npos);
        const std::string four_epochs = slurp(run_dir / "epochs.csv");
        CHECK(four_epochs.starts_with(two_epochs));
        CHECK(four_epochs.find("\n3,") != std::string::npos);
        CHECK(four_epochs.find("\n4,") != std::string::npos);

        const auto fresh_out = scratch() / "fresh";
        const auto fresh = run("--config " + q(train_config("t4b", ds, 4)) + " --out " + q(fresh_out) + " train");
        REQUIRE(fresh.code == 0);
        CHECK(slurp(fresh_out / "SimCLR-FC-1-8-1-s0" / "epochs.csv") == four_epochs);

        const auto ck = run_dir / "checkpoint.json";
        const auto e1 = run("--out " + q(scratch() / "eval1") + " eval --checkpoint " + q(ck) + " --dataset " + q(ds) +
                            " --n 1,2,5");
        REQUIRE_MESSAGE(e1.code == 0, e1.output);
        const auto e2 = run("--out " + q(scratch() / "eval2") + " eval --checkpoint " + q(ck) + " --dataset " + q(ds) +
                            " --n 1,2,5");
        REQUIRE(e2.code == 0);
        const auto recall = slurp(scratch() / "eval1" / "recall.csv");
        CHECK(recall.starts_with("N,recall,threshold_m,n_queries\n"));
        CHECK(recall == slurp(scratch() / "eval2" / "recall.csv"));

        const fs::path wide_cfg = scratch() / "wide-synth.json";
        write_file(wide_cfg, R"({"n_places": 10, "feature_dim": 9})");
        REQUIRE(run("--config " + q(wide_cfg) + " --out " + q(scratch()) + " synth --name wide").code == 0);
        const auto mismatch = run("--out " + q(scratch() / "eval3") + " eval --checkpoint " + q(ck) + " --dataset " +
                                  q(scratch() / "wide.csv"));
        CHECK(mismatch.code != 0);
        CHECK(mismatch.output.find('6') != std::string::npos);
        CHECK(mismatch.output.find('9') != std::string::npos);
    }

    TEST_CASE("a missing dataset fails") {
        const auto r = run("--config " + q(train_config("missing", scratch() / "nope.csv", 1)) + " --out " +
                           q(scratch() / "missing") + " train");
        CHECK(r.code != 0);
        CHECK(r.output.find("nope.csv") != std::string::npos);
    }
}

TEST_SUITE("gradcheck") {
    TEST_CASE("an empty method list prints an empty table") {
        const auto r = run("gradcheck --methods \"\"");
        CHECK(r.code == 0);
        CHECK(r.output.find("method,instances,parameters,max_rel_error,pass") != std::string::npos);
        CHECK(r.output.find("SimCLR") == std::string::npos);
    }

    TEST_CASE("an injected fault fails and names the method") {
        const auto r = run("gradcheck --methods SimCLR,BYOL --instances 1 --inject-fault BYOL");
        CHECK(r.code != 0);
        CHECK(r.output.find("BYOL") != std::string::npos);
        CHECK(r.output.find("FAIL") != std::string::npos);
    }

    TEST_CASE("healthy methods pass") {
        const auto r = run("gradcheck --methods SimSiam,BT --instances 2");
        CHECK_MESSAGE(r.code == 0, r.output);
    }
}

TEST_CASE("bench-mining covers the grid") {
    const auto out = scratch() / "bench";
    const auto r = run("--out " + q(out) + " bench-mining");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    std::istringstream csv(slurp(out / "bench_mining.csv"));
    std::string line;
    std::getline(csv, line);
    std::size_t rows = 0;
    long full_small = -1;
    long full_large = -1;
    while (std::getline(csv, line)) {
        ++rows;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) {
            cells.push_back(cell);
        }
        REQUIRE(cells.size() == 11);
        if (cells[0] == "PairOnly") {
            CHECK(cells[5] == "0");
        }
        if (cells[0] == "FullHNM" && cells[2] == "1000") {
            (cells[1] == "10" ? full_small : full_large) = std::stol(cells[5]);
        }
        CHECK(cells[10] == "true");
    }
    CHECK(rows == 4 * 4);
    CHECK(full_large >= 10 * full_small);
}
