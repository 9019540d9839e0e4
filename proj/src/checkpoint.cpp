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

#include <fstream>
#include <map>
#include <stdexcept>

namespace vgssl::ckpt {

using ad::Shape;
using ad::Tensor;
using config::Json;

namespace {

class TensorWriter {
  public:
    void add(const std::string& name, const Tensor& t) {
        manifest_.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", data_.size()}});
        data_.insert(data_.end(), t.values().begin(), t.values().end());
    }
    void add_network(const std::string& prefix, const nn::Network& net) {
        for (const auto& p : net.params) {
            add(prefix + "/" + p.name, p.value);
        }
        for (std::size_t i = 0; i < net.stats.size(); ++i) {
            add(prefix + "/bn" + std::to_string(i) + ".running_mean", net.stats[i].mean);
            add(prefix + "/bn" + std::to_string(i) + ".running_var", net.stats[i].var);
        }
    }
    Json manifest() const { return manifest_; }
    const std::vector<double>& data() const { return data_; }

  private:
    Json manifest_ = Json::array();
    std::vector<double> data_;
};

class TensorReader {
  public:
    TensorReader(const Json& manifest, std::vector<double> data) : data_(std::move(data)) {
        for (const auto& entry : manifest) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            const auto offset = entry.at("offset").get<std::size_t>();
            if (shape.size() != 2) {
                throw std::invalid_argument("checkpoint tensor " + name + " must have a 2-element shape");
            }
            const Shape s{shape[0], shape[1]};
            if (offset + s.size() > data_.size()) {
                throw std::invalid_argument("checkpoint tensor " + name + " runs past the end of the data");
            }
            entries_[name] = {s, offset};
        }
    }

    void read(const std::string& name, Tensor& into) const {
        const auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw std::invalid_argument("checkpoint is missing tensor " + name);
        }
        const auto& [shape, offset] = it->second;
        if (!(shape == into.shape())) {
            throw std::invalid_argument("checkpoint tensor " + name + " has shape " + shape.str() +
                                        ", configuration expects " + into.shape().str());
        }
        const auto first = data_.begin() + static_cast<std::ptrdiff_t>(offset);
        into = Tensor(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(shape.size())));
    }

    void read_network(const std::string& prefix, nn::Network& net) const {
        for (auto& p : net.params) {
            read(prefix + "/" + p.name, p.value);
        }
        for (std::size_t i = 0; i < net.stats.size(); ++i) {
            read(prefix + "/bn" + std::to_string(i) + ".running_mean", net.stats[i].mean);
            read(prefix + "/bn" + std::to_string(i) + ".running_var", net.stats[i].var);
        }
    }

  private:
    std::vector<double> data_;
    std::map<std::string, std::pair<Shape, std::size_t>> entries_;
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, const train::TrainConfig& cfg,
                     const train::TrainState& state) {
    const auto& es = state.encoder.state();
    TensorWriter w;
    w.add_network("online", es.online);
    if (es.target) {
        w.add_network("target", *es.target);
    }
    w.add_network("predictor", es.predictor);
    for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
        w.add("adam/m" + std::to_string(i), state.adam.m[i]);
        w.add("adam/v" + std::to_string(i), state.adam.v[i]);
    }
    Json j;
    j["format"] = kHeader;
    j["epoch"] = state.epochs_done;
    j["adam_step"] = state.adam.step;
    j["adam_slots"] = state.adam.m.size();
    j["config"] = config::to_json(cfg);
    j["tensors"] = w.manifest();
    j["data"] = w.data();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) {
            throw std::runtime_error("cannot write checkpoint " + tmp.string());
        }
        out << j.dump() << '\n';
        if (!out) {
            throw std::runtime_error("failed while writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw std::invalid_argument("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", std::string()) != kHeader) {
        throw std::invalid_argument("checkpoint " + path.string() + " does not start with header " +
                                    std::string(kHeader));
    }
    Checkpoint ck;
    ck.config = config::parse_train_config(j.at("config"));
    ck.state = train::init_train_state(ck.config);
    const TensorReader r(j.at("tensors"), j.at("data").get<std::vector<double>>());
    auto& es = ck.state.encoder.state();
    r.read_network("online", es.online);
    if (es.target) {
        r.read_network("target", *es.target);
    }
    r.read_network("predictor", es.predictor);
    const auto slots = j.at("adam_slots").get<std::size_t>();
    const auto params = train::trainable_parameters(ck.state.encoder);
    if (slots != 0 && slots != params.size()) {
        throw std::invalid_argument("checkpoint holds " + std::to_string(slots) + " optimizer slots for " +
                                    std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < slots; ++i) {
        Tensor m(params[i]->shape());
        Tensor v(params[i]->shape());
        r.read("adam/m" + std::to_string(i), m);
        r.read("adam/v" + std::to_string(i), v);
        ck.state.adam.m.push_back(std::move(m));
        ck.state.adam.v.push_back(std::move(v));
    }
    ck.state.adam.step = j.at("adam_step").get<std::uint64_t>();
    ck.state.epochs_done = j.at("epoch").get<std::size_t>();
    return ck;
}

} // namespace vgssl::ckpt
