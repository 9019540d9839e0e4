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

#include "vgssl/encoder.hpp"

#include "vgssl/errors.hpp"
#include "vgssl/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace vgssl::nn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Value;

void EncoderConfig::validate() const {
    if (input_dim == 0 || embed_dim == 0) {
        throw std::invalid_argument("encoder dims must be positive");
    }
    for (auto h : hidden_dims) {
        if (h == 0) {
            throw std::invalid_argument("encoder hidden widths must be positive");
        }
    }
    if (identity_projection) {
        if (embed_dim != trunk_width()) {
            throw std::invalid_argument("identity projection needs embed_dim (" + std::to_string(embed_dim) +
                                        ") equal to the trunk width (" + std::to_string(trunk_width()) + ")");
        }
    } else if (proj_layers < 1) {
        throw std::invalid_argument("projection head needs at least one layer (L >= 1)");
    }
    if (!(momentum >= 0.0 && momentum <= 1.0)) {
        throw std::invalid_argument("momentum must lie in [0, 1]");
    }
    if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0)) {
        throw std::invalid_argument("batchnorm eps must be positive and momentum in [0, 1]");
    }
}

std::size_t EncoderConfig::trunk_width() const { return hidden_dims.empty() ? input_dim : hidden_dims.back(); }

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.value.size();
    }
    return n;
}

bool Network::operator==(const Network& other) const {
    if (params.size() != other.params.size() || stats.size() != other.stats.size()) {
        return false;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != other.params[i].name || !(params[i].value == other.params[i].value)) {
            return false;
        }
    }
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (!(stats[i].mean == other.stats[i].mean) || !(stats[i].var == other.stats[i].var)) {
            return false;
        }
    }
    return true;
}

std::size_t projection_parameter_count(const EncoderConfig& cfg) {
    if (cfg.identity_projection) {
        return 0;
    }
    const std::size_t d = cfg.embed_dim;
    const std::size_t hidden = cfg.proj_layers - 1;
    std::size_t n = cfg.trunk_width() * d + d + hidden * (d * d + d);
    if (cfg.proj_batchnorm) {
        n += hidden * 2 * d;
    }
    return n;
}

std::size_t count_projection_parameters(const EncoderConfig& /*cfg*/, const Network& net) {
    std::size_t n = 0;
    for (const auto& p : net.params) {
        if (p.name.starts_with("proj.")) {
            n += p.value.size();
        }
    }
    return n;
}

namespace {

void add_affine(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w(Shape{in, out});
    for (auto& v : w.data()) {
        v = rng.uniform(-bound, bound);
    }
    Tensor b(Shape{1, out});
    for (auto& v : b.data()) {
        v = rng.uniform(-bound, bound);
    }
    params.push_back({prefix + ".weight", std::move(w)});
    params.push_back({prefix + ".bias", std::move(b)});
}

void add_batchnorm(Network& net, const std::string& prefix, std::size_t width) {
    net.params.push_back({prefix + ".bn.gamma", Tensor(Shape{1, width}, 1.0)});
    net.params.push_back({prefix + ".bn.beta", Tensor(Shape{1, width}, 0.0)});
    net.stats.push_back({Tensor(Shape{1, width}, 0.0), Tensor(Shape{1, width}, 1.0)});
}

Value affine(const Value& x, const Value& w, const Value& b) {
    Value y = ad::matmul(x, w);
    return y + ad::broadcast(b, y.shape());
}

struct BatchNormContext {
    const EncoderConfig* cfg;
    bool training;
    bool update;
};

Value batchnorm(const Value& x, const Value& gamma, const Value& beta, BatchNormStats* running,
                const BatchNormStats& stats, const BatchNormContext& ctx) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    Value normalized;
    if (ctx.training) {
        if (s.rows < 2) {
            throw std::invalid_argument("batch normalization in training mode needs at least 2 rows, got " +
                                        std::to_string(s.rows));
        }
        Value mu = ad::mean(x, 0);
        Value centered = x - ad::broadcast(mu, s);
        Value var = ad::mean(ad::square(centered), 0);
        Value denom = ad::sqrt(ad::add_scalar(var, ctx.cfg->bn_eps));
        normalized = centered / ad::broadcast(denom, s);
        if (ctx.update && running != nullptr) {
            const double m = ctx.cfg->bn_momentum;
            const double unbias = static_cast<double>(s.rows) / static_cast<double>(s.rows - 1);
            for (std::size_t c = 0; c < s.cols; ++c) {
                running->mean[c] = (1.0 - m) * running->mean[c] + m * mu.value()[c];
                running->var[c] = (1.0 - m) * running->var[c] + m * var.value()[c] * unbias;
            }
        }
    } else {
        Tensor shift(Shape{1, s.cols});
        Tensor denom(Shape{1, s.cols});
        for (std::size_t c = 0; c < s.cols; ++c) {
            shift[c] = stats.mean[c];
            denom[c] = std::sqrt(stats.var[c] + ctx.cfg->bn_eps);
        }
        normalized = (x - ad::broadcast(tape.constant(std::move(shift)), s)) /
                     ad::broadcast(tape.constant(std::move(denom)), s);
    }
    return normalized * ad::broadcast(gamma, s) + ad::broadcast(beta, s);
}

std::vector<Value> leaves_for(Tape& tape, const Network& net, bool differentiable) {
    std::vector<Value> leaves;
    leaves.reserve(net.params.size());
    for (const auto& p : net.params) {
        leaves.push_back(differentiable ? tape.leaf(p.value) : tape.constant(p.value));
    }
    return leaves;
}

} // namespace

Encoder::Encoder(EncoderConfig cfg, EncoderState state) : cfg_(std::move(cfg)), state_(std::move(state)) {
    cfg_.validate();
}

Encoder Encoder::init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    EncoderState state;
    Network& net = state.online;
    std::size_t width = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
        add_affine(net.params, "trunk." + std::to_string(i), width, cfg.hidden_dims[i], rng);
        width = cfg.hidden_dims[i];
    }
    if (!cfg.identity_projection) {
        for (std::size_t l = 0; l < cfg.proj_layers; ++l) {
            const std::string prefix = "proj." + std::to_string(l);
            add_affine(net.params, prefix, width, cfg.embed_dim, rng);
            width = cfg.embed_dim;
            if (cfg.proj_batchnorm && l + 1 < cfg.proj_layers) {
                add_batchnorm(net, prefix, width);
            }
        }
    }
    if (cfg.predictor) {
        add_affine(state.predictor.params, "pred.0", cfg.embed_dim, cfg.embed_dim, rng);
        add_batchnorm(state.predictor, "pred.0", cfg.embed_dim);
        add_affine(state.predictor.params, "pred.1", cfg.embed_dim, cfg.embed_dim, rng);
    }
    if (cfg.momentum_target) {
        state.target = state.online;
    }
    return Encoder(cfg, std::move(state));
}

Binding Encoder::bind(Tape& tape, const Network* target_source) const {
    Binding b;
    b.tape = &tape;
    b.online = leaves_for(tape, state_.online, true);
    b.predictor = leaves_for(tape, state_.predictor, true);
    if (cfg_.stop_grad_target) {
        const Network& source =
            target_source != nullptr ? *target_source : (state_.target ? *state_.target : state_.online);
        b.target_leaves = leaves_for(tape, source, true);
    }
    return b;
}

Value Encoder::run_network(const std::vector<Value>& leaves, Network* stats_owner,
                           const Network& stats_source, const Value& batch, bool training,
                           bool update_stats) const {
    if (batch.shape().cols != cfg_.input_dim) {
        throw std::invalid_argument("encoder input width " + std::to_string(batch.shape().cols) +
                                    " does not match input_dim " + std::to_string(cfg_.input_dim));
    }
    const BatchNormContext ctx{&cfg_, training, update_stats};
    std::size_t idx = 0;
    std::size_t bn = 0;
    Value h = batch;
    for (std::size_t i = 0; i < cfg_.hidden_dims.size(); ++i) {
        h = ad::relu(affine(h, leaves[idx], leaves[idx + 1]));
        idx += 2;
    }
    if (cfg_.identity_projection) {
        return h;
    }
    for (std::size_t l = 0; l < cfg_.proj_layers; ++l) {
        h = affine(h, leaves[idx], leaves[idx + 1]);
        idx += 2;
        if (l + 1 == cfg_.proj_layers) {
            break;
        }
        if (cfg_.proj_batchnorm) {
            BatchNormStats* running = stats_owner != nullptr ? &stats_owner->stats[bn] : nullptr;
            h = batchnorm(h, leaves[idx], leaves[idx + 1], running, stats_source.stats[bn], ctx);
            idx += 2;
            ++bn;
        }
        h = ad::relu(h);
    }
    return h;
}

Value Encoder::forward(Binding& binding, const Value& batch, Branch branch, bool training) {
    Tape& tape = *binding.tape;
    const bool update = training && binding.update_running_stats;
    if (branch == Branch::Online) {
        return run_network(binding.online, update ? &state_.online : nullptr, state_.online, batch, training,
                           update);
    }
    if (!cfg_.has_target_branch()) {
        throw std::invalid_argument("target branch requested but the encoder has neither a momentum target "
                                    "nor stop-gradient target");
    }
    const Network& stats_source = state_.target ? *state_.target : state_.online;
    if (cfg_.stop_grad_target) {
        Value out = run_network(binding.target_leaves, nullptr, stats_source, batch, training, false);
        return ad::stop_gradient(out);
    }
    Tape scratch;
    const auto leaves = leaves_for(scratch, *state_.target, false);
    Value out = run_network(leaves, nullptr, stats_source, scratch.constant(batch.value()), training,
                            false);
    return tape.constant(out.value());
}

Value Encoder::predictor_forward(Binding& binding, const Value& z, bool training) {
    if (!cfg_.predictor) {
        throw InvalidState("predictor_forward called on an encoder without a predictor");
    }
    if (z.shape().cols != cfg_.embed_dim) {
        throw std::invalid_argument("predictor input width " + std::to_string(z.shape().cols) +
                                    " does not match embed_dim " + std::to_string(cfg_.embed_dim));
    }
    const bool update = training && binding.update_running_stats;
    const BatchNormContext ctx{&cfg_, training, update};
    const auto& p = binding.predictor;
    Value h = affine(z, p[0], p[1]);
    h = batchnorm(h, p[2], p[3], update ? &state_.predictor.stats[0] : nullptr, state_.predictor.stats[0], ctx);
    h = ad::relu(h);
    return affine(h, p[4], p[5]);
}

void Encoder::momentum_update(double m) {
    if (!state_.target) {
        throw InvalidState("momentum_update needs a momentum target encoder");
    }
    if (!(m >= 0.0 && m <= 1.0)) {
        throw std::invalid_argument("momentum must lie in [0, 1]");
    }
    const auto blend = [m](Tensor& target, const Tensor& online) {
        for (std::size_t i = 0; i < target.size(); ++i) {
            target[i] = m * target[i] + (1.0 - m) * online[i];
        }
    };
    Network& target = *state_.target;
    for (std::size_t i = 0; i < target.params.size(); ++i) {
        blend(target.params[i].value, state_.online.params[i].value);
    }
    for (std::size_t i = 0; i < target.stats.size(); ++i) {
        blend(target.stats[i].mean, state_.online.stats[i].mean);
        blend(target.stats[i].var, state_.online.stats[i].var);
    }
}

Tensor Encoder::embed(const Tensor& batch) const {
    Tape tape;
    const auto leaves = leaves_for(tape, state_.online, false);
    return run_network(leaves, nullptr, state_.online, tape.constant(batch), false, false).value();
}

} // namespace vgssl::nn
