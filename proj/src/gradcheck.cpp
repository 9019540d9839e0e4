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

#include "vgssl/gradcheck.hpp"

#include "vgssl/rng.hpp"
#include "vgssl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vgssl::gradcheck {

using ad::Shape;
using ad::Tensor;
using loss::Method;

namespace {

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(Shape{rows, cols});
    for (auto& v : t.data()) {
        v = rng.normal();
    }
    return t;
}

train::StepInputs random_inputs(const train::MethodConfig& mc, std::size_t batch, Rng& rng) {
    const std::size_t f = mc.encoder.input_dim;
    train::StepInputs in{random_matrix(rng, batch, f), random_matrix(rng, batch, f), std::nullopt};
    if (mc.method() == Method::Triplet) {
        in.negatives = random_matrix(rng, batch, f);
    }
    return in;
}

double loss_value(nn::Encoder& enc, const train::MethodConfig& mc, const train::StepInputs& in,
                  const nn::Network& frozen_target) {
    ad::Tape tape;
    return train::build_step(enc, mc, tape, in, false, &frozen_target).loss.item();
}

double norm(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

} // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) {
        throw std::invalid_argument("relative_error: lengths " + std::to_string(analytic.size()) + " and " +
                                    std::to_string(numeric.size()) + " differ");
    }
    double diff = 0.0;
    double na = 0.0;
    double nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
}

train::MethodConfig check_config(Method method, const Options& opts) {
    auto mc = train::MethodConfig::preset(method, opts.input_dim, opts.proj_layers, opts.embed_dim, 0.0);
    mc.encoder.hidden_dims = opts.hidden_dims;
    if (method == Method::Triplet) {
        mc.encoder.embed_dim = mc.encoder.trunk_width();
    }
    return mc;
}

nn::Encoder randomized_encoder(const train::MethodConfig& mc, std::uint64_t seed) {
    nn::Encoder enc = nn::Encoder::init(mc.encoder, seed);
    Rng rng(derive_seed(seed, 1));
    auto jitter_bn = [&](nn::Network& net) {
        for (auto& p : net.params) {
            if (p.name.ends_with("bn.gamma") || p.name.ends_with("bn.beta")) {
                for (auto& v : p.value.data()) {
                    v += 0.2 * rng.normal();
                }
            }
        }
    };
    jitter_bn(enc.state().online);
    jitter_bn(enc.state().predictor);
    if (auto& target = enc.state().target) {
        *target = enc.state().online;
        for (auto& p : target->params) {
            for (auto& v : p.value.data()) {
                v += 0.05 * rng.normal();
            }
        }
    }
    return enc;
}

Result check_method(Method method, const Options& opts) {
    Result res;
    res.method = method;
    const auto mc = check_config(method, opts);
    mc.validate();
    for (std::size_t inst = 0; inst < opts.instances; ++inst) {
        const std::uint64_t seed = derive_seed(opts.seed, 1000 * static_cast<std::uint64_t>(method) + inst);
        nn::Encoder enc = randomized_encoder(mc, seed);
        Rng rng(derive_seed(seed, 2));
        const auto inputs = random_inputs(mc, opts.batch, rng);
        const nn::Network frozen = enc.state().target ? *enc.state().target : enc.state().online;

        ad::Tape tape;
        const auto g = train::build_step(enc, mc, tape, inputs, false, &frozen);
        tape.backward(g.loss.value);
        std::vector<double> analytic;
        for (const auto& leaf : g.binding.online) {
            const auto gt = tape.grad(leaf);
            analytic.insert(analytic.end(), gt.values().begin(), gt.values().end());
        }
        for (const auto& leaf : g.binding.predictor) {
            const auto gt = tape.grad(leaf);
            analytic.insert(analytic.end(), gt.values().begin(), gt.values().end());
        }
        if (opts.inject_fault && *opts.inject_fault == method) {
            for (auto& v : analytic) {
                v = -v;
            }
        }

        std::vector<double> numeric;
        for (auto* param : train::trainable_parameters(enc)) {
            for (std::size_t j = 0; j < param->size(); ++j) {
                const double saved = (*param)[j];
                (*param)[j] = saved + opts.step;
                const double up = loss_value(enc, mc, inputs, frozen);
                (*param)[j] = saved - opts.step;
                const double down = loss_value(enc, mc, inputs, frozen);
                (*param)[j] = saved;
                numeric.push_back((up - down) / (2.0 * opts.step));
            }
        }
        res.parameters = numeric.size();
        res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, numeric));
        ++res.instances;
    }
    res.pass = res.max_rel_error < opts.tolerance;
    return res;
}

std::vector<Result> run_gradcheck(std::span<const Method> methods, const Options& opts) {
    std::vector<Result> out(methods.size());
    const auto n = static_cast<std::ptrdiff_t>(methods.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = check_method(methods[static_cast<std::size_t>(i)], opts);
    }
    return out;
}

FlowAudit audit_gradient_flow(Method method, std::uint64_t seed) {
    FlowAudit a;
    a.method = method;
    a.expected = train::reference_flags(method);
    Options opts;
    const auto mc = check_config(method, opts);
    nn::Encoder enc = randomized_encoder(mc, seed);
    Rng rng(derive_seed(seed, 3));
    const auto inputs = random_inputs(mc, 8, rng);

    ad::Tape tape;
    const auto g = train::build_step(enc, mc, tape, inputs);
    tape.backward(g.loss.value);
    std::ostringstream detail;

    const auto& online = enc.state().online.params;
    for (std::size_t i = 0; i < g.binding.online.size(); ++i) {
        const double n = norm(tape.grad(g.binding.online[i]));
        a.online_receives_gradient = a.online_receives_gradient || n > 0.0;
        if (online[i].name.find(".bn.") != std::string::npos && n > 0.0) {
            a.observed.batchnorm = true;
        }
    }

    const auto& pred = enc.state().predictor.params;
    bool all_pred = !g.binding.predictor.empty();
    for (std::size_t i = 0; i < g.binding.predictor.size(); ++i) {
        const double n = norm(tape.grad(g.binding.predictor[i]));
        all_pred = all_pred && n > 0.0;
        if (pred[i].name.find(".bn.") != std::string::npos && n > 0.0) {
            a.observed.batchnorm = true;
        }
    }
    a.observed.predictor = all_pred;

    bool has_stop = false;
    for (std::size_t id = 0; id < tape.size(); ++id) {
        has_stop = has_stop || tape.op(id) == ad::Op::StopGradient;
    }
    bool target_leaves_zero = true;
    for (const auto& leaf : g.binding.target_leaves) {
        target_leaves_zero = target_leaves_zero && norm(tape.grad(leaf)) == 0.0;
    }
    a.observed.stop_gradient = has_stop && !g.binding.target_leaves.empty() && target_leaves_zero;
    if (has_stop && !target_leaves_zero) {
        detail << "gradient leaked through stop-gradient; ";
    }

    if (enc.state().target) {
        // The target must be untouched by the optimizer and follow the moving average exactly.
        const nn::Network before = *enc.state().target;
        std::vector<Tensor> grads;
        for (const auto& leaf : g.binding.online) {
            grads.push_back(tape.grad(leaf));
        }
        for (const auto& leaf : g.binding.predictor) {
            grads.push_back(tape.grad(leaf));
        }
        train::AdamState adam;
        train::AdamConfig ac;
        ac.lr = 1e-2;
        const auto params = train::trainable_parameters(enc);
        train::adam_step(params, grads, adam, ac);
        const bool untouched = *enc.state().target == before;
        const double m = mc.encoder.momentum;
        enc.momentum_update(m);
        bool follows = true;
        const auto& after = *enc.state().target;
        for (std::size_t i = 0; i < after.params.size(); ++i) {
            for (std::size_t j = 0; j < after.params[i].value.size(); ++j) {
                const double expect =
                    m * before.params[i].value[j] + (1.0 - m) * enc.state().online.params[i].value[j];
                follows = follows && after.params[i].value[j] == expect;
            }
        }
        a.observed.momentum_encoder = untouched && follows && !(after == before);
        if (!untouched) {
            detail << "optimizer modified the target encoder; ";
        }
    }

    a.pass = a.online_receives_gradient && a.observed == a.expected;
    if (!a.online_receives_gradient) {
        detail << "online encoder received no gradient; ";
    }
    a.detail = detail.str();
    return a;
}

} // namespace vgssl::gradcheck
