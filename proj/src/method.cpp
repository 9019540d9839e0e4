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

#include "vgssl/method.hpp"

#include <charconv>
#include <stdexcept>

namespace vgssl::train {

using loss::Method;

MethodConfig MethodConfig::preset(Method method, std::size_t input_dim, std::size_t proj_layers,
                                  std::size_t embed_dim, double eta) {
    MethodConfig mc;
    mc.loss = loss::LossConfig::defaults_for(method);
    mc.encoder.input_dim = input_dim;
    mc.encoder.proj_layers = proj_layers;
    mc.encoder.embed_dim = embed_dim;
    mc.eta = eta;
    if (method == Method::Triplet) {
        mc.encoder.identity_projection = true;
        mc.encoder.embed_dim = mc.encoder.trunk_width();
        mc.eta = 0.0;
        mc.mining = {sampling::MiningMode::FullHNM, 0};
        return mc;
    }
    const FeatureFlags f = reference_flags(method);
    mc.encoder.momentum_target = f.momentum_encoder;
    mc.encoder.stop_grad_target = f.stop_gradient;
    mc.encoder.predictor = f.predictor;
    mc.encoder.proj_batchnorm = f.batchnorm;
    return mc;
}

std::string format_eta(double eta) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, eta);
    return std::string(buf, res.ptr);
}

std::string MethodConfig::label() const {
    if (loss.method == Method::Triplet) {
        switch (mining.mode) {
        case sampling::MiningMode::FullHNM: return "Triplet";
        case sampling::MiningMode::PartialHNM: return "Triplet-Partial";
        case sampling::MiningMode::Random: return "Triplet-Random";
        }
    }
    return std::string(loss::method_name(loss.method)) + "-FC-" + std::to_string(encoder.proj_layers) + "-" +
           std::to_string(encoder.embed_dim) + "-" + format_eta(eta);
}

void MethodConfig::validate() const {
    loss.validate();
    encoder.validate();
    const Method m = loss.method;
    if (m == Method::Triplet) {
        mining.validate();
        if (eta != 0.0) {
            throw std::invalid_argument("eta applies to pair methods only; Triplet needs eta = 0");
        }
    } else if (!(eta >= 0.0)) {
        throw std::invalid_argument("eta must be >= 0");
    }
    const bool prediction = m == Method::BYOL || m == Method::SimSiam;
    if (encoder.predictor != prediction) {
        throw std::invalid_argument(std::string(loss::method_name(m)) +
                                    (prediction ? " needs a predictor" : " must not use a predictor"));
    }
    if (prediction && !encoder.stop_grad_target) {
        throw std::invalid_argument(std::string(loss::method_name(m)) + " needs a stop-gradient target branch");
    }
    if (m == Method::MoCov2 && !encoder.momentum_target) {
        throw std::invalid_argument("MoCov2 needs a momentum target encoder");
    }
}

double default_learning_rate(Method method) {
    return (method == Method::SimCLR || method == Method::MoCov2) ? 1e-5 : 1e-4;
}

FeatureFlags reference_flags(Method method) {
    switch (method) {
    case Method::Triplet:
    case Method::SimCLR: return {};
    case Method::MoCov2: return {true, false, false, false};
    case Method::BYOL: return {true, true, true, true};
    case Method::SimSiam: return {false, true, true, true};
    case Method::BarlowTwins:
    case Method::VICReg: return {false, false, false, true};
    }
    return {};
}

StepGraph build_step(nn::Encoder& encoder, const MethodConfig& method, ad::Tape& tape, const StepInputs& inputs,
                     bool update_running_stats, const nn::Network* target_source) {
    StepGraph g{encoder.bind(tape, target_source), {}};
    g.binding.update_running_stats = update_running_stats;
    const ad::Value a = tape.constant(inputs.view_a);
    const ad::Value b = tape.constant(inputs.view_b);
    loss::BranchEmbeddings emb;
    emb.online_a = encoder.forward(g.binding, a, nn::Branch::Online, true);
    emb.online_b = encoder.forward(g.binding, b, nn::Branch::Online, true);
    const Method m = method.loss.method;
    if (m == Method::Triplet) {
        if (!inputs.negatives) {
            throw std::invalid_argument("triplet step needs negatives");
        }
        emb.negatives = encoder.forward(g.binding, tape.constant(*inputs.negatives), nn::Branch::Online, true);
    }
    if (m == Method::MoCov2 || m == Method::BYOL || m == Method::SimSiam) {
        emb.target_a = encoder.forward(g.binding, a, nn::Branch::Target, true);
        emb.target_b = encoder.forward(g.binding, b, nn::Branch::Target, true);
    }
    if (encoder.config().predictor) {
        emb.pred_a = encoder.predictor_forward(g.binding, loss::l2_normalize_rows(*emb.online_a), true);
        emb.pred_b = encoder.predictor_forward(g.binding, loss::l2_normalize_rows(*emb.online_b), true);
    }
    g.loss = loss::compute_loss(method.loss, emb);
    return g;
}

} // namespace vgssl::train
