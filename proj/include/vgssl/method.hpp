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

#include "vgssl/autodiff.hpp"
#include "vgssl/encoder.hpp"
#include "vgssl/losses.hpp"
#include "vgssl/sampling.hpp"

#include <optional>
#include <string>

namespace vgssl::train {

/// One training strategy: loss, encoder switches, mining (Triplet only) and
/// the database negative ratio eta (pair methods only).
struct MethodConfig {
    loss::LossConfig loss;
    nn::EncoderConfig encoder;
    sampling::MiningConfig mining;
    double eta = 0.0;

    /// Strategy preset: the encoder switches follow the method's published
    /// feature matrix (momentum encoder, stop-gradient, predictor, batch norm).
    /// Triplet ignores proj_layers, embed_dim and eta and uses an identity
    /// projection over the trunk.
    static MethodConfig preset(loss::Method method, std::size_t input_dim, std::size_t proj_layers,
                               std::size_t embed_dim, double eta);

    loss::Method method() const { return loss.method; }
    bool pair_based() const { return loss.method != loss::Method::Triplet; }
    /// Method-FC-L-D-eta, e.g. "SimCLR-FC-1-2048-1"; Triplet runs are
    /// "Triplet", "Triplet-Partial" or "Triplet-Random".
    std::string label() const;
    void validate() const;
};

/// Shortest decimal form of eta used in labels ("1", "0.25").
std::string format_eta(double eta);

/// Learning rate used when none is configured: 1e-5 for SimCLR/MoCov2, 1e-4 otherwise.
double default_learning_rate(loss::Method method);

/// Which training-strategy features a method uses.
struct FeatureFlags {
    bool momentum_encoder = false;
    bool stop_gradient = false;
    bool predictor = false;
    bool batchnorm = false;
    bool operator==(const FeatureFlags&) const = default;
};

/// The reference feature matrix for the six pair methods (all false for Triplet).
FeatureFlags reference_flags(loss::Method method);

/// Raw inputs of one batch. view_a holds anchors (queries, or the repeated
/// database sample of an identical pair), view_b their partners; negatives
/// only for triplet batches.
struct StepInputs {
    ad::Tensor view_a;
    ad::Tensor view_b;
    std::optional<ad::Tensor> negatives;
};

struct StepGraph {
    nn::Binding binding;
    loss::LossOutput loss;
};

/// Builds the full loss of one training step on the tape: encoder branches,
/// predictor and method loss. The predictor consumes L2-normalized online
/// embeddings. target_source is forwarded to Encoder::bind.
StepGraph build_step(nn::Encoder& encoder, const MethodConfig& method, ad::Tape& tape, const StepInputs& inputs,
                     bool update_running_stats = true, const nn::Network* target_source = nullptr);

} // namespace vgssl::train
