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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vgssl::nn {

/// Architecture and training-strategy switches of the feature extractor.
///
/// The trunk (hidden_dims, ReLU after each layer) stands in for local feature
/// extraction plus global aggregation. The projection head has proj_layers
/// affine maps of width embed_dim with optional batch normalization and a
/// ReLU between consecutive maps, none after the last. identity_projection
/// replaces the head entirely; embed_dim must then equal the trunk width.
struct EncoderConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims{64, 64};
    std::size_t embed_dim = 64;
    std::size_t proj_layers = 1;
    bool identity_projection = false;
    bool proj_batchnorm = false;
    bool predictor = false;
    bool momentum_target = false;
    double momentum = 0.99;
    bool stop_grad_target = false;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const;
    /// Width of the trunk output (input_dim when there are no hidden layers).
    std::size_t trunk_width() const;
    bool has_target_branch() const { return momentum_target || stop_grad_target; }
};

struct NamedTensor {
    std::string name;
    ad::Tensor value;
};
using ParamSet = std::vector<NamedTensor>;

/// Running statistics of one batch-normalization layer.
struct BatchNormStats {
    ad::Tensor mean;
    ad::Tensor var;
};

/// Parameters plus running statistics of one network copy.
struct Network {
    ParamSet params;
    std::vector<BatchNormStats> stats;

    std::size_t parameter_count() const;
    bool operator==(const Network& other) const;
};

struct EncoderState {
    Network online;
    std::optional<Network> target;
    Network predictor;
};

enum class Branch { Online, Target };

/// Closed-form number of projection-head parameters for a configuration.
std::size_t projection_parameter_count(const EncoderConfig& cfg);
/// Parameters owned by the projection head in a network built from cfg.
std::size_t count_projection_parameters(const EncoderConfig& cfg, const Network& net);

/// Tape leaves for one training step.
///
/// online and predictor hold one leaf per parameter, aligned with the
/// corresponding ParamSet. target_leaves is populated for stop-gradient
/// configurations: the target branch is rebuilt on the tape from these leaves
/// and then cut by stop_gradient, so inspecting their gradients shows whether
/// anything leaked through the cut.
struct Binding {
    ad::Tape* tape = nullptr;
    std::vector<ad::Value> online;
    std::vector<ad::Value> predictor;
    std::vector<ad::Value> target_leaves;
    bool update_running_stats = true;
};

class Encoder {
  public:
    Encoder() = default;
    Encoder(EncoderConfig cfg, EncoderState state);

    /// Deterministic fan-in uniform initialization; the target starts as an exact copy.
    static Encoder init(const EncoderConfig& cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }
    const EncoderState& state() const { return state_; }
    EncoderState& state() { return state_; }

    /// Registers parameters as tape leaves. target_source overrides the
    /// parameters used to rebuild a stop-gradient target branch (by default
    /// the momentum copy, or the online weights when there is none).
    Binding bind(ad::Tape& tape, const Network* target_source = nullptr) const;

    /// Embeds a batch (N x input_dim -> N x embed_dim).
    ///
    /// Online output is differentiable. Target output never carries gradient:
    /// with stop_grad_target it passes through stop_gradient, otherwise it is
    /// computed off-tape from the momentum weights and inserted as a constant.
    /// In training mode batch normalization uses batch statistics (N >= 2) and
    /// the online branch updates running statistics.
    ad::Value forward(Binding& binding, const ad::Value& batch, Branch branch, bool training);

    /// Two-layer predictor D -> D -> D with batch normalization and ReLU in between.
    ad::Value predictor_forward(Binding& binding, const ad::Value& z, bool training);

    /// target <- m * target + (1 - m) * online for every parameter and running statistic.
    void momentum_update(double m);

    /// Eval-mode online embeddings without gradient tracking.
    ad::Tensor embed(const ad::Tensor& batch) const;

  private:
    ad::Value run_network(const std::vector<ad::Value>& leaves, Network* stats_owner,
                          const Network& stats_source, const ad::Value& batch, bool training,
                          bool update_stats) const;

    EncoderConfig cfg_;
    EncoderState state_;
};

} // namespace vgssl::nn
