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

#include "vgssl/losses.hpp"
#include "vgssl/method.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vgssl::gradcheck {

/// Small-dimension settings for finite-difference checks.
struct Options {
    std::size_t instances = 20;
    std::size_t batch = 6;
    std::size_t input_dim = 6;
    std::vector<std::size_t> hidden_dims{8};
    std::size_t embed_dim = 5;
    std::size_t proj_layers = 2;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    /// Test hook: negate the analytic gradient of this method.
    std::optional<loss::Method> inject_fault;
};

struct Result {
    loss::Method method = loss::Method::SimCLR;
    std::size_t instances = 0;
    std::size_t parameters = 0;
    double max_rel_error = 0.0;
    bool pass = false;
};

/// |a - b| / max(|a|, |b|, 1e-6) over whole vectors.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Compares the analytic gradient of the full training loss (encoder,
/// normalization, projection head, predictor, stop-gradient target) with
/// central differences for every online and predictor parameter.
Result check_method(loss::Method method, const Options& opts);
std::vector<Result> run_gradcheck(std::span<const loss::Method> methods, const Options& opts);

/// The preset used by the checks, with randomized batch-norm affine
/// parameters and a target encoder that has drifted away from the online one.
train::MethodConfig check_config(loss::Method method, const Options& opts);
nn::Encoder randomized_encoder(const train::MethodConfig& mc, std::uint64_t seed);

/// Gradient-flow inspection of one training step.
struct FlowAudit {
    loss::Method method = loss::Method::SimCLR;
    train::FeatureFlags expected;
    train::FeatureFlags observed;
    bool online_receives_gradient = false;
    bool pass = false;
    std::string detail;
};

/// Observes which features are active from one step: a momentum encoder that
/// never receives gradient and moves only by momentum_update; stop-gradient
/// nodes whose upstream target leaves end with exactly zero gradient; predictor
/// parameters with nonzero gradient; batch-norm parameters with nonzero gradient.
FlowAudit audit_gradient_flow(loss::Method method, std::uint64_t seed);

} // namespace vgssl::gradcheck
