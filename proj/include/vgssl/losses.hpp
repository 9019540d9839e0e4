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

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vgssl::loss {

enum class Method { Triplet, SimCLR, MoCov2, BYOL, SimSiam, BarlowTwins, VICReg };

/// Short name used in run labels ("BT" for Barlow Twins).
std::string_view method_name(Method m);
/// Accepts the short names plus "BarlowTwins".
Method parse_method(std::string_view name);

struct LossConfig {
    Method method = Method::SimCLR;
    double tau = 0.07;
    double margin = 0.1;
    double lambda_bt = 5e-3;
    double lambda_inv = 25.0;
    double lambda_var = 25.0;
    double lambda_cov = 1.0;
    double std_margin = 1.0;
    bool symmetric = true;
    bool normalize_inputs = true;
    /// Evaluates the unsigned InfoNCE variant (no leading minus, positive
    /// excluded from the denominator) instead of the standard loss.
    /// Inspection only; never used for training.
    bool literal_infonce = false;

    /// Defaults for a method, including its normalization policy.
    static LossConfig defaults_for(Method m);
    void validate() const;
};

struct LossOutput {
    ad::Value value;
    std::map<std::string, double> terms;

    double item() const { return value.item(); }
};

/// Divides each row by its L2 norm; rows with norm <= 1e-12 raise NumericError.
ad::Value l2_normalize_rows(const ad::Value& x);

/// mean_b max(|q_b - p_b| - |q_b - n_b| + margin, 0) on row-normalized inputs.
LossOutput triplet_margin_loss(const ad::Value& q, const ad::Value& kp, const ad::Value& kn, double margin);

/// In-batch InfoNCE: mean_b -log softmax_b(q_b . kp_i / tau) over all i, positive included.
LossOutput infonce_loss(const ad::Value& q, const ad::Value& kp, double tau, bool symmetric);

/// Unsigned variant with the positive left out of the denominator: mean_b log(exp(s_bb) / sum_{i != b} exp(s_bi)).
LossOutput infonce_literal(const ad::Value& q, const ad::Value& kp, double tau);

/// mean_b 2 - 2 cos(pred_b, target_b); target is expected to be gradient-free.
LossOutput embedding_prediction_loss(const ad::Value& pred, const ad::Value& target);
/// Symmetric form: the average of both prediction directions.
LossOutput embedding_prediction_loss(const ad::Value& pred_a, const ad::Value& target_b, const ad::Value& pred_b,
                                     const ad::Value& target_a);

/// Non-centered cross-correlation C_ij = sum_b q_bi k_bj / (|q_:i| |k_:j|).
ad::Value cross_correlation_matrix(const ad::Value& q, const ad::Value& kp);

/// sum_i (1 - C_ii)^2 + lambda sum_{i != j} C_ij^2.
LossOutput barlow_twins_loss(const ad::Value& c, double lambda);

/// Invariance + variance hinge + covariance penalty, each reported in terms.
LossOutput vicreg_loss(const ad::Value& q, const ad::Value& kp, double lambda_inv, double lambda_var,
                       double lambda_cov, double std_margin);

/// Embeddings available to a loss for one batch.
///
/// online_a / online_b are the online encoder outputs of the two views
/// (query and partner). target_* come from the target branch and pred_* from
/// the predictor applied to the online outputs. negatives is only set for
/// triplet batches.
struct BranchEmbeddings {
    std::optional<ad::Value> online_a;
    std::optional<ad::Value> online_b;
    std::optional<ad::Value> target_a;
    std::optional<ad::Value> target_b;
    std::optional<ad::Value> pred_a;
    std::optional<ad::Value> pred_b;
    std::optional<ad::Value> negatives;
};

/// Names of the per-term breakdown compute_loss reports for cfg, ascending.
std::vector<std::string> loss_term_names(const LossConfig& cfg);

/// Method dispatch. Identical-negative pairs need no special handling: their
/// two views simply coincide.
LossOutput compute_loss(const LossConfig& cfg, const BranchEmbeddings& emb);

} // namespace vgssl::loss
