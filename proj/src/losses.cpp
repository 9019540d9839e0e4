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

#include "vgssl/losses.hpp"

#include "vgssl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vgssl::loss {

using ad::Shape;
using ad::Tensor;
using ad::Value;

namespace {

constexpr double kMinRowNorm = 1e-12;
constexpr double kVarianceEps = 1e-4;

void require_same_shape(const Value& a, const Value& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
}

Value identity_mask(ad::Tape& tape, std::size_t n) { return tape.constant(Tensor::identity(n)); }

Value off_diagonal_mask(ad::Tape& tape, std::size_t n) {
    Tensor mask(Shape{n, n}, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        mask(i, i) = 0.0;
    }
    return tape.constant(std::move(mask));
}

/// Row-wise log-sum-exp, shifted by the (constant) row maximum.
Value logsumexp_rows(const Value& logits) {
    const auto& x = logits.value();
    Tensor shift(Shape{x.rows(), 1});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double m = x(r, 0);
        for (std::size_t c = 1; c < x.cols(); ++c) {
            m = std::max(m, x(r, c));
        }
        shift[r] = m;
    }
    Value c = logits.tape().constant(std::move(shift));
    Value shifted = logits - ad::broadcast(c, logits.shape());
    return ad::log(ad::sum(ad::exp(shifted), 1)) + c;
}

/// One direction of InfoNCE: anchors attend over all keys.
Value infonce_direction(const Value& anchors, const Value& keys, double tau) {
    Value logits = ad::matmul(anchors, ad::transpose(keys)) * (1.0 / tau);
    Value positive = ad::sum(anchors * keys, 1) * (1.0 / tau);
    return ad::mean(logsumexp_rows(logits) - positive);
}

Value half_sum(const Value& a, const Value& b) { return (a + b) * 0.5; }

const Value& need(const std::optional<Value>& v, Method m, const char* branch) {
    if (!v) {
        throw std::invalid_argument(std::string(method_name(m)) + " loss needs the " + branch + " embeddings");
    }
    return *v;
}

/// Population standard deviation of each column, with eps under the root (1xD).
Value column_std(const Value& centered) {
    return ad::sqrt(ad::add_scalar(ad::mean(ad::square(centered), 0), kVarianceEps));
}

Value center_columns(const Value& x) { return x - ad::broadcast(ad::mean(x, 0), x.shape()); }

} // namespace

std::string_view method_name(Method m) {
    switch (m) {
    case Method::Triplet: return "Triplet";
    case Method::SimCLR: return "SimCLR";
    case Method::MoCov2: return "MoCov2";
    case Method::BYOL: return "BYOL";
    case Method::SimSiam: return "SimSiam";
    case Method::BarlowTwins: return "BT";
    case Method::VICReg: return "VICReg";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (auto m : {Method::Triplet, Method::SimCLR, Method::MoCov2, Method::BYOL, Method::SimSiam,
                   Method::BarlowTwins, Method::VICReg}) {
        if (name == method_name(m)) {
            return m;
        }
    }
    if (name == "BarlowTwins") {
        return Method::BarlowTwins;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) +
                                "' (expected Triplet, SimCLR, MoCov2, BYOL, SimSiam, BT or VICReg)");
}

LossConfig LossConfig::defaults_for(Method m) {
    LossConfig cfg;
    cfg.method = m;
    cfg.normalize_inputs = m != Method::BarlowTwins && m != Method::VICReg;
    cfg.symmetric = m == Method::SimCLR || m == Method::MoCov2 || m == Method::BYOL || m == Method::SimSiam;
    return cfg;
}

void LossConfig::validate() const {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("tau must be positive");
    }
    if (!(margin >= 0.0) || !(lambda_bt >= 0.0) || !(lambda_inv >= 0.0) || !(lambda_var >= 0.0) ||
        !(lambda_cov >= 0.0)) {
        throw std::invalid_argument("margin and loss weights must be non-negative");
    }
    if (!(std_margin > 0.0)) {
        throw std::invalid_argument("std_margin must be positive");
    }
    const bool wants_normalized = method != Method::BarlowTwins && method != Method::VICReg;
    if (normalize_inputs != wants_normalized) {
        throw std::invalid_argument(std::string(method_name(method)) + " requires normalize_inputs = " +
                                    (wants_normalized ? "true" : "false"));
    }
}

Value l2_normalize_rows(const Value& x) {
    Value norms = ad::l2norm_rows(x);
    const auto& n = norms.value();
    for (std::size_t r = 0; r < n.size(); ++r) {
        if (!(n[r] > kMinRowNorm)) {
            throw NumericError("cannot L2-normalize row " + std::to_string(r) + ": norm " + std::to_string(n[r]) +
                               " is below 1e-12");
        }
    }
    return x / ad::broadcast(norms, x.shape());
}

LossOutput triplet_margin_loss(const Value& q, const Value& kp, const Value& kn, double margin) {
    require_same_shape(q, kp, "triplet loss");
    require_same_shape(q, kn, "triplet loss");
    Value pos = ad::l2norm_rows(q - kp);
    Value neg = ad::l2norm_rows(q - kn);
    Value hinge = ad::relu(ad::add_scalar(pos - neg, margin));
    LossOutput out{ad::mean(hinge), {}};
    double active = 0.0;
    for (double h : hinge.value().data()) {
        active += h > 0.0 ? 1.0 : 0.0;
    }
    out.terms["active_fraction"] = active / static_cast<double>(hinge.value().size());
    return out;
}

LossOutput infonce_loss(const Value& q, const Value& kp, double tau, bool symmetric) {
    require_same_shape(q, kp, "InfoNCE");
    if (q.shape().rows < 2) {
        throw std::invalid_argument("InfoNCE needs at least 2 rows for in-batch negatives, got " +
                                    std::to_string(q.shape().rows));
    }
    if (!(tau > 0.0)) {
        throw std::invalid_argument("InfoNCE temperature must be positive");
    }
    Value forward = infonce_direction(q, kp, tau);
    if (!symmetric) {
        return {forward, {{"forward", forward.item()}}};
    }
    Value backward = infonce_direction(kp, q, tau);
    return {half_sum(forward, backward), {{"forward", forward.item()}, {"backward", backward.item()}}};
}

LossOutput infonce_literal(const Value& q, const Value& kp, double tau) {
    require_same_shape(q, kp, "InfoNCE");
    if (q.shape().rows < 2) {
        throw std::invalid_argument("InfoNCE needs at least 2 rows, got " + std::to_string(q.shape().rows));
    }
    Value logits = ad::matmul(q, ad::transpose(kp)) * (1.0 / tau);
    Value positive = ad::sum(q * kp, 1) * (1.0 / tau);
    Value others = ad::sum(ad::exp(logits) * off_diagonal_mask(q.tape(), q.shape().rows), 1);
    Value value = ad::mean(positive - ad::log(others));
    return {value, {{"literal", value.item()}}};
}

LossOutput embedding_prediction_loss(const Value& pred, const Value& target) {
    require_same_shape(pred, target, "embedding prediction");
    Value cos = ad::sum(l2_normalize_rows(pred) * l2_normalize_rows(target), 1);
    Value value = ad::add_scalar(ad::mean(cos) * -2.0, 2.0);
    return {value, {{"mean_cosine", ad::mean(cos).item()}}};
}

LossOutput embedding_prediction_loss(const Value& pred_a, const Value& target_b, const Value& pred_b,
                                     const Value& target_a) {
    auto ab = embedding_prediction_loss(pred_a, target_b);
    auto ba = embedding_prediction_loss(pred_b, target_a);
    return {half_sum(ab.value, ba.value), {{"forward", ab.item()}, {"backward", ba.item()}}};
}

Value cross_correlation_matrix(const Value& q, const Value& kp) {
    require_same_shape(q, kp, "cross-correlation");
    Value qn = ad::sqrt(ad::sum(ad::square(q), 0));
    Value kn = ad::sqrt(ad::sum(ad::square(kp), 0));
    for (const auto* norms : {&qn, &kn}) {
        const auto& n = norms->value();
        for (std::size_t c = 0; c < n.size(); ++c) {
            if (!(n[c] > 0.0)) {
                throw NumericError("cross-correlation: column " + std::to_string(c) + " of the " +
                                   (norms == &qn ? "first" : "second") + " input is all zeros");
            }
        }
    }
    Value numerator = ad::matmul(ad::transpose(q), kp);
    Value denominator = ad::matmul(ad::transpose(qn), kn);
    return numerator / denominator;
}

LossOutput barlow_twins_loss(const Value& c, double lambda) {
    const Shape s = c.shape();
    if (s.rows != s.cols) {
        throw std::invalid_argument("Barlow Twins needs a square matrix, got " + s.str());
    }
    ad::Tape& tape = c.tape();
    Value diag = ad::sum(c * identity_mask(tape, s.rows), 1);
    Value on = ad::sum(ad::square(ad::add_scalar(-diag, 1.0)));
    Value off = ad::sum(ad::square(c * off_diagonal_mask(tape, s.rows)));
    Value value = on + off * lambda;
    return {value, {{"on_diagonal", on.item()}, {"off_diagonal", lambda * off.item()}}};
}

LossOutput vicreg_loss(const Value& q, const Value& kp, double lambda_inv, double lambda_var, double lambda_cov,
                       double std_margin) {
    require_same_shape(q, kp, "VICReg");
    const std::size_t n = q.shape().rows;
    const std::size_t d = q.shape().cols;
    if (n < 2) {
        throw std::invalid_argument("VICReg needs at least 2 rows for the covariance, got " + std::to_string(n));
    }
    ad::Tape& tape = q.tape();
    const double nd = static_cast<double>(n * d);
    const double dd = static_cast<double>(d);

    Value invariance = ad::sum(ad::square(q - kp)) * (lambda_inv / nd);

    const Value qc = center_columns(q);
    const Value kc = center_columns(kp);
    const auto hinge = [std_margin](const Value& centered) {
        return ad::sum(ad::relu(ad::add_scalar(-column_std(centered), std_margin)));
    };
    Value variance = (hinge(qc) + hinge(kc)) * (lambda_var / dd);

    const Value mask = off_diagonal_mask(tape, d);
    const auto off_cov = [&](const Value& centered) {
        Value cov = ad::matmul(ad::transpose(centered), centered) * (1.0 / static_cast<double>(n - 1));
        return ad::sum(ad::square(cov * mask));
    };
    Value covariance = (off_cov(qc) + off_cov(kc)) * (lambda_cov / dd);

    Value value = invariance + variance + covariance;
    return {value,
            {{"invariance", invariance.item()}, {"variance", variance.item()}, {"covariance", covariance.item()}}};
}

std::vector<std::string> loss_term_names(const LossConfig& cfg) {
    switch (cfg.method) {
    case Method::Triplet: return {"active_fraction"};
    case Method::SimCLR:
        if (cfg.literal_infonce) {
            return {"literal"};
        }
        return cfg.symmetric ? std::vector<std::string>{"backward", "forward"} : std::vector<std::string>{"forward"};
    case Method::MoCov2:
        return cfg.symmetric ? std::vector<std::string>{"backward", "forward"} : std::vector<std::string>{"forward"};
    case Method::BYOL:
    case Method::SimSiam:
        return cfg.symmetric ? std::vector<std::string>{"backward", "forward"}
                             : std::vector<std::string>{"mean_cosine"};
    case Method::BarlowTwins: return {"off_diagonal", "on_diagonal"};
    case Method::VICReg: return {"covariance", "invariance", "variance"};
    }
    return {};
}

LossOutput compute_loss(const LossConfig& cfg, const BranchEmbeddings& emb) {
    const Method m = cfg.method;
    const auto prep = [&](const Value& v) { return cfg.normalize_inputs ? l2_normalize_rows(v) : v; };
    switch (m) {
    case Method::Triplet:
        if (!emb.negatives) {
            throw std::invalid_argument("Triplet loss needs explicit negatives; pair batches are not accepted");
        }
        return triplet_margin_loss(prep(need(emb.online_a, m, "query")), prep(need(emb.online_b, m, "positive")),
                                   prep(*emb.negatives), cfg.margin);
    case Method::SimCLR: {
        const Value a = prep(need(emb.online_a, m, "online view A"));
        const Value b = prep(need(emb.online_b, m, "online view B"));
        if (cfg.literal_infonce) {
            return infonce_literal(a, b, cfg.tau);
        }
        return infonce_loss(a, b, cfg.tau, cfg.symmetric);
    }
    case Method::MoCov2: {
        const Value q = prep(need(emb.online_a, m, "online view A"));
        const Value k = prep(need(emb.target_b, m, "target view B"));
        auto ab = infonce_loss(q, k, cfg.tau, false);
        if (!cfg.symmetric) {
            return ab;
        }
        auto ba = infonce_loss(prep(need(emb.online_b, m, "online view B")),
                               prep(need(emb.target_a, m, "target view A")), cfg.tau, false);
        return {half_sum(ab.value, ba.value), {{"forward", ab.item()}, {"backward", ba.item()}}};
    }
    case Method::BYOL:
    case Method::SimSiam: {
        const Value& pa = need(emb.pred_a, m, "predictor view A");
        const Value& tb = need(emb.target_b, m, "target view B");
        if (!cfg.symmetric) {
            return embedding_prediction_loss(pa, tb);
        }
        return embedding_prediction_loss(pa, tb, need(emb.pred_b, m, "predictor view B"),
                                         need(emb.target_a, m, "target view A"));
    }
    case Method::BarlowTwins: {
        const Value c = cross_correlation_matrix(prep(need(emb.online_a, m, "online view A")),
                                                 prep(need(emb.online_b, m, "online view B")));
        return barlow_twins_loss(c, cfg.lambda_bt);
    }
    case Method::VICReg:
        return vicreg_loss(prep(need(emb.online_a, m, "online view A")), prep(need(emb.online_b, m, "online view B")),
                           cfg.lambda_inv, cfg.lambda_var, cfg.lambda_cov, cfg.std_margin);
    }
    throw std::invalid_argument("unhandled method");
}

} // namespace vgssl::loss
