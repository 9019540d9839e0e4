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

#include "vgssl/autodiff.hpp"

#include "vgssl/errors.hpp"
#include "vgssl/kernels.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vgssl::ad {

std::string Shape::str() const {
    std::ostringstream os;
    os << '[' << rows << 'x' << cols << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
        throw std::invalid_argument("tensor of shape " + shape_.str() + " given " +
                                    std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("ragged rows in Tensor::from_rows");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

Tensor Tensor::rows_slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) {
        throw std::invalid_argument("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") out of range for " + shape_.str());
    }
    const auto first = values_.begin() + static_cast<std::ptrdiff_t>(begin * cols());
    const auto last = values_.begin() + static_cast<std::ptrdiff_t>(end * cols());
    return Tensor(Shape{end - begin, cols()}, std::vector<double>(first, last));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
    Tensor out(Shape{rows.size(), cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= this->rows()) {
            throw std::invalid_argument("gather row " + std::to_string(rows[i]) + " out of range for " +
                                        shape_.str());
        }
        std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(rows[i] * cols()), cols(),
                    out.values_.begin() + static_cast<std::ptrdiff_t>(i * cols()));
    }
    return out;
}

const char* op_name(Op op) {
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::ClampMin: return "clamp_min";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::L2NormRows: return "l2norm_rows";
    case Op::Concat: return "concat";
    case Op::SliceRows: return "slice_rows";
    case Op::Broadcast: return "broadcast";
    case Op::StopGradient: return "stop_gradient";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Value / Tape

const Tensor& Value::value() const {
    if (tape_ == nullptr) {
        throw InvalidState("value handle is not attached to a tape");
    }
    return tape_->value_of(id_);
}

double Value::item() const {
    const auto& v = value();
    if (v.shape() != Shape{1, 1}) {
        throw std::invalid_argument("item() needs a 1x1 value, got " + v.shape().str());
    }
    return v[0];
}

Value Tape::leaf(Tensor value) {
    Node node;
    node.op = Op::Leaf;
    node.value = std::move(value);
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

Value Tape::constant(Tensor value) {
    Node node;
    node.op = Op::Constant;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

Value Tape::record(Op op, Tensor value, std::vector<std::size_t> parents, Backward backward) {
    Node node;
    node.op = op;
    node.value = std::move(value);
    for (auto p : parents) {
        node.requires_grad = node.requires_grad || nodes_.at(p).requires_grad;
    }
    if (op == Op::StopGradient) {
        node.requires_grad = false;
    }
    node.parents = std::move(parents);
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

Tensor* Tape::grad_slot(std::size_t id) {
    auto& node = nodes_[id];
    if (!node.requires_grad) {
        return nullptr;
    }
    if (node.grad.size() != node.value.size()) {
        node.grad = Tensor(node.value.shape());
    }
    return &node.grad;
}

void Tape::backward(const Value& loss) {
    if (&loss.tape() != this) {
        throw std::invalid_argument("backward: loss belongs to a different tape");
    }
    if (loss.shape() != Shape{1, 1}) {
        throw std::invalid_argument("backward needs a scalar loss, got shape " + loss.shape().str());
    }
    if (backward_done_) {
        throw InvalidState("backward already ran on this tape; call reset_gradients() first");
    }
    backward_done_ = true;
    if (Tensor* seed = grad_slot(loss.id())) {
        (*seed)[0] = 1.0;
    } else {
        return;
    }
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (node.backward && node.grad.size() == node.value.size() && node.grad.size() > 0) {
            node.backward(*this, i);
        }
    }
}

void Tape::reset_gradients() {
    for (auto& node : nodes_) {
        node.grad = Tensor();
    }
    backward_done_ = false;
}

Tensor Tape::grad(const Value& v) const {
    const auto& node = nodes_.at(v.id());
    if (node.grad.size() == node.value.size() && node.grad.size() > 0) {
        return node.grad;
    }
    return Tensor(node.value.shape());
}

bool Tape::received_gradient(const Value& v) const {
    const auto& node = nodes_.at(v.id());
    if (node.grad.size() != node.value.size()) {
        return false;
    }
    for (double g : node.grad.data()) {
        if (g != 0.0) {
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require_same_tape(const Value& a, const Value& b, const char* op) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
}

void require_same_shape(const Value& a, const Value& b, const char* op) {
    require_same_tape(a, b, op);
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
}

template <typename F> Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = f(x[i]);
    }
    return out;
}

/// Adds scale * g(i) into the gradient of node id for every element.
template <typename F> void accumulate(Tape& tape, std::size_t id, F contribution) {
    if (Tensor* g = tape.grad_slot(id)) {
        for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += contribution(i);
        }
    }
}

} // namespace

Value add(const Value& a, const Value& b) {
    require_same_shape(a, b, "add");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return a.tape().record(Op::Add, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        for (auto p : t.parents(self)) {
            accumulate(t, p, [&](std::size_t i) { return g[i]; });
        }
    });
}

Value sub(const Value& a, const Value& b) {
    require_same_shape(a, b, "sub");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return a.tape().record(Op::Sub, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& ps = t.parents(self);
        accumulate(t, ps[0], [&](std::size_t i) { return g[i]; });
        accumulate(t, ps[1], [&](std::size_t i) { return -g[i]; });
    });
}

Value mul(const Value& a, const Value& b) {
    require_same_shape(a, b, "mul");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return a.tape().record(Op::Mul, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& ps = t.parents(self);
        const auto& x = t.value_of(ps[0]);
        const auto& y = t.value_of(ps[1]);
        accumulate(t, ps[0], [&](std::size_t i) { return g[i] * y[i]; });
        accumulate(t, ps[1], [&](std::size_t i) { return g[i] * x[i]; });
    });
}

Value div(const Value& a, const Value& b) {
    require_same_shape(a, b, "div");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] / y[i];
    }
    return a.tape().record(Op::Div, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& ps = t.parents(self);
        const auto& x = t.value_of(ps[0]);
        const auto& y = t.value_of(ps[1]);
        accumulate(t, ps[0], [&](std::size_t i) { return g[i] / y[i]; });
        accumulate(t, ps[1], [&](std::size_t i) { return -g[i] * x[i] / (y[i] * y[i]); });
    });
}

Value scale(const Value& a, double factor) {
    Tensor out = map(a.value(), [factor](double v) { return v * factor; });
    return a.tape().record(Op::Scale, std::move(out), {a.id()}, [factor](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        accumulate(t, t.parents(self)[0], [&](std::size_t i) { return g[i] * factor; });
    });
}

Value add_scalar(const Value& a, double offset) {
    Tensor out = map(a.value(), [offset](double v) { return v + offset; });
    return a.tape().record(Op::AddScalar, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        accumulate(t, t.parents(self)[0], [&](std::size_t i) { return g[i]; });
    });
}

Value exp(const Value& a) {
    Tensor out = map(a.value(), [](double v) { return std::exp(v); });
    return a.tape().record(Op::Exp, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.value_of(self);
        accumulate(t, t.parents(self)[0], [&](std::size_t i) { return g[i] * y[i]; });
    });
}

Value log(const Value& a) {
    Tensor out = map(a.value(), [](double v) { return std::log(v); });
    return a.tape().record(Op::Log, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto p = t.parents(self)[0];
        const auto& x = t.value_of(p);
        accumulate(t, p, [&](std::size_t i) { return g[i] / x[i]; });
    });
}

Value sqrt(const Value& a) {
    Tensor out = map(a.value(), [](double v) { return std::sqrt(v); });
    return a.tape().record(Op::Sqrt, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.value_of(self);
        accumulate(t, t.parents(self)[0], [&](std::size_t i) { return g[i] * 0.5 / y[i]; });
    });
}

Value clamp_min(const Value& a, double floor) {
    Tensor out = map(a.value(), [floor](double v) { return v > floor ? v : floor; });
    return a.tape().record(Op::ClampMin, std::move(out), {a.id()}, [floor](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto p = t.parents(self)[0];
        const auto& x = t.value_of(p);
        accumulate(t, p, [&](std::size_t i) { return x[i] > floor ? g[i] : 0.0; });
    });
}

Value matmul(const Value& a, const Value& b) {
    require_same_tape(a, b, "matmul");
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.cols() != y.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
    }
    const std::size_t m = x.rows();
    const std::size_t k = x.cols();
    const std::size_t n = y.cols();
    Tensor out(Shape{m, n});
    kernels::matmul(x.data(), y.data(), out.data(), m, k, n);
    return a.tape().record(Op::MatMul, std::move(out), {a.id(), b.id()}, [m, k, n](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& ps = t.parents(self);
        const auto& x = t.value_of(ps[0]);
        const auto& y = t.value_of(ps[1]);
        if (Tensor* gx = t.grad_slot(ps[0])) {
            Tensor contrib(Shape{m, k});
            kernels::matmul_bt(g.data(), y.data(), contrib.data(), m, n, k);
            for (std::size_t i = 0; i < contrib.size(); ++i) {
                (*gx)[i] += contrib[i];
            }
        }
        if (Tensor* gy = t.grad_slot(ps[1])) {
            Tensor contrib(Shape{k, n});
            kernels::matmul_at(x.data(), g.data(), contrib.data(), m, k, n);
            for (std::size_t i = 0; i < contrib.size(); ++i) {
                (*gy)[i] += contrib[i];
            }
        }
    });
}

Value transpose(const Value& a) {
    const auto& x = a.value();
    Tensor out(Shape{x.cols(), x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(c, r) = x(r, c);
        }
    }
    return a.tape().record(Op::Transpose, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto p = t.parents(self)[0];
        if (Tensor* gx = t.grad_slot(p)) {
            for (std::size_t r = 0; r < gx->rows(); ++r) {
                for (std::size_t c = 0; c < gx->cols(); ++c) {
                    (*gx)(r, c) += g(c, r);
                }
            }
        }
    });
}

namespace {

Value reduce(const Value& a, int axis, double factor, Op op) {
    const auto& x = a.value();
    if (axis != -1 && axis != 0 && axis != 1) {
        throw std::invalid_argument("reduction axis must be 0 or 1, got " + std::to_string(axis));
    }
    const Shape out_shape = axis == -1 ? Shape{1, 1} : axis == 0 ? Shape{1, x.cols()} : Shape{x.rows(), 1};
    Tensor out(out_shape);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const std::size_t o = axis == -1 ? 0 : axis == 0 ? c : r;
            out[o] += x(r, c);
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= factor;
    }
    return a.tape().record(op, std::move(out), {a.id()}, [axis, factor](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto p = t.parents(self)[0];
        if (Tensor* gx = t.grad_slot(p)) {
            for (std::size_t r = 0; r < gx->rows(); ++r) {
                for (std::size_t c = 0; c < gx->cols(); ++c) {
                    const std::size_t o = axis == -1 ? 0 : axis == 0 ? c : r;
                    (*gx)(r, c) += g[o] * factor;
                }
            }
        }
    });
}

double reduced_count(const Value& a, int axis) {
    const auto s = a.shape();
    const std::size_t n = axis == -1 ? s.size() : axis == 0 ? s.rows : s.cols;
    if (n == 0) {
        throw std::invalid_argument("mean over an empty axis of " + s.str());
    }
    return static_cast<double>(n);
}

} // namespace

Value sum(const Value& a) { return reduce(a, -1, 1.0, Op::Sum); }
Value sum(const Value& a, int axis) { return reduce(a, axis, 1.0, Op::Sum); }
Value mean(const Value& a) { return reduce(a, -1, 1.0 / reduced_count(a, -1), Op::Mean); }
Value mean(const Value& a, int axis) {
    if (axis != 0 && axis != 1) {
        throw std::invalid_argument("reduction axis must be 0 or 1, got " + std::to_string(axis));
    }
    return reduce(a, axis, 1.0 / reduced_count(a, axis), Op::Mean);
}

Value l2norm_rows(const Value& a) {
    const auto& x = a.value();
    Tensor out(Shape{x.rows(), 1});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            acc += x(r, c) * x(r, c);
        }
        out[r] = std::sqrt(acc);
    }
    return a.tape().record(Op::L2NormRows, std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& norms = t.value_of(self);
        const auto p = t.parents(self)[0];
        const auto& x = t.value_of(p);
        if (Tensor* gx = t.grad_slot(p)) {
            for (std::size_t r = 0; r < x.rows(); ++r) {
                if (norms[r] == 0.0) {
                    continue;
                }
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    (*gx)(r, c) += g[r] * x(r, c) / norms[r];
                }
            }
        }
    });
}

Value concat(const Value& a, const Value& b, int axis) {
    require_same_tape(a, b, "concat");
    const auto& x = a.value();
    const auto& y = b.value();
    if (axis == 0) {
        if (x.cols() != y.cols()) {
            throw std::invalid_argument("concat rows: shape mismatch " + x.shape().str() + " vs " +
                                        y.shape().str());
        }
        std::vector<double> values(x.values());
        values.insert(values.end(), y.values().begin(), y.values().end());
        Tensor out(Shape{x.rows() + y.rows(), x.cols()}, std::move(values));
        return a.tape().record(Op::Concat, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
            const auto& g = t.grad_of(self);
            const auto& ps = t.parents(self);
            const std::size_t offset = t.value_of(ps[0]).size();
            accumulate(t, ps[0], [&](std::size_t i) { return g[i]; });
            accumulate(t, ps[1], [&](std::size_t i) { return g[offset + i]; });
        });
    }
    if (axis != 1) {
        throw std::invalid_argument("concat axis must be 0 or 1, got " + std::to_string(axis));
    }
    if (x.rows() != y.rows()) {
        throw std::invalid_argument("concat columns: shape mismatch " + x.shape().str() + " vs " +
                                    y.shape().str());
    }
    const std::size_t cx = x.cols();
    const std::size_t cy = y.cols();
    Tensor out(Shape{x.rows(), cx + cy});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < cx; ++c) {
            out(r, c) = x(r, c);
        }
        for (std::size_t c = 0; c < cy; ++c) {
            out(r, cx + c) = y(r, c);
        }
    }
    return a.tape().record(Op::Concat, std::move(out), {a.id(), b.id()}, [cx, cy](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& ps = t.parents(self);
        const std::size_t width = cx + cy;
        accumulate(t, ps[0], [&](std::size_t i) { return g[(i / cx) * width + i % cx]; });
        accumulate(t, ps[1], [&](std::size_t i) { return g[(i / cy) * width + cx + i % cy]; });
    });
}

Value slice_rows(const Value& a, std::size_t begin, std::size_t end) {
    Tensor out = a.value().rows_slice(begin, end);
    return a.tape().record(Op::SliceRows, std::move(out), {a.id()}, [begin](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto p = t.parents(self)[0];
        if (Tensor* gx = t.grad_slot(p)) {
            const std::size_t offset = begin * gx->cols();
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gx)[offset + i] += g[i];
            }
        }
    });
}

Value broadcast(const Value& a, Shape target) {
    const auto& x = a.value();
    const Shape s = x.shape();
    const bool ok = s == target || (s.rows == 1 && s.cols == 1) || (s.rows == 1 && s.cols == target.cols) ||
                    (s.cols == 1 && s.rows == target.rows);
    if (!ok) {
        throw std::invalid_argument("broadcast: cannot expand " + s.str() + " to " + target.str());
    }
    const auto source_index = [s](std::size_t r, std::size_t c) {
        return (s.rows == 1 ? 0 : r) * s.cols + (s.cols == 1 ? 0 : c);
    };
    Tensor out(target);
    for (std::size_t r = 0; r < target.rows; ++r) {
        for (std::size_t c = 0; c < target.cols; ++c) {
            out(r, c) = x[source_index(r, c)];
        }
    }
    return a.tape().record(Op::Broadcast, std::move(out), {a.id()}, [source_index, target](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        if (Tensor* gx = t.grad_slot(t.parents(self)[0])) {
            for (std::size_t r = 0; r < target.rows; ++r) {
                for (std::size_t c = 0; c < target.cols; ++c) {
                    (*gx)[source_index(r, c)] += g(r, c);
                }
            }
        }
    });
}

Value stop_gradient(const Value& a) {
    // Keeps the parent link for graph inspection; record() marks it non-differentiable.
    return a.tape().record(Op::StopGradient, a.value(), {a.id()}, nullptr);
}

} // namespace vgssl::ad
