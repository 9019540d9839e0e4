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

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

/**
 * Minimal reverse-mode differentiation over dense row-major matrices.
 *
 * A Tape owns every node created while building one loss. Values are cheap
 * handles (tape pointer + node index). Nodes are appended in evaluation order,
 * so parents always precede children and a single reverse sweep over the node
 * list visits them in reverse topological order.
 *
 * All tensors are rank 2; vectors are 1xC or Rx1 and scalars are 1x1.
 * backward() may run once per tape; call reset_gradients() before running it
 * again, so gradients never accumulate silently across calls.
 */
namespace vgssl::ad {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{1, 1}, v); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    Shape shape() const { return shape_; }
    std::size_t rows() const { return shape_.rows; }
    std::size_t cols() const { return shape_.cols; }
    std::size_t size() const { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> data() { return values_; }
    std::span<const double> data() const { return values_; }
    const std::vector<double>& values() const { return values_; }

    /// Copy of rows [begin, end).
    Tensor rows_slice(std::size_t begin, std::size_t end) const;
    /// Copy of the given rows, in order.
    Tensor gather_rows(std::span<const std::size_t> rows) const;

    bool operator==(const Tensor&) const = default;

  private:
    Shape shape_{};
    std::vector<double> values_;
};

enum class Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    MatMul,
    Transpose,
    Exp,
    Log,
    Sqrt,
    ClampMin,
    Sum,
    Mean,
    L2NormRows,
    Concat,
    SliceRows,
    Broadcast,
    StopGradient,
};

const char* op_name(Op op);

class Tape;

class Value {
  public:
    Value() = default;

    const Tensor& value() const;
    Shape shape() const { return value().shape(); }
    /// The single element of a 1x1 value.
    double item() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

  private:
    friend class Tape;
    Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
  public:
    /// Receives the node's output gradient; accumulates into parent gradients.
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// A differentiable input.
    Value leaf(Tensor value);
    /// A non-differentiable input.
    Value constant(Tensor value);

    /// Propagates d(loss)/d(node) to every node reachable from a 1x1 loss.
    void backward(const Value& loss);
    /// Clears all gradients and re-arms backward().
    void reset_gradients();

    /// Gradient of a node after backward(); zeros if nothing flowed into it.
    Tensor grad(const Value& v) const;
    bool received_gradient(const Value& v) const;

    std::size_t size() const { return nodes_.size(); }
    Op op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    // Building blocks for primitive ops.
    Value record(Op op, Tensor value, std::vector<std::size_t> parents, Backward backward);
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
    /// Gradient buffer of a parent, allocated on first use; nullptr if it needs no gradient.
    Tensor* grad_slot(std::size_t id);

  private:
    struct Node {
        Op op = Op::Leaf;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        Backward backward;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

// Elementwise; shapes must match exactly (use broadcast() to expand).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value scale(const Value& a, double factor);
Value add_scalar(const Value& a, double offset);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);
/// max(a, floor) elementwise; the hinge with floor = 0.
Value clamp_min(const Value& a, double floor);
inline Value relu(const Value& a) { return clamp_min(a, 0.0); }
inline Value square(const Value& a) { return mul(a, a); }

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);

/// Reduction over all elements (1x1 result).
Value sum(const Value& a);
/// axis 0 reduces rows (1xC result), axis 1 reduces columns (Rx1 result).
Value sum(const Value& a, int axis);
Value mean(const Value& a);
Value mean(const Value& a, int axis);

/// Euclidean norm of each row (Rx1 result).
Value l2norm_rows(const Value& a);
/// Stacks along axis 0 (rows) or axis 1 (columns).
Value concat(const Value& a, const Value& b, int axis = 0);
/// Rows [begin, end).
Value slice_rows(const Value& a, std::size_t begin, std::size_t end);
/// Expands 1x1, 1xC or Rx1 to the target shape.
Value broadcast(const Value& a, Shape target);

/// Forward identity; contributes nothing to its parent's gradient.
Value stop_gradient(const Value& a);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator*(const Value& a, double s) { return scale(a, s); }
inline Value operator*(double s, const Value& a) { return scale(a, s); }
inline Value operator-(const Value& a) { return scale(a, -1.0); }

} // namespace vgssl::ad
