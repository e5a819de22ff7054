#pragma once

// Minimal dense reverse-mode autodiff. Every value lives on a Tape; a Tensor
// is a light handle (tape pointer + node id). Backward walks the tape in
// exact reverse creation order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tractorc::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_string(const Shape& s);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class Tape;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use
    bool requires_grad = false;
    std::function<void(Tape&, const Node& self)> backward;  // accumulates into parents' grads
};

class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t size() const { return value().size(); }
    std::span<const double> value() const;
    std::span<const double> grad() const;
    bool requires_grad() const;
    double item() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor constant(Shape shape, std::vector<double> value);
    Tensor variable(Shape shape, std::vector<double> value);
    Tensor scalar(double v) { return constant({}, {v}); }

    /// Records an op result. `backward` is only kept when some parent needs
    /// gradients.
    Tensor record(Shape shape, std::vector<double> value, bool requires_grad,
                  std::function<void(Tape&, const Node&)> backward);

    Node& node(std::size_t id) { return *nodes_.at(id); }
    /// Gradient accumulator of a node, zero-filled on first access.
    std::vector<double>& grad_buffer(std::size_t id);
    const Node& node(std::size_t id) const { return *nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every variable.
    void backward(const Tensor& loss);

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// ---- primitives -----------------------------------------------------------
// Elementwise binary ops accept identical shapes, or a right operand whose
// shape equals the trailing dimensions of the left one (it is repeated over
// the leading dimensions). Anything else is a ShapeError.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k] x [k,m]
Tensor transpose(const Tensor& a);                // 2-D only
Tensor reshape(const Tensor& a, Shape shape);

/// Leaky ReLU; slope 0 gives a plain ReLU.
Tensor leaky_relu(const Tensor& a, double slope);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log1p(const Tensor& a);
/// Huber: 0.5 x^2 for |x| <= delta, delta (|x| - 0.5 delta) otherwise.
Tensor huber(const Tensor& a, double delta);

/// Concatenates 2-D tensors along the column axis.
Tensor concat(const Tensor& a, const Tensor& b);
/// Rows [begin, end) of a 2-D tensor.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Row gather from a 2-D tensor; backward scatter-adds.
Tensor gather(const Tensor& a, std::span<const std::size_t> rows);

/// Reductions over one axis (the axis is removed). reduce_max routes the
/// gradient to the first maximal element.
Tensor reduce_max(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
Tensor reduce_sum(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
/// Sum of squares over `axis`.
Tensor squared_norm(const Tensor& a, std::size_t axis);

/// [n,d] x [m,d] -> [n,m] squared Euclidean distances.
Tensor pairwise_sq_distance(const Tensor& a, const Tensor& b);
/// [n,d] -> [n,n] Euclidean distances. Entries with zero distance (including
/// the diagonal) pass no gradient.
Tensor pairwise_distance(const Tensor& a);

// ---- gradient checking ------------------------------------------------------

struct GradInput {
    Shape shape;
    std::vector<double> value;
};

using ScalarFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Central finite differences against reverse mode. The relative error of an
/// entry is |a - n| / max(|a|, |n|, floor * max_j |a_j|): entries far below the
/// largest gradient component (softmax shift directions, for one) are judged
/// on that component's scale, where the difference quotient is only roundoff.
GradCheckResult grad_check(const ScalarFn& f, std::span<const GradInput> inputs, double eps = 1e-6,
                           double floor = 1e-3);

// ---- debugging ------------------------------------------------------------

/// Fault injection for the gradient-check battery: when enabled, the TPS warp
/// backward is scaled by 1.01.
void set_corrupt_gradient(bool on);
bool corrupt_gradient();

}  // namespace tractorc::ad
