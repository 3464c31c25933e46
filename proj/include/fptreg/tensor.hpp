#pragma once

// A small reverse-mode differentiation engine. A Tape owns every node created
// while evaluating an expression; node ids are assigned in creation order, so
// the record is topologically sorted by construction and backward() is a
// single reverse sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fptreg::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

// Lightweight handle to a node on a Tape. Copying a Tensor copies the handle,
// not the data; the Tape must outlive all handles into it.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }

  std::span<const double> value() const;
  // Empty until backward() has reached this node.
  std::span<const double> grad() const;
  bool has_grad() const;
  bool requires_grad() const;

  // Scalar value of a single-element tensor.
  double item() const;

  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Tape&, const Node&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor parameter(Shape shape, std::vector<double> values);

  // Propagates d(loss)/d(node) to every node that requires a gradient.
  // Throws DimensionError for a non-scalar loss and std::logic_error on a
  // second call without zero_grad().
  void backward(const Tensor& loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Used by the operation implementations.
  Tensor record(Shape shape, std::vector<double> values,
                std::vector<std::size_t> inputs,
                std::function<void(Tape&, const Node&)> backward);
  // Gradient buffer of an input, allocated on first use.
  std::vector<double>& grad_buffer(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Storage of n values with unspecified contents, reusing memory released
  // by earlier tapes on this thread.
  static std::vector<double> buffer(std::size_t n);

 private:
  static void recycle(std::vector<double>&& v);
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// C = A B for A[m x k], B[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Shared affine map applied to each row: x[N x in] w[in x out] + b[out].
Tensor pointwise_linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Equivalent to pointwise_linear applied to the rows of [g | x], where the
// vector g (length G) is repeated on every row. w is (G + in) x out with the
// rows for g first. The g-part is computed once instead of once per row.
Tensor conditioned_linear(const Tensor& x, const Tensor& g, const Tensor& w,
                          const Tensor& b);

Tensor relu(const Tensor& x);

// Per-channel maximum over the rows of x[N x C]; result has shape {C}.
// Gradient goes to the first row attaining the maximum.
Tensor max_pool_points(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Joins two tensors end to end into a rank-1 tensor.
Tensor concat(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Two-way squared Chamfer distance between row sets a[N x 3] and b[M x 3]:
// mean_i min_j |a_i - b_j|^2 + mean_j min_i |a_i - b_j|^2. Nearest-neighbour
// ties go to the lowest index.
Tensor chamfer_squared(const Tensor& a, const Tensor& b);

}  // namespace fptreg::ad
