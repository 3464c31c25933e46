#include "fptreg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "fptreg/errors.hpp"

namespace fptreg::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatrixMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatrixMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Eigen's product kernel handles a trailing partial block of rows (or, for
// row-major results, columns) with different code, which changes the last
// bits. Padding to whole blocks makes each row's result independent of its
// position, so pooling over points is exactly order invariant.
using Traits = Eigen::internal::gebp_traits<double, double>;
constexpr std::size_t row_block = std::lcm(static_cast<std::size_t>(Traits::mr), static_cast<std::size_t>(Traits::nr));

// out = x[rows x in] w, with out sized for the padded rows and then shrunk.
template <typename W>
std::vector<double> rowwise_product(const std::vector<double>& x, std::size_t rows, std::size_t in,
                                    const W& w) {
  const std::size_t out_ch = static_cast<std::size_t>(w.cols());
  const std::size_t padded = (rows + row_block - 1) / row_block * row_block;
  std::vector<double> out = Tape::buffer((rows == 1 ? 1 : padded) * out_ch);
  if (padded == rows || rows == 1) {
    as_matrix(out, rows, out_ch).noalias() = as_matrix(x, rows, in) * w;
    return out;
  }
  thread_local std::vector<double> scratch;
  scratch.resize(padded * in);
  std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(rows * in), scratch.begin());
  std::fill(scratch.begin() + static_cast<std::ptrdiff_t>(rows * in), scratch.end(), 0.0);
  as_matrix(out, padded, out_ch).noalias() = as_matrix(std::as_const(scratch), padded, in) * w;
  out.resize(rows * out_ch);
  return out;
}

// Sequential over rows; Eigen's vectorized column reduction groups the rows
// differently depending on the destination's alignment.
template <typename M>
Eigen::RowVectorXd column_sums(const M& m) {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  }
  return out;
}

void require_same_tape(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("tensors belong to different tapes");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

// Freshly mapped pages make first-touch writes several times slower than the
// arithmetic for the layer sizes used here, so each thread keeps the buffers
// of its finished tapes for reuse.
struct BufferPool {
  static constexpr std::size_t max_bytes = std::size_t{1} << 29;
  std::multimap<std::size_t, std::vector<double>> free;  // keyed by capacity
  std::size_t bytes = 0;

  std::vector<double> take(std::size_t n) {
    auto it = free.lower_bound(n);
    if (it == free.end() || it->first > 2 * n + 64) return std::vector<double>(n);
    std::vector<double> v = std::move(it->second);
    bytes -= it->first * sizeof(double);
    free.erase(it);
    v.resize(n);
    return v;
  }

  void give(std::vector<double>&& v) {
    const std::size_t b = v.capacity() * sizeof(double);
    if (b < 4096 || bytes + b > max_bytes) return;
    bytes += b;
    free.emplace(v.capacity(), std::move(v));
  }
};

BufferPool& pool() {
  thread_local BufferPool p;
  return p;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::size_t Tensor::size() const { return tape_->node(id_).value.size(); }
std::span<const double> Tensor::value() const { return tape_->node(id_).value; }
std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }
bool Tensor::has_grad() const { return !tape_->node(id_).grad.empty(); }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return value()[0];
}

Tape::~Tape() {
  for (auto& n : nodes_) {
    recycle(std::move(n.value));
    recycle(std::move(n.grad));
  }
}

std::vector<double> Tape::buffer(std::size_t n) { return pool().take(n); }

void Tape::recycle(std::vector<double>&& v) {
  pool().give(std::move(v));
  v = {};
}

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Tape::parameter(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), true);
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::vector<std::size_t> inputs,
                    std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t id) { return nodes_[id].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad = buffer(n.value.size());
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw std::logic_error("loss belongs to a different tape");
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (backward_done_) {
    throw std::logic_error("backward() called twice without zero_grad()");
  }
  backward_done_ = true;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) recycle(std::move(n.grad));
  backward_done_ = false;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  Tape& tape = a.tape();
  std::vector<double> out = rowwise_product(tape.node(a.id()).value, m, k, as_matrix(tape.node(b.id()).value, k, n));
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record({m, n}, std::move(out), {ia, ib}, [=](Tape& t, const Tape::Node& self) {
    auto dc = as_matrix(self.grad, m, n);
    if (t.needs_grad(ia)) {
      as_matrix(t.grad_buffer(ia), m, k).noalias() += dc * as_matrix(t.node(ib).value, k, n).transpose();
    }
    if (t.needs_grad(ib)) {
      as_matrix(t.grad_buffer(ib), k, n).noalias() += as_matrix(t.node(ia).value, m, k).transpose() * dc;
    }
  });
}

Tensor pointwise_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  require_rank(x, 2, "pointwise_linear");
  require_rank(w, 2, "pointwise_linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_ch = w.dim(1);
  if (w.dim(0) != in || b.size() != out_ch) {
    throw DimensionError("pointwise_linear: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
  Tape& tape = x.tape();
  std::vector<double> out =
      rowwise_product(tape.node(x.id()).value, rows, in, as_matrix(tape.node(w.id()).value, in, out_ch));
  auto y = as_matrix(out, rows, out_ch);
  y.rowwise() += ConstVectorMap(tape.node(b.id()).value.data(), static_cast<Eigen::Index>(out_ch));
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return tape.record({rows, out_ch}, std::move(out), {ix, iw, ib},
                     [=](Tape& t, const Tape::Node& self) {
                       auto dy = as_matrix(self.grad, rows, out_ch);
                       if (t.needs_grad(ix)) {
                         as_matrix(t.grad_buffer(ix), rows, in).noalias() +=
                             dy * as_matrix(t.node(iw).value, in, out_ch).transpose();
                       }
                       if (t.needs_grad(iw)) {
                         as_matrix(t.grad_buffer(iw), in, out_ch).noalias() +=
                             as_matrix(t.node(ix).value, rows, in).transpose() * dy;
                       }
                       if (t.needs_grad(ib)) {
                         VectorMap(t.grad_buffer(ib).data(), static_cast<Eigen::Index>(out_ch)) +=
                             column_sums(dy);
                       }
                     });
}

Tensor conditioned_linear(const Tensor& x, const Tensor& g, const Tensor& w, const Tensor& b) {
  require_same_tape(x, g);
  require_same_tape(x, w);
  require_same_tape(x, b);
  require_rank(x, 2, "conditioned_linear");
  require_rank(w, 2, "conditioned_linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), gdim = g.size(), out_ch = w.dim(1);
  if (w.dim(0) != gdim + in || b.size() != out_ch) {
    throw DimensionError("conditioned_linear: input " + shape_string(x.shape()) + ", condition " +
                         shape_string(g.shape()) + ", weight " + shape_string(w.shape()) +
                         ", bias " + shape_string(b.shape()));
  }
  Tape& tape = x.tape();
  const auto& wv = tape.node(w.id()).value;
  auto w_all = as_matrix(wv, gdim + in, out_ch);
  Eigen::RowVectorXd shared =
      ConstVectorMap(tape.node(g.id()).value.data(), static_cast<Eigen::Index>(gdim)) *
          w_all.topRows(static_cast<Eigen::Index>(gdim)) +
      ConstVectorMap(tape.node(b.id()).value.data(), static_cast<Eigen::Index>(out_ch));
  std::vector<double> out =
      rowwise_product(tape.node(x.id()).value, rows, in, w_all.bottomRows(static_cast<Eigen::Index>(in)));
  auto y = as_matrix(out, rows, out_ch);
  y.rowwise() += shared;
  const std::size_t ix = x.id(), ig = g.id(), iw = w.id(), ib = b.id();
  return tape.record(
      {rows, out_ch}, std::move(out), {ix, ig, iw, ib}, [=](Tape& t, const Tape::Node& self) {
        auto dy = as_matrix(self.grad, rows, out_ch);
        auto wm = as_matrix(t.node(iw).value, gdim + in, out_ch);
        const auto gi = static_cast<Eigen::Index>(gdim);
        const auto ii = static_cast<Eigen::Index>(in);
        const Eigen::RowVectorXd col_sum = column_sums(dy);
        if (t.needs_grad(ix)) {
          as_matrix(t.grad_buffer(ix), rows, in).noalias() += dy * wm.bottomRows(ii).transpose();
        }
        if (t.needs_grad(ig)) {
          VectorMap(t.grad_buffer(ig).data(), gi).noalias() += col_sum * wm.topRows(gi).transpose();
        }
        if (t.needs_grad(iw)) {
          auto dw = as_matrix(t.grad_buffer(iw), gdim + in, out_ch);
          dw.topRows(gi).noalias() +=
              ConstVectorMap(t.node(ig).value.data(), gi).transpose() * col_sum;
          dw.bottomRows(ii).noalias() += as_matrix(t.node(ix).value, rows, in).transpose() * dy;
        }
        if (t.needs_grad(ib)) {
          VectorMap(t.grad_buffer(ib).data(), static_cast<Eigen::Index>(out_ch)) += col_sum;
        }
      });
}

Tensor relu(const Tensor& x) {
  Tape& tape = x.tape();
  const auto& in = tape.node(x.id()).value;
  std::vector<double> out = tape.buffer(in.size());
  std::transform(in.begin(), in.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  const std::size_t ix = x.id();
  return tape.record(x.shape(), std::move(out), {ix}, [ix](Tape& t, const Tape::Node& self) {
    const auto& xv = t.node(ix).value;
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor max_pool_points(const Tensor& x) {
  require_rank(x, 2, "max_pool_points");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (rows == 0) throw EmptyInputError("max_pool_points: no points");
  Tape& tape = x.tape();
  const auto& xv = tape.node(x.id()).value;
  std::vector<double> out(xv.begin(), xv.begin() + static_cast<std::ptrdiff_t>(cols));
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t r = 1; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (row[c] > out[c]) {
        out[c] = row[c];
        arg[c] = r;
      }
    }
  }
  const std::size_t ix = x.id();
  return tape.record({cols}, std::move(out), {ix},
                     [ix, cols, arg = std::move(arg)](Tape& t, const Tape::Node& self) {
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t c = 0; c < cols; ++c) gx[arg[c] * cols + c] += self.grad[c];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tape& tape = x.tape();
  const std::size_t ix = x.id();
  const auto& xv = tape.node(ix).value;
  std::vector<double> out = tape.buffer(xv.size());
  std::copy(xv.begin(), xv.end(), out.begin());
  return tape.record(std::move(shape), std::move(out), {ix}, [ix](Tape& t, const Tape::Node& self) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  Tape& tape = a.tape();
  const auto& av = tape.node(a.id()).value;
  const auto& bv = tape.node(b.id()).value;
  std::vector<double> out = tape.buffer(av.size() + bv.size());
  std::copy(bv.begin(), bv.end(), std::copy(av.begin(), av.end(), out.begin()));
  const std::size_t ia = a.id(), ib = b.id(), na = av.size(), total = out.size();
  return tape.record({total}, std::move(out), {ia, ib}, [=](Tape& t, const Tape::Node& self) {
    if (t.needs_grad(ia)) {
      auto& g = t.grad_buffer(ia);
      for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (t.needs_grad(ib)) {
      auto& g = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tape& tape = a.tape();
  const auto& av = tape.node(a.id()).value;
  const auto& bv = tape.node(b.id()).value;
  std::vector<double> out = tape.buffer(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(a.shape(), std::move(out), {ia, ib}, [=](Tape& t, const Tape::Node& self) {
    for (std::size_t id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      auto& g = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tape& tape = a.tape();
  const auto& av = tape.node(a.id()).value;
  const auto& bv = tape.node(b.id()).value;
  std::vector<double> out = tape.buffer(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(a.shape(), std::move(out), {ia, ib}, [=](Tape& t, const Tape::Node& self) {
    const auto& x = t.node(ia).value;
    const auto& y = t.node(ib).value;
    if (t.needs_grad(ia)) {
      auto& g = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (t.needs_grad(ib)) {
      auto& g = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Tape& tape = x.tape();
  const auto& xv = tape.node(x.id()).value;
  std::vector<double> out = tape.buffer(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), [factor](double v) { return v * factor; });
  const std::size_t ix = x.id();
  return tape.record(x.shape(), std::move(out), {ix}, [=](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  Tape& tape = x.tape();
  const auto& xv = tape.node(x.id()).value;
  double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  const std::size_t ix = x.id();
  return tape.record({1}, {total}, {ix}, [ix](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_buffer(ix);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw EmptyInputError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor chamfer_squared(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_rank(a, 2, "chamfer_squared");
  require_rank(b, 2, "chamfer_squared");
  if (a.dim(1) != 3 || b.dim(1) != 3) {
    throw DimensionError("chamfer_squared: expected N x 3 inputs, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0);
  if (n == 0 || m == 0) throw EmptyInputError("chamfer_squared: empty point set");
  Tape& tape = a.tape();
  const double* av = tape.node(a.id()).value.data();
  const double* bv = tape.node(b.id()).value.data();

  std::vector<std::size_t> nn_ab(n, 0), nn_ba(m, 0);
  std::vector<double> best_ab(n, std::numeric_limits<double>::infinity());
  std::vector<double> best_ba(m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = av + 3 * i;
    for (std::size_t j = 0; j < m; ++j) {
      const double* q = bv + 3 * j;
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best_ab[i]) {
        best_ab[i] = d2;
        nn_ab[i] = j;
      }
      if (d2 < best_ba[j]) {
        best_ba[j] = d2;
        nn_ba[j] = i;
      }
    }
  }
  const double loss = std::accumulate(best_ab.begin(), best_ab.end(), 0.0) / static_cast<double>(n) +
                      std::accumulate(best_ba.begin(), best_ba.end(), 0.0) / static_cast<double>(m);

  const std::size_t ia = a.id(), ib = b.id();
  return tape.record({1}, {loss}, {ia, ib},
                     [=, nn_ab = std::move(nn_ab), nn_ba = std::move(nn_ba)](Tape& t, const Tape::Node& self) {
                       const double* x = t.node(ia).value.data();
                       const double* y = t.node(ib).value.data();
                       double* ga = t.needs_grad(ia) ? t.grad_buffer(ia).data() : nullptr;
                       double* gb = t.needs_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
                       const double wa = 2.0 * self.grad[0] / static_cast<double>(n);
                       const double wb = 2.0 * self.grad[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t j = nn_ab[i];
                         for (int k = 0; k < 3; ++k) {
                           const double d = wa * (x[3 * i + k] - y[3 * j + k]);
                           if (ga) ga[3 * i + k] += d;
                           if (gb) gb[3 * j + k] -= d;
                         }
                       }
                       for (std::size_t j = 0; j < m; ++j) {
                         const std::size_t i = nn_ba[j];
                         for (int k = 0; k < 3; ++k) {
                           const double d = wb * (y[3 * j + k] - x[3 * i + k]);
                           if (gb) gb[3 * j + k] += d;
                           if (ga) ga[3 * i + k] -= d;
                         }
                       }
                     });
}

}  // namespace fptreg::ad
