#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fptreg/errors.hpp"
#include "fptreg/tensor.hpp"

using namespace fptreg;
using namespace fptreg::ad;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Builds a scalar loss from the leaves on a fresh tape. Returns the analytic
// gradients of every leaf and compares them with central differences.
using Graph = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

double max_relative_error(const std::vector<std::pair<Shape, std::vector<double>>>& leaves, const Graph& f,
                          double h = 1e-6) {
  auto evaluate = [&](const std::vector<std::vector<double>>& values) {
    Tape tape;
    std::vector<Tensor> in;
    for (std::size_t i = 0; i < leaves.size(); ++i) in.push_back(tape.constant(leaves[i].first, values[i]));
    return f(tape, in).item();
  };

  Tape tape;
  std::vector<Tensor> in;
  for (const auto& [shape, v] : leaves) in.push_back(tape.parameter(shape, v));
  const Tensor loss = f(tape, in);
  tape.backward(loss);

  std::vector<std::vector<double>> values;
  for (const auto& l : leaves) values.push_back(l.second);
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto grad = in[i].has_grad() ? to_vec(in[i].grad()) : std::vector<double>(leaves[i].second.size(), 0.0);
    for (std::size_t k = 0; k < values[i].size(); ++k) {
      const double keep = values[i][k];
      values[i][k] = keep + h;
      const double up = evaluate(values);
      values[i][k] = keep - h;
      const double down = evaluate(values);
      values[i][k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(grad[k]), 1e-3});
      worst = std::max(worst, std::abs(numeric - grad[k]) / scale);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul by the identity returns the input") {
  Tape t;
  const auto p = random_values(3 * 5, 1);
  const auto id = t.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto x = t.constant({3, 5}, p);
  CHECK(to_vec(matmul(id, x).value()) == p);
}

TEST_CASE("matmul hand example") {
  Tape t;
  const auto a = t.constant({2, 2}, {1, 2, 3, 4});
  const auto b = t.constant({2, 1}, {1, 1});
  const auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(to_vec(c.value()) == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  const auto a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  const auto b = t.constant({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(A B) with respect to A is B transposed broadcast") {
  const auto av = random_values(6, 2), bv = random_values(12, 3);
  Tape t;
  const auto a = t.parameter({2, 3}, av);
  const auto b = t.constant({3, 4}, bv);
  t.backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) row_sum += bv[k * 4 + j];
      CHECK(a.grad()[i * 3 + k] == doctest::Approx(row_sum).epsilon(1e-12));
    }
  }
  const double err = max_relative_error({{{2, 3}, av}, {{3, 4}, bv}},
                                        [](Tape&, const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); });
  CHECK(err < 1e-4);
}

TEST_CASE("pointwise_linear with zero weights returns the bias on every row") {
  Tape t;
  const auto x = t.constant({4, 3}, random_values(12, 4));
  const auto w = t.constant({3, 2}, std::vector<double>(6, 0.0));
  const auto b = t.constant({2}, {0.5, -2.0});
  const auto y = pointwise_linear(x, w, b);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(y.value()[r * 2] == 0.5);
    CHECK(y.value()[r * 2 + 1] == -2.0);
  }
}

TEST_CASE("pointwise_linear on one row equals matmul plus bias") {
  Tape t;
  const auto x = t.constant({1, 3}, {1, 2, 3});
  const auto w = t.constant({3, 2}, {1, 0, 0, 1, 1, 1});
  const auto b = t.constant({2}, {10, 20});
  const auto y = pointwise_linear(x, w, b);
  const auto m = matmul(x, w);
  CHECK(y.value()[0] == m.value()[0] + 10.0);
  CHECK(y.value()[1] == m.value()[1] + 20.0);
}

TEST_CASE("pointwise_linear matches a per-row loop oracle") {
  const auto xv = random_values(12, 5), wv = random_values(6, 6), bv = random_values(2, 7);
  Tape t;
  const auto y = pointwise_linear(t.constant({4, 3}, xv), t.constant({3, 2}, wv), t.constant({2}, bv));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = bv[c];
      for (std::size_t k = 0; k < 3; ++k) acc += xv[r * 3 + k] * wv[k * 2 + c];
      CHECK(y.value()[r * 2 + c] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  const double err = max_relative_error(
      {{{4, 3}, xv}, {{3, 2}, wv}, {{2}, bv}},
      [](Tape&, const std::vector<Tensor>& in) { return sum(mul(pointwise_linear(in[0], in[1], in[2]), pointwise_linear(in[0], in[1], in[2]))); });
  CHECK(err < 1e-4);
}

TEST_CASE("pointwise_linear rejects mismatched channels") {
  Tape t;
  CHECK_THROWS_AS(pointwise_linear(t.constant({2, 3}, std::vector<double>(6)), t.constant({2, 2}, std::vector<double>(4)),
                                   t.constant({2}, {0, 0})),
                  DimensionError);
  CHECK_THROWS_AS(pointwise_linear(t.constant({2, 3}, std::vector<double>(6)), t.constant({3, 2}, std::vector<double>(6)),
                                   t.constant({3}, {0, 0, 0})),
                  DimensionError);
}

TEST_CASE("conditioned_linear equals pointwise_linear on explicitly concatenated rows") {
  const std::size_t n = 5, gdim = 4, in = 3, out = 6;
  const auto xv = random_values(n * in, 8), gv = random_values(gdim, 9), wv = random_values((gdim + in) * out, 10),
             bv = random_values(out, 11);
  std::vector<double> cat;
  for (std::size_t r = 0; r < n; ++r) {
    cat.insert(cat.end(), gv.begin(), gv.end());
    cat.insert(cat.end(), xv.begin() + static_cast<long>(r * in), xv.begin() + static_cast<long>((r + 1) * in));
  }
  Tape t;
  const auto a = conditioned_linear(t.constant({n, in}, xv), t.constant({gdim}, gv), t.constant({gdim + in, out}, wv),
                                    t.constant({out}, bv));
  const auto b = pointwise_linear(t.constant({n, gdim + in}, cat), t.constant({gdim + in, out}, wv), t.constant({out}, bv));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-13));

  const double err = max_relative_error(
      {{{n, in}, xv}, {{gdim}, gv}, {{gdim + in, out}, wv}, {{out}, bv}}, [](Tape&, const std::vector<Tensor>& v) {
        const auto y = conditioned_linear(v[0], v[1], v[2], v[3]);
        return sum(mul(y, y));
      });
  CHECK(err < 1e-4);
}

TEST_CASE("relu forward examples") {
  Tape t;
  CHECK(to_vec(relu(t.constant({3}, {-1, 0, 2})).value()) == std::vector<double>{0, 0, 2});
  const auto pos = random_values(8, 12, 0.1, 2.0);
  CHECK(to_vec(relu(t.constant({8}, pos)).value()) == pos);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape t;
  const auto x = t.parameter({3}, {-1, 0, 2});
  t.backward(sum(relu(x)));
  CHECK(to_vec(x.grad()) == std::vector<double>{0, 0, 1});
}

TEST_CASE("relu gradient check on mixed-sign input away from zero") {
  auto v = random_values(10, 13);
  for (auto& x : v) x += x > 0 ? 0.1 : -0.1;
  const double err = max_relative_error({{{10}, v}}, [](Tape& t, const std::vector<Tensor>& in) {
    const auto w = t.constant({10}, random_values(10, 14));
    return sum(mul(relu(in[0]), w));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("max_pool_points examples") {
  Tape t;
  CHECK(to_vec(max_pool_points(t.constant({2, 2}, {1, 5, 3, 2})).value()) == std::vector<double>{3, 5});
  const auto one = random_values(4, 15);
  CHECK(to_vec(max_pool_points(t.constant({1, 4}, one)).value()) == one);
  CHECK_THROWS_AS(max_pool_points(t.constant({0, 4}, {})), EmptyInputError);
}

TEST_CASE("max_pool_points is invariant under row permutations") {
  const std::size_t n = 40, c = 7;
  const auto v = random_values(n * c, 16);
  Tape t;
  const auto base = to_vec(max_pool_points(t.constant({n, c}, v)).value());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> p(n * c);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(v.begin() + static_cast<long>(perm[r] * c), c, p.begin() + static_cast<long>(r * c));
    CHECK(to_vec(max_pool_points(t.constant({n, c}, p)).value()) == base);
  }
}

TEST_CASE("max_pool_points routes the gradient to the first maximal row") {
  Tape t;
  const auto x = t.parameter({3, 2}, {4, 1, 4, 3, 0, 3});
  t.backward(sum(max_pool_points(x)));
  CHECK(to_vec(x.grad()) == std::vector<double>{1, 0, 0, 1, 0, 0});
}

TEST_CASE("backward of sum gives ones and of sum of squares gives 2x") {
  Tape t;
  const auto x = t.parameter({2, 3}, random_values(6, 18));
  t.backward(sum(x));
  CHECK(to_vec(x.grad()) == std::vector<double>(6, 1.0));

  Tape u;
  const auto y = u.parameter({2}, {1, 2});
  u.backward(sum(mul(y, y)));
  CHECK(to_vec(y.grad()) == std::vector<double>{2, 4});
}

TEST_CASE("composite relu(matmul) graph matches central differences") {
  const auto xv = random_values(12, 19), wv = random_values(15, 20);
  const double err = max_relative_error({{{4, 3}, xv}, {{3, 5}, wv}}, [](Tape&, const std::vector<Tensor>& in) {
    const auto h = relu(matmul(in[0], in[1]));
    return mean(mul(h, h));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("reshape, concat, add, scale and mean gradients") {
  const auto av = random_values(6, 21), bv = random_values(6, 22);
  const double err = max_relative_error({{{2, 3}, av}, {{2, 3}, bv}}, [](Tape& t, const std::vector<Tensor>& in) {
    const auto c = concat(reshape(in[0], {6}), reshape(add(in[0], in[1]), {6}));
    const auto w = t.constant({12}, random_values(12, 23));
    return scale(mean(mul(mul(c, c), w)), 3.0);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("chamfer_squared forward and gradient") {
  Tape t;
  const auto a = t.constant({1, 3}, {0, 0, 0});
  const auto b = t.constant({2, 3}, {1, 0, 0, 3, 0, 0});
  // a->b: 1; b->a: (1 + 9) / 2.
  CHECK(chamfer_squared(a, b).item() == doctest::Approx(6.0));

  const auto av = random_values(8 * 3, 24), bv = random_values(6 * 3, 25);
  const double err = max_relative_error({{{8, 3}, av}, {{6, 3}, bv}}, [](Tape&, const std::vector<Tensor>& in) {
    return chamfer_squared(in[0], in[1]);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  const auto x = t.parameter({2}, {1, 2});
  CHECK_THROWS_AS(t.backward(x), DimensionError);
}

TEST_CASE("second backward without zero_grad is an error") {
  Tape t;
  const auto x = t.parameter({2}, {1, 2});
  const auto loss = sum(mul(x, x));
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), std::logic_error);
  t.zero_grad();
  t.backward(loss);
  CHECK(to_vec(x.grad()) == std::vector<double>{2, 4});
}

TEST_CASE("forward evaluation is deterministic") {
  const auto xv = random_values(300, 26), wv = random_values(30, 27), bv = random_values(10, 28);
  auto run = [&] {
    Tape t;
    const auto h = relu(pointwise_linear(t.constant({100, 3}, xv), t.constant({3, 10}, wv), t.constant({10}, bv)));
    return to_vec(max_pool_points(h).value());
  };
  CHECK(run() == run());
}

TEST_CASE("tape nodes are recorded in topological order") {
  Tape t;
  const auto x = t.parameter({2}, {1, 2});
  const auto y = mul(x, x);
  const auto z = sum(add(y, x));
  for (std::size_t id = 0; id < t.size(); ++id) {
    for (auto in : t.node(id).inputs) CHECK(in < id);
  }
  CHECK(z.id() == t.size() - 1);
}

TEST_CASE("leaf shape must match its data") {
  Tape t;
  CHECK_THROWS_AS(t.constant({2, 2}, {1, 2, 3}), DimensionError);
}
