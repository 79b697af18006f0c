#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vad/rng.hpp"
#include "vad/tensor.hpp"

using namespace vad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -2.0,
                     double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = u(rng);
  return new_tensor(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("new_tensor basics") {
  Tensor id = new_tensor({2, 2}, {1, 0, 0, 1});
  CHECK(id.at(0, 0) == 1.0);
  CHECK(id.at(0, 1) == 0.0);
  CHECK(id.numel() == 4);

  Tensor z = new_tensor({3}, {0, 0, 0}, true);
  REQUIRE(z.grad.size() == 3);
  CHECK(z.grad[0] == 0.0);

  CHECK_THROWS_AS(new_tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(new_tensor({2, 2, 2}, std::vector<double>(8, 0.0)), DimensionError);
}

TEST_CASE("elementwise forward") {
  Tape tape;
  Var a = tape.constant(new_tensor({2}, {1, 2}));
  Var b = tape.constant(new_tensor({2}, {3, 4}));
  Var s = tape.add(a, b);
  CHECK(tape.value(s).data == std::vector<double>{4, 6});

  Var ones = tape.constant(new_tensor({2}, {1, 1}));
  Var m = tape.mul(a, ones);
  CHECK(tape.value(m).data == tape.value(a).data);

  Var d = tape.sub(a, a);
  CHECK(tape.value(d).data == std::vector<double>{0, 0});

  Var bad = tape.constant(new_tensor({3}, {1, 2, 3}));
  CHECK_THROWS_AS(tape.add(a, bad), DimensionError);
}

TEST_CASE("sub of same leaf has zero gradient") {
  Tape tape;
  Var x = tape.leaf(new_tensor({3}, {1, -2, 0.5}, true));
  Var loss = tape.sum_all(tape.sub(x, x));
  tape.backward(loss);
  for (double g : tape.grad(x)) CHECK(g == 0.0);
}

TEST_CASE("row broadcast") {
  Tape tape;
  Var a = tape.leaf(new_tensor({2, 3}, {1, 2, 3, 4, 5, 6}, true));
  Var b = tape.leaf(new_tensor({3}, {10, 20, 30}, true));
  Var s = tape.add(a, b);
  CHECK(tape.value(s).data == std::vector<double>{11, 22, 33, 14, 25, 36});
  Var loss = tape.sum_all(s);
  tape.backward(loss);
  for (double g : tape.grad(a)) CHECK(g == 1.0);
  for (double g : tape.grad(b)) CHECK(g == 2.0);  // summed over the two rows
}

TEST_CASE("matmul forward") {
  Tape tape;
  Var i2 = tape.constant(new_tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.constant(new_tensor({2, 2}, {5, 6, 7, 8}));
  CHECK(tape.value(tape.matmul(i2, m)).data == std::vector<double>{5, 6, 7, 8});

  Var a = tape.constant(new_tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(new_tensor({2, 1}, {5, 6}));
  CHECK(tape.value(tape.matmul(a, b)).data == std::vector<double>{17, 39});

  Var c = tape.constant(new_tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(tape.matmul(a, c), DimensionError);
}

TEST_CASE("activations at reference points") {
  Tape tape;
  Var x = tape.constant(new_tensor({4}, {0.0, 0.0, -3.0, 3.0}));
  CHECK(tape.value(tape.activation(Activation::kTanh, x)).data[0] == 0.0);
  CHECK(tape.value(tape.activation(Activation::kSigmoid, x)).data[1] == 0.5);
  auto relu = tape.value(tape.activation(Activation::kRelu, x)).data;
  CHECK(relu[2] == 0.0);
  CHECK(relu[3] == 3.0);
  // identity is a no-op node
  Var y = tape.activation(Activation::kIdentity, x);
  CHECK(y.id == x.id);
}

TEST_CASE("reduce") {
  Tape tape;
  Var v = tape.constant(new_tensor({3}, {1, 2, 3}));
  CHECK(tape.value(tape.sum_all(v)).data[0] == 6.0);
  Var c = tape.constant(new_tensor({3}, {7, 7, 7}));
  CHECK(tape.value(tape.mean_all(c)).data[0] == 7.0);
  Var empty = tape.constant(new_tensor({0}, {}));
  CHECK_THROWS_AS(tape.mean_all(empty), NumericError);

  Var m = tape.constant(new_tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(tape.value(tape.sum_rows(m)).data == std::vector<double>{6, 15});
}

TEST_CASE("backward of sum of squares") {
  Tape tape;
  Var x = tape.leaf(new_tensor({1}, {3}, true));
  Var loss = tape.sum_all(tape.mul(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == 6.0);
}

TEST_CASE("reuse accumulates gradient") {
  Tape tape;
  Var a = tape.leaf(new_tensor({3}, {1, 2, 3}, true));
  Var loss = tape.sum_all(tape.add(a, a));
  tape.backward(loss);
  for (double g : tape.grad(a)) CHECK(g == 2.0);
}

TEST_CASE("backward requires scalar loss") {
  Tape tape;
  Var x = tape.leaf(new_tensor({2, 2}, {1, 2, 3, 4}, true));
  Var y = tape.mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), NumericError);
}

TEST_CASE("backward is linear in the loss") {
  auto rng = make_rng(7);
  Tensor x = random_tensor({4}, rng);
  const double alpha = 3.25;
  std::vector<double> g1, g2;
  {
    Tape tape;
    Tensor leaf = x;
    leaf.requires_grad = true;
    Var xv = tape.leaf(leaf);
    Var loss = tape.sum_all(tape.mul(xv, xv));
    tape.backward(loss);
    g1.assign(tape.grad(xv).begin(), tape.grad(xv).end());
  }
  {
    Tape tape;
    Tensor leaf = x;
    leaf.requires_grad = true;
    Var xv = tape.leaf(leaf);
    Var loss = tape.scale(tape.sum_all(tape.mul(xv, xv)), alpha);
    tape.backward(loss);
    g2.assign(tape.grad(xv).begin(), tape.grad(xv).end());
  }
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == alpha * g1[i]);
}

TEST_CASE("identical tapes give bit-identical results") {
  auto run = [] {
    Tape tape;
    Var x = tape.leaf(new_tensor({2, 2}, {0.3, -1.2, 0.77, 2.5}, true));
    Var w = tape.leaf(new_tensor({2, 2}, {1.5, -0.25, 0.125, 3.0}, true));
    Var y = tape.activation(Activation::kTanh, tape.matmul(x, w));
    Var loss = tape.mean_all(tape.mul(y, y));
    tape.backward(loss);
    std::vector<double> out = tape.value(loss).data;
    out.insert(out.end(), tape.grad(x).begin(), tape.grad(x).end());
    out.insert(out.end(), tape.grad(w).begin(), tape.grad(w).end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("NaN guard raises instead of propagating") {
  Tape tape;
  Var big = tape.constant(new_tensor({1}, {1e308}));
  CHECK_THROWS_AS(tape.mul(big, big), NumericError);
  CHECK_THROWS_AS(tape.leaf(new_tensor({1}, {std::nan("")})), NumericError);
}

TEST_CASE("finite_diff_check on sum of squares") {
  auto rng = make_rng(21);
  auto f = [](Tape& tape, Var x) { return tape.sum_all(tape.mul(x, x)); };
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = random_tensor({6}, rng);
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-6);
  }
}

TEST_CASE("finite_diff_check exact for linear") {
  auto rng = make_rng(22);
  Tensor x = random_tensor({5}, rng);
  auto f = [](Tape& tape, Var v) { return tape.sum_all(tape.scale(v, 1.75)); };
  CHECK(finite_diff_check(f, x, 1e-5) < 1e-9);
}

TEST_CASE("finite_diff_check on a 2-layer tanh MLP") {
  auto rng = make_rng(23);
  Tensor w1 = random_tensor({4, 5}, rng, -0.7, 0.7);
  Tensor b1 = random_tensor({5}, rng, -0.2, 0.2);
  Tensor w2 = random_tensor({5, 1}, rng, -0.7, 0.7);
  auto f = [&](Tape& tape, Var x) {
    Var h = tape.activation(Activation::kTanh,
                            tape.add(tape.matmul(x, tape.constant(w1)), tape.constant(b1)));
    Var out = tape.matmul(h, tape.constant(w2));
    return tape.sum_all(out);
  };
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = random_tensor({1, 4}, rng);
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-5);
  }
}

TEST_CASE("gradients flow to weights through matmul") {
  auto rng = make_rng(24);
  Tensor x = random_tensor({3, 4}, rng);
  auto f = [&](Tape& tape, Var w) {
    Var h = tape.activation(Activation::kSigmoid, tape.matmul(tape.constant(x), w));
    return tape.mean_all(h);
  };
  Tensor w = random_tensor({4, 2}, rng);
  CHECK(finite_diff_check(f, w, 1e-5) < 1e-5);
}
