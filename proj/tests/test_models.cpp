#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vad/models.hpp"
#include "vad/rng.hpp"

using namespace vad;

TEST_CASE("init_decoder is deterministic and respects the Glorot bound") {
  const std::vector<std::size_t> dims{50, 100, 100, 300};
  DecoderMLP a = init_decoder(dims, Activation::kTanh, Activation::kIdentity, 7);
  DecoderMLP b = init_decoder(dims, Activation::kTanh, Activation::kIdentity, 7);
  for (std::size_t l = 0; l < a.stack.weights.size(); ++l) {
    CHECK(a.stack.weights[l].data == b.stack.weights[l].data);
    const double bound = std::sqrt(6.0 / double(dims[l] + dims[l + 1]));
    for (double w : a.stack.weights[l].data) CHECK(std::abs(w) <= bound);
    for (double bias : a.stack.biases[l].data) CHECK(bias == 0.0);
  }
  DecoderMLP c = init_decoder(dims, Activation::kTanh, Activation::kIdentity, 8);
  CHECK(a.stack.weights[0].data != c.stack.weights[0].data);

  CHECK_THROWS_AS(init_decoder({}, Activation::kTanh, Activation::kIdentity, 0), ConfigError);
}

TEST_CASE("decoder parameter count matches the layer dims") {
  DecoderMLP m = init_decoder({8, 50, 50, 30}, Activation::kTanh, Activation::kIdentity, 1);
  std::size_t expect = 8 * 50 + 50 + 50 * 50 + 50 + 50 * 30 + 30;
  CHECK(m.param_count() == expect);
}

TEST_CASE("decode of an identity-initialized linear decoder is the identity") {
  DecoderMLP m = init_decoder({3, 3}, Activation::kTanh, Activation::kIdentity, 0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m.stack.weights[0].at(i, j) = i == j ? 1.0 : 0.0;
  Tensor z = new_tensor({2, 3}, {0.5, -1.0, 2.0, 0.0, 3.0, -0.25});
  CHECK(decode(m, z).data == z.data);
}

TEST_CASE("decode of an empty batch") {
  DecoderMLP m = init_decoder({4, 10, 6}, Activation::kTanh, Activation::kIdentity, 2);
  Tensor out = decode(m, zeros({0, 4}));
  CHECK(out.shape == std::vector<std::size_t>{0, 6});
  CHECK(out.numel() == 0);

  CHECK_THROWS_AS(decode(m, zeros({2, 5})), DimensionError);
}

TEST_CASE("decode gradient w.r.t. z passes finite differences") {
  DecoderMLP m = init_decoder({4, 12, 6}, Activation::kTanh, Activation::kSigmoid, 3);
  auto f = [&](Tape& tape, Var z) {
    MlpVars vars = register_stack(tape, m.stack, false);
    return tape.sum_all(decoder_forward(tape, m, vars, z));
  };
  auto rng = make_rng(40);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> zv(2 * 4);
  for (auto& v : zv) v = u(rng);
  CHECK(finite_diff_check(f, new_tensor({2, 4}, zv), 1e-5) < 1e-5);
}

TEST_CASE("decode is permutation-equivariant over the batch") {
  DecoderMLP m = init_decoder({5, 16, 7}, Activation::kRelu, Activation::kIdentity, 4);
  auto rng = make_rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 6;
  std::vector<double> zv(n * 5);
  for (auto& v : zv) v = u(rng);
  Tensor z = new_tensor({n, 5}, zv);
  Tensor out = decode(m, z);

  std::vector<std::size_t> perm{3, 1, 5, 0, 4, 2};
  std::vector<double> zperm(n * 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 5; ++j) zperm[i * 5 + j] = z.at(perm[i], j);
  Tensor out_perm = decode(m, new_tensor({n, 5}, zperm));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 7; ++j) CHECK(out_perm.at(i, j) == out.at(perm[i], j));
}

TEST_CASE("init_posterior_bank modes") {
  PosteriorBank fixed = init_posterior_bank(3, 2, SigmaSpec::fixed(0.5), 9);
  for (double ls : fixed.log_sigma) CHECK(ls == std::log(0.5));

  PosteriorBank learn = init_posterior_bank(3, 2, SigmaSpec::learnable(), 9);
  for (double ls : learn.log_sigma) CHECK(ls == std::log(0.1));

  PosteriorBank again = init_posterior_bank(3, 2, SigmaSpec::fixed(0.5), 9);
  CHECK(again.mu == fixed.mu);

  CHECK_THROWS_AS(SigmaSpec::fixed(0.0), ConfigError);
  CHECK_THROWS_AS(init_posterior_bank(0, 2, SigmaSpec::learnable(), 1), ConfigError);
}

TEST_CASE("posterior bank mu init is centered") {
  PosteriorBank bank = init_posterior_bank(10000, 10, SigmaSpec::fixed(0.1), 5);
  double mean = 0.0;
  for (double v : bank.mu) mean += v;
  mean /= double(bank.mu.size());
  CHECK(std::abs(mean) < 0.001);
}

TEST_CASE("bank rows are independent") {
  PosteriorBank bank = init_posterior_bank(4, 3, SigmaSpec::learnable(), 6);
  const auto before = bank.params_of(2);
  for (auto& v : bank.mu_row(1)) v = 99.0;
  for (auto& v : bank.log_sigma_row(1)) v = -99.0;
  const auto after = bank.params_of(2);
  CHECK(after.mu == before.mu);
  CHECK(after.log_sigma == before.log_sigma);
}

TEST_CASE("bank gather/scatter round trip") {
  PosteriorBank bank = init_posterior_bank(5, 2, SigmaSpec::learnable(), 7);
  std::vector<std::size_t> rows{4, 0, 2};
  Tensor mu = bank.gather_mu(rows);
  CHECK(mu.shape == std::vector<std::size_t>{3, 2});
  CHECK(mu.at(0, 0) == bank.params_of(4).mu[0]);
  mu.at(1, 1) = 42.0;
  bank.scatter_mu(rows, mu);
  CHECK(bank.params_of(0).mu[1] == 42.0);
}

TEST_CASE("encoder_input zero-imputes and appends the mask") {
  // all observed: x passes through, mask of ones appended
  auto in = encoder_input(std::vector<double>{1.0, 2.0}, std::vector<std::uint8_t>{1, 1});
  CHECK(in == std::vector<double>{1.0, 2.0, 1.0, 1.0});

  // all missing: zeros regardless of x
  in = encoder_input(std::vector<double>{7.0, -3.0}, std::vector<std::uint8_t>{0, 0});
  CHECK(in == std::vector<double>{0.0, 0.0, 0.0, 0.0});

  in = encoder_input(std::vector<double>{5.0, -2.0}, std::vector<std::uint8_t>{0, 1});
  CHECK(in == std::vector<double>{0.0, -2.0, 0.0, 1.0});
}

TEST_CASE("encode output shape and determinism") {
  EncoderMLP e = init_encoder(6, {20, 20}, 4, Activation::kTanh, 11);
  std::vector<double> x{0.5, -1.0, 2.0, 0.0, 1.5, -0.5};
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  auto q1 = encode(e, x, mask);
  auto q2 = encode(e, x, mask);
  CHECK(q1.mu.size() == 4);
  CHECK(q1.log_sigma.size() == 4);
  CHECK(q1.mu == q2.mu);
  CHECK(q1.log_sigma == q2.log_sigma);
}

TEST_CASE("encode ignores values at masked-out coordinates") {
  EncoderMLP e = init_encoder(4, {16}, 3, Activation::kTanh, 12);
  std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  std::vector<double> perturbed{1.0, -777.0, 3.0, 555.0};
  std::vector<std::uint8_t> mask{1, 0, 1, 0};
  auto qa = encode(e, x, mask);
  auto qb = encode(e, perturbed, mask);
  CHECK(qa.mu == qb.mu);
  CHECK(qa.log_sigma == qb.log_sigma);
}

TEST_CASE("encoder parameter count") {
  EncoderMLP e = init_encoder(10, {32}, 5, Activation::kTanh, 13);
  // trunk 20->32, two heads 32->5
  std::size_t expect = 20 * 32 + 32 + 2 * (32 * 5 + 5);
  CHECK(e.param_count() == expect);
}
