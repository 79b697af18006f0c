#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vad/distributions.hpp"
#include "vad/rng.hpp"

using namespace vad;

namespace {

DiagGaussianParams random_posterior(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> umu(-2.0, 2.0);
  std::uniform_real_distribution<double> uls(-1.5, 0.5);
  DiagGaussianParams q;
  q.mu.resize(d);
  q.log_sigma.resize(d);
  for (auto& v : q.mu) v = umu(rng);
  for (auto& v : q.log_sigma) v = uls(rng);
  return q;
}

}  // namespace

TEST_CASE("reparameterize") {
  DiagGaussianParams q{{1.0, -2.0}, {0.0, 0.0}};
  CHECK(reparameterize(q, {0.0, 0.0}) == std::vector<double>{1.0, -2.0});

  DiagGaussianParams std_q{{0.0, 0.0}, {0.0, 0.0}};
  std::vector<double> eps{0.7, -1.3};
  CHECK(reparameterize(std_q, eps) == eps);

  DiagGaussianParams scaled{{1.0}, {std::log(2.0)}};
  auto z = reparameterize(scaled, {0.5});
  CHECK_THAT(z[0], Catch::Matchers::WithinAbs(2.0, 1e-14));

  CHECK_THROWS_AS(reparameterize(q, {1.0}), DimensionError);
}

TEST_CASE("masked_gauss_loglik reference values") {
  // exact Gaussian log-pdf at zero residual, unit variance
  const double ref = -0.5 * std::log(2.0 * std::numbers::pi);
  auto all = MaskedLikelihoodSpec::uniform({1}, 1.0);
  CHECK_THAT(masked_gauss_loglik({0.3}, {0.3}, all), Catch::Matchers::WithinAbs(ref, 1e-12));
  CHECK_THAT(masked_gauss_loglik({0.3}, {0.3}, all), Catch::Matchers::WithinAbs(-0.918939, 1e-6));

  auto none = MaskedLikelihoodSpec::uniform({0, 0}, 1.0);
  CHECK(masked_gauss_loglik({5.0, -1.0}, {0.0, 0.0}, none) == 0.0);

  auto partial = MaskedLikelihoodSpec::uniform({1, 0}, 1.0);
  CHECK_THAT(masked_gauss_loglik({0.0, 5.0}, {0.0, 0.0}, partial),
             Catch::Matchers::WithinAbs(ref, 1e-12));

  auto bad = MaskedLikelihoodSpec::uniform({1}, -1.0);
  CHECK_THROWS_AS(masked_gauss_loglik({1.0}, {0.0}, bad), ConfigError);
}

TEST_CASE("mask additivity") {
  auto rng = make_rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const std::size_t d = 12;
  std::vector<double> dec(d), x(d);
  for (auto& v : dec) v = u(rng);
  for (auto& v : x) v = u(rng);
  std::vector<std::uint8_t> mask(d);
  for (auto& m : mask) m = rng() & 1;

  const auto spec = MaskedLikelihoodSpec::uniform(mask, 0.7);
  const double whole = masked_gauss_loglik(dec, x, spec);

  // sum of per-coordinate 1-D contributions
  double coord_sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    auto one = MaskedLikelihoodSpec::uniform({mask[j]}, 0.7);
    coord_sum += masked_gauss_loglik({dec[j]}, {x[j]}, one);
  }
  CHECK_THAT(whole, Catch::Matchers::WithinAbs(coord_sum, 1e-12));

  // disjoint split of the observed set
  std::vector<std::uint8_t> part_a(mask), part_b(mask);
  for (std::size_t j = 0; j < d; ++j) {
    if (mask[j] && (j % 2 == 0)) part_a[j] = 0;
    if (mask[j] && (j % 2 == 1)) part_b[j] = 0;
  }
  const double split_sum =
      masked_gauss_loglik(dec, x, MaskedLikelihoodSpec::uniform(part_a, 0.7)) +
      masked_gauss_loglik(dec, x, MaskedLikelihoodSpec::uniform(part_b, 0.7));
  CHECK_THAT(whole, Catch::Matchers::WithinAbs(split_sum, 1e-12));
}

TEST_CASE("all-ones mask equals unmasked diagonal Gaussian log-pdf") {
  auto rng = make_rng(32);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const std::size_t d = 8;
  std::vector<double> dec(d), x(d), lam(d);
  for (auto& v : dec) v = u(rng);
  for (auto& v : x) v = u(rng);
  for (auto& v : lam) v = 0.1 + std::abs(u(rng));
  MaskedLikelihoodSpec spec;
  spec.mask.assign(d, 1);
  spec.lambda = lam;

  double expect = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double r = dec[j] - x[j];
    expect += -0.5 * r * r / lam[j] - 0.5 * std::log(2.0 * std::numbers::pi * lam[j]);
  }
  CHECK_THAT(masked_gauss_loglik(dec, x, spec), Catch::Matchers::WithinAbs(expect, 1e-12));
}

TEST_CASE("kl_to_std_normal closed form") {
  DiagGaussianParams standard{{0.0, 0.0}, {0.0, 0.0}};
  CHECK(kl_to_std_normal(standard) == 0.0);

  DiagGaussianParams shifted{{1.0}, {0.0}};
  CHECK_THAT(kl_to_std_normal(shifted), Catch::Matchers::WithinAbs(0.5, 1e-14));

  auto rng = make_rng(33);
  for (int rep = 0; rep < 50; ++rep) {
    auto q = random_posterior(6, rng);
    CHECK(kl_to_std_normal(q) >= 0.0);
  }
}

TEST_CASE("Monte-Carlo KL matches closed form within 3 standard errors") {
  auto rng = make_rng(34);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  const std::size_t n_samples = 100000;
  for (int rep = 0; rep < 3; ++rep) {
    auto q = random_posterior(4, rng);
    const double exact = kl_to_std_normal(q);
    double sum = 0.0, sumsq = 0.0;
    std::vector<double> eps(q.mu.size());
    for (std::size_t s = 0; s < n_samples; ++s) {
      for (auto& e : eps) e = stdnorm(rng);
      const auto z = reparameterize(q, eps);
      const double v = diag_gauss_logpdf(z, q) - std_normal_logpdf(z);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n_samples;
    const double var = (sumsq / n_samples - mean * mean) / (n_samples - 1.0);
    const double se = std::sqrt(std::max(var, 0.0));
    INFO("exact=" << exact << " mc=" << mean << " se=" << se);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
  }
}

TEST_CASE("lower_bound") {
  CHECK(lower_bound(-10.0, 2.0, ElboMode::kFull) == -12.0);
  CHECK(lower_bound(-10.0, 2.0, ElboMode::kReconOnly) == -10.0);
  CHECK_THROWS_AS(lower_bound(-10.0, -1.0, ElboMode::kFull), NumericError);
}

TEST_CASE("gradients of the tape variants pass finite differences") {
  auto rng = make_rng(35);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const std::size_t n = 3, d = 5, dz = 4;

  SECTION("masked log-likelihood w.r.t. decoded") {
    std::vector<double> xv(n * d), maskv(n * d), lam(d, 0.8);
    for (auto& v : xv) v = u(rng);
    for (auto& v : maskv) v = (rng() & 1) ? 1.0 : 0.0;
    auto f = [&](Tape& tape, Var dec) {
      Var x0 = tape.constant(new_tensor({n, d}, xv));
      Var mask = tape.constant(new_tensor({n, d}, maskv));
      return tape.sum_all(masked_gauss_loglik_rows(tape, dec, x0, mask, lam));
    };
    std::vector<double> decv(n * d);
    for (auto& v : decv) v = u(rng);
    CHECK(finite_diff_check(f, new_tensor({n, d}, decv), 1e-5) < 1e-5);
  }

  SECTION("KL w.r.t. mu and log_sigma") {
    std::vector<double> muv(n * dz), lsv(n * dz);
    for (auto& v : muv) v = u(rng);
    for (auto& v : lsv) v = 0.5 * u(rng);
    auto f_mu = [&](Tape& tape, Var mu) {
      Var ls = tape.constant(new_tensor({n, dz}, lsv));
      return tape.sum_all(kl_to_std_normal_rows(tape, mu, ls));
    };
    CHECK(finite_diff_check(f_mu, new_tensor({n, dz}, muv), 1e-5) < 1e-5);
    auto f_ls = [&](Tape& tape, Var ls) {
      Var mu = tape.constant(new_tensor({n, dz}, muv));
      return tape.sum_all(kl_to_std_normal_rows(tape, mu, ls));
    };
    CHECK(finite_diff_check(f_ls, new_tensor({n, dz}, lsv), 1e-5) < 1e-5);
  }

  SECTION("reparameterization w.r.t. mu and log_sigma") {
    std::vector<double> muv(n * dz), lsv(n * dz), epsv(n * dz);
    for (auto& v : muv) v = u(rng);
    for (auto& v : lsv) v = 0.5 * u(rng);
    for (auto& v : epsv) v = u(rng);
    auto f = [&](Tape& tape, Var ls) {
      Var mu = tape.constant(new_tensor({n, dz}, muv));
      Var eps = tape.constant(new_tensor({n, dz}, epsv));
      Var z = reparameterize_t(tape, mu, ls, eps);
      return tape.sum_all(tape.mul(z, z));
    };
    CHECK(finite_diff_check(f, new_tensor({n, dz}, lsv), 1e-5) < 1e-5);
  }
}

TEST_CASE("tape and scalar paths agree") {
  auto rng = make_rng(36);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const std::size_t d = 6;
  std::vector<double> dec(d), xv(d), maskv(d);
  std::vector<std::uint8_t> mask8(d);
  for (std::size_t j = 0; j < d; ++j) {
    dec[j] = u(rng);
    xv[j] = u(rng);
    mask8[j] = rng() & 1;
    maskv[j] = mask8[j];
  }
  std::vector<double> x0(xv);
  for (std::size_t j = 0; j < d; ++j)
    if (!mask8[j]) x0[j] = 0.0;

  Tape tape;
  Var decv = tape.constant(new_tensor({1, d}, dec));
  Var ll = masked_gauss_loglik_rows(tape, decv, tape.constant(new_tensor({1, d}, x0)),
                                    tape.constant(new_tensor({1, d}, maskv)),
                                    std::vector<double>(d, 1.0));
  const double scalar = masked_gauss_loglik(dec, xv, MaskedLikelihoodSpec::uniform(mask8, 1.0));
  CHECK_THAT(tape.value(ll).data[0], Catch::Matchers::WithinAbs(scalar, 1e-12));

  DiagGaussianParams q = random_posterior(d, rng);
  Tape tape2;
  Var kl = kl_to_std_normal_rows(tape2, tape2.constant(new_tensor({1, d}, q.mu)),
                                 tape2.constant(new_tensor({1, d}, q.log_sigma)));
  CHECK_THAT(tape2.value(kl).data[0], Catch::Matchers::WithinAbs(kl_to_std_normal(q), 1e-12));
}
