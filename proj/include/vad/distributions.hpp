#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vad/errors.hpp"
#include "vad/tensor.hpp"

// Diagonal-Gaussian building blocks of the variational lower bound: the
// reparameterized approximate posterior, the masked reconstruction
// log-likelihood (missing dimensions marginalized out), the closed-form KL
// to a standard-normal prior, and the bound assembly itself.

namespace vad {

inline constexpr double kLn2Pi = 1.8378770664093454836;  // ln(2*pi)

enum class ElboMode { kReconOnly, kFull };

struct DiagGaussianParams {
  std::vector<double> mu;
  std::vector<double> log_sigma;  // sigma = exp(log_sigma) > 0 by construction
};

inline void validate(const DiagGaussianParams& q) {
  if (q.mu.size() != q.log_sigma.size())
    throw DimensionError("DiagGaussianParams: mu and log_sigma lengths differ");
  for (double ls : q.log_sigma)
    if (!std::isfinite(std::exp(ls)))
      throw NumericError("DiagGaussianParams: exp(log_sigma) not finite");
}

struct MaskedLikelihoodSpec {
  std::vector<double> lambda;  // per-dimension likelihood variance, read on observed dims
  std::vector<std::uint8_t> mask;  // 1 = observable, 0 = missing

  static MaskedLikelihoodSpec uniform(std::vector<std::uint8_t> mask, double lambda_value) {
    MaskedLikelihoodSpec s;
    s.lambda.assign(mask.size(), lambda_value);
    s.mask = std::move(mask);
    return s;
  }
};

// z = mu + eps .* exp(log_sigma)
inline std::vector<double> reparameterize(const DiagGaussianParams& q,
                                          const std::vector<double>& eps) {
  validate(q);
  if (eps.size() != q.mu.size())
    throw DimensionError("reparameterize: eps length " + std::to_string(eps.size()) +
                         " != mu length " + std::to_string(q.mu.size()));
  std::vector<double> z(q.mu.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = q.mu[j] + eps[j] * std::exp(q.log_sigma[j]);
  return z;
}

// sum over observed dims of ln N(decoded_j; x_j, lambda_j); missing dims
// contribute exactly 0.
inline double masked_gauss_loglik(const std::vector<double>& decoded,
                                  const std::vector<double>& x,
                                  const MaskedLikelihoodSpec& spec) {
  const std::size_t d = decoded.size();
  if (x.size() != d || spec.mask.size() != d || spec.lambda.size() != d)
    throw DimensionError("masked_gauss_loglik: vector lengths differ");
  double ll = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (spec.mask[j] == 0) continue;
    const double lam = spec.lambda[j];
    if (lam <= 0.0)
      throw ConfigError("masked_gauss_loglik: lambda <= 0 on observed dim " + std::to_string(j));
    const double r = decoded[j] - x[j];
    ll += -0.5 * r * r / lam - 0.5 * std::log(2.0 * std::numbers::pi * lam);
  }
  return ll;
}

// KL(N(mu, diag(sigma^2)) || N(0, I)) = sum_j 0.5*(sigma_j^2 + mu_j^2 - 1 - ln sigma_j^2)
inline double kl_to_std_normal(const DiagGaussianParams& q) {
  validate(q);
  double kl = 0.0;
  for (std::size_t j = 0; j < q.mu.size(); ++j) {
    const double s2 = std::exp(2.0 * q.log_sigma[j]);
    kl += 0.5 * (s2 + q.mu[j] * q.mu[j] - 1.0 - 2.0 * q.log_sigma[j]);
  }
  return kl;
}

inline double lower_bound(double recon, double kl, ElboMode mode) {
  if (kl < 0.0) throw NumericError("lower_bound: negative KL");
  return mode == ElboMode::kFull ? recon - kl : recon;
}

// log-density of z under N(mu, diag(sigma^2)); used by the Monte-Carlo KL
// consistency checks.
inline double diag_gauss_logpdf(const std::vector<double>& z, const DiagGaussianParams& q) {
  double lp = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double s2 = std::exp(2.0 * q.log_sigma[j]);
    const double r = z[j] - q.mu[j];
    lp += -0.5 * r * r / s2 - 0.5 * (kLn2Pi + std::log(s2));
  }
  return lp;
}

inline double std_normal_logpdf(const std::vector<double>& z) {
  double lp = 0.0;
  for (double v : z) lp += -0.5 * v * v - 0.5 * kLn2Pi;
  return lp;
}

// --- tape variants, used inside training graphs ---

// mu, log_sigma, eps: [n, d_z] -> z [n, d_z]
inline Var reparameterize_t(Tape& tape, Var mu, Var log_sigma, Var eps) {
  if (tape.value(mu).shape != tape.value(eps).shape)
    throw DimensionError("reparameterize_t: eps shape differs from mu");
  return tape.add(mu, tape.mul(eps, tape.exp(log_sigma)));
}

// decoded [n,d] against zero-filled observations x0 [n,d] with mask [n,d]
// and per-dimension lambda [d]; returns per-row log-likelihood [n].
// Gradients flow through `decoded` only.
inline Var masked_gauss_loglik_rows(Tape& tape, Var decoded, Var x0, Var mask,
                                    const std::vector<double>& lambda) {
  const Tensor& td = tape.value(decoded);
  if (td.rank() != 2) throw DimensionError("masked_gauss_loglik_rows: decoded must be rank 2");
  const std::size_t d = td.shape[1];
  if (lambda.size() != d) throw DimensionError("masked_gauss_loglik_rows: lambda length != d");
  std::vector<double> neg_half_inv(d), neg_half_log(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (lambda[j] <= 0.0)
      throw ConfigError("masked_gauss_loglik_rows: lambda <= 0 on dim " + std::to_string(j));
    neg_half_inv[j] = -0.5 / lambda[j];
    neg_half_log[j] = -0.5 * (kLn2Pi + std::log(lambda[j]));
  }
  Var diff = tape.sub(decoded, x0);
  Var quad = tape.mul(tape.mul(diff, diff), tape.constant(new_tensor({d}, neg_half_inv)));
  Var terms = tape.add(quad, tape.constant(new_tensor({d}, neg_half_log)));
  return tape.sum_rows(tape.mul(terms, mask));
}

// mu, log_sigma [n, d_z] -> per-row KL to N(0, I), shape [n].
inline Var kl_to_std_normal_rows(Tape& tape, Var mu, Var log_sigma) {
  Var two_ls = tape.scale(log_sigma, 2.0);
  Var sigma2 = tape.exp(two_ls);
  Var t = tape.add(sigma2, tape.mul(mu, mu));
  t = tape.add_scalar(t, -1.0);
  t = tape.sub(t, two_ls);
  return tape.scale(tape.sum_rows(t), 0.5);
}

inline Var lower_bound_t(Tape& tape, Var recon, Var kl, ElboMode mode) {
  if (mode == ElboMode::kReconOnly) return recon;
  return tape.sub(recon, kl);
}

}  // namespace vad
