#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vad/data.hpp"
#include "vad/distributions.hpp"
#include "vad/errors.hpp"
#include "vad/models.hpp"
#include "vad/optim.hpp"
#include "vad/rng.hpp"
#include "vad/tensor.hpp"

// Training and inference loops for both posterior parameterizations, the
// imputation path, and the per-category MSE evaluation.
//
// One optimization step builds a fresh tape: sample eps, reparameterize the
// per-row posteriors (bank lookup for the decoder-only model, an encoder
// forward pass for the amortized baseline), decode, accumulate the masked
// Gaussian log-likelihood, subtract the KL term when the full bound is
// requested, then take one Adam step on the decoder and posterior
// parameters jointly.

namespace vad {

enum class ModelKind { kVad, kVae };

inline const char* model_kind_name(ModelKind k) { return k == ModelKind::kVad ? "vad" : "vae"; }

struct TrainConfig {
  ModelKind model = ModelKind::kVad;
  std::size_t d_z = 8;
  std::vector<std::size_t> decoder_hidden = {50, 50};
  std::vector<std::size_t> encoder_hidden = {50, 50};  // used by the vae only
  Activation hidden_activation = Activation::kTanh;
  Activation output_activation = Activation::kIdentity;
  double lr_theta = 1e-2;
  double lr_phi = 1e-2;
  std::size_t mc_samples = 1;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 200;
  ElboMode elbo_mode = ElboMode::kReconOnly;
  SigmaSpec sigma = SigmaSpec::fixed(0.1);
  double lambda = 1.0;
  double plateau_rel_tol = 1e-4;
  int plateau_patience = 20;
  std::size_t val_refine_steps = 2;  // posterior-only steps on the val bank per epoch
  std::uint64_t seed = 0;

  void validate() const {
    if (d_z < 1) throw ConfigError("TrainConfig: d_z must be >= 1");
    if (decoder_hidden.empty()) throw ConfigError("TrainConfig: decoder needs hidden layers");
    if (model == ModelKind::kVae && encoder_hidden.empty())
      throw ConfigError("TrainConfig: encoder needs hidden layers");
    if (mc_samples < 1) throw ConfigError("TrainConfig: mc_samples must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
    if (lambda <= 0) throw ConfigError("TrainConfig: lambda must be positive");
    if (lr_theta <= 0 || lr_phi <= 0) throw ConfigError("TrainConfig: learning rates must be positive");
  }

  std::vector<std::size_t> decoder_dims(std::size_t data_dim) const {
    std::vector<std::size_t> dims{d_z};
    dims.insert(dims.end(), decoder_hidden.begin(), decoder_hidden.end());
    dims.push_back(data_dim);
    return dims;
  }
};

struct ModelBundle {
  TrainConfig cfg;
  std::size_t data_dim = 0;
  DecoderMLP decoder;
  std::optional<EncoderMLP> encoder;

  std::size_t param_count() const {
    return decoder.param_count() + (encoder ? encoder->param_count() : 0);
  }
};

namespace detail {

// Adam moments for a posterior bank, one state per datapoint row.
struct BankAdam {
  std::vector<double> m_mu, v_mu, m_ls, v_ls;
  std::vector<std::int64_t> t;
  AdamParams hp;

  BankAdam(std::size_t count, std::size_t d_z, const AdamParams& params)
      : m_mu(count * d_z, 0.0),
        v_mu(count * d_z, 0.0),
        m_ls(count * d_z, 0.0),
        v_ls(count * d_z, 0.0),
        t(count, 0),
        hp(params) {}

  void step_row(PosteriorBank& bank, std::size_t row, std::span<const double> g_mu,
                std::span<const double> g_ls) {
    const std::size_t dz = bank.d_z, off = row * dz;
    ++t[row];
    adam_update(bank.mu_row(row), g_mu, {m_mu.data() + off, dz}, {v_mu.data() + off, dz}, t[row],
                hp);
    if (!g_ls.empty() && bank.sigma.mode == SigmaMode::kLearnable)
      adam_update(bank.log_sigma_row(row), g_ls, {m_ls.data() + off, dz},
                  {v_ls.data() + off, dz}, t[row], hp);
  }
};

// Adam moments for every tensor of an MLP stack (and encoder heads).
struct StackAdam {
  std::vector<AdamState> states;

  void attach(const MlpStack& stack, const AdamParams& hp) {
    for (const Tensor& w : stack.weights) states.emplace_back(w.numel(), hp);
    for (const Tensor& b : stack.biases) states.emplace_back(b.numel(), hp);
  }
  void attach(const Tensor& t, const AdamParams& hp) { states.emplace_back(t.numel(), hp); }
};

inline void step_stack(StackAdam& adam, std::size_t& cursor, MlpStack& stack, Tape& tape,
                       const MlpVars& vars) {
  for (std::size_t l = 0; l < stack.weights.size(); ++l)
    adam.states[cursor++].step(stack.weights[l].data, tape.grad(vars.weights[l]));
  for (std::size_t l = 0; l < stack.biases.size(); ++l)
    adam.states[cursor++].step(stack.biases[l].data, tape.grad(vars.biases[l]));
}

// Zero-filled observations and double-valued masks, the constant inputs of
// every step graph. Values at masked-out coordinates are zeroed before they
// reach any tape, which is what makes the losses mask-blind.
struct PreparedData {
  std::size_t n = 0, d = 0;
  std::vector<double> x0;      // x with missing entries set to 0
  std::vector<double> mask_d;  // masks as doubles
  std::vector<double> xcat;    // [n, 2d] encoder input (built on demand)

  static PreparedData from(const Dataset& ds, bool with_encoder_input) {
    PreparedData p;
    p.n = ds.n;
    p.d = ds.d;
    p.x0.resize(ds.n * ds.d);
    p.mask_d.resize(ds.n * ds.d);
    for (std::size_t i = 0; i < ds.x.size(); ++i) {
      p.mask_d[i] = ds.masks[i];
      p.x0[i] = ds.masks[i] ? ds.x[i] : 0.0;
    }
    if (with_encoder_input) {
      p.xcat.resize(ds.n * 2 * ds.d);
      for (std::size_t i = 0; i < ds.n; ++i)
        for (std::size_t j = 0; j < ds.d; ++j) {
          p.xcat[i * 2 * ds.d + j] = p.x0[i * ds.d + j];
          p.xcat[i * 2 * ds.d + ds.d + j] = p.mask_d[i * ds.d + j];
        }
    }
    return p;
  }

  Tensor x0_rows(std::span<const std::size_t> rows) const { return gather(x0, rows, d); }
  Tensor mask_rows(std::span<const std::size_t> rows) const { return gather(mask_d, rows, d); }
  Tensor xcat_rows(std::span<const std::size_t> rows) const { return gather(xcat, rows, 2 * d); }

 private:
  static Tensor gather(const std::vector<double>& src, std::span<const std::size_t> rows,
                       std::size_t width) {
    std::vector<double> out(rows.size() * width);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) out[r * width + j] = src[rows[r] * width + j];
    return new_tensor({rows.size(), width}, std::move(out));
  }
};

inline Tensor sample_eps(std::size_t n, std::size_t d_z, std::mt19937_64& rng) {
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::vector<double> e(n * d_z);
  for (double& v : e) v = stdnorm(rng);
  return new_tensor({n, d_z}, std::move(e));
}

struct StepResult {
  double bound = 0.0;  // batch-mean lower bound
  Var mu{}, log_sigma{};
};

// Shared graph: posterior (mu, log_sigma) vars already on the tape.
inline StepResult build_bound(Tape& tape, const DecoderMLP& decoder, const MlpVars& dvars,
                              Var mu, Var log_sigma, const Tensor& x0, const Tensor& mask,
                              const TrainConfig& cfg, std::mt19937_64& eps_rng,
                              const Tensor* fixed_eps) {
  const std::size_t n = x0.shape[0];
  const std::vector<double> lambda(x0.shape[1], cfg.lambda);
  Var x0c = tape.constant(x0);
  Var maskc = tape.constant(mask);
  Var recon_sum{};
  for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
    Tensor eps = fixed_eps ? *fixed_eps : sample_eps(n, cfg.d_z, eps_rng);
    Var z = reparameterize_t(tape, mu, log_sigma, tape.constant(std::move(eps)));
    Var dec = decoder_forward(tape, decoder, dvars, z);
    Var ll = tape.mean_all(masked_gauss_loglik_rows(tape, dec, x0c, maskc, lambda));
    recon_sum = s == 0 ? ll : tape.add(recon_sum, ll);
  }
  Var recon = cfg.mc_samples == 1 ? recon_sum
                                  : tape.scale(recon_sum, 1.0 / double(cfg.mc_samples));
  Var bound = recon;
  if (cfg.elbo_mode == ElboMode::kFull) {
    Var kl = tape.mean_all(kl_to_std_normal_rows(tape, mu, log_sigma));
    bound = lower_bound_t(tape, recon, kl, ElboMode::kFull);
  }
  StepResult out;
  out.bound = tape.value(bound).data[0];
  out.mu = mu;
  out.log_sigma = log_sigma;
  // loss is -bound; seed the backward pass through a scale node
  tape.backward(tape.scale(bound, -1.0));
  return out;
}

}  // namespace detail

struct TrainOutcome {
  ModelBundle bundle;
  PosteriorBank train_bank;          // decoder-only model; empty for the vae
  std::vector<double> train_curve;   // per-epoch train-set bound
  std::vector<double> val_curve;     // per-epoch validation bound (empty without val data)
  double final_val_bound = std::numeric_limits<double>::quiet_NaN();
  std::size_t epochs_run = 0;
};

inline TrainOutcome train(const Dataset& train_ds, const Dataset* val_ds,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (train_ds.n == 0) throw ConfigError("train: empty dataset");
  if (train_ds.masks.size() != train_ds.n * train_ds.d)
    throw DimensionError("train: dataset masks missing or misshapen");
  const std::size_t n = train_ds.n, d = train_ds.d;
  const bool is_vae = cfg.model == ModelKind::kVae;

  TrainOutcome out;
  out.bundle.cfg = cfg;
  out.bundle.data_dim = d;
  out.bundle.decoder = init_decoder(cfg.decoder_dims(d), cfg.hidden_activation,
                                    cfg.output_activation, derive_seed(cfg.seed, 21));
  if (is_vae)
    out.bundle.encoder = init_encoder(d, cfg.encoder_hidden, cfg.d_z, cfg.hidden_activation,
                                      derive_seed(cfg.seed, 23));
  else
    out.train_bank = init_posterior_bank(n, cfg.d_z, cfg.sigma, derive_seed(cfg.seed, 22));

  DecoderMLP& decoder = out.bundle.decoder;
  const AdamParams theta_hp{.lr = cfg.lr_theta};
  const AdamParams phi_hp{.lr = cfg.lr_phi};
  detail::StackAdam theta_adam;
  theta_adam.attach(decoder.stack, theta_hp);
  if (is_vae) {
    theta_adam.attach(out.bundle.encoder->trunk, theta_hp);
    theta_adam.attach(out.bundle.encoder->w_mu, theta_hp);
    theta_adam.attach(out.bundle.encoder->b_mu, theta_hp);
    theta_adam.attach(out.bundle.encoder->w_log_sigma, theta_hp);
    theta_adam.attach(out.bundle.encoder->b_log_sigma, theta_hp);
  }
  detail::BankAdam bank_adam(is_vae ? 1 : n, cfg.d_z, phi_hp);

  const detail::PreparedData data = detail::PreparedData::from(train_ds, is_vae);
  auto shuffle_rng = make_rng(derive_seed(cfg.seed, 24));
  auto eps_rng = make_rng(derive_seed(cfg.seed, 25));

  // Validation state: the vae evaluates by forward pass; the decoder-only
  // model keeps a posterior bank for the validation rows and refines it a
  // few phi-only steps per epoch with the current decoder frozen. A fixed
  // eps draw makes epoch-over-epoch bounds comparable.
  std::optional<detail::PreparedData> val_data;
  PosteriorBank val_bank;
  std::optional<detail::BankAdam> val_adam;
  Tensor val_eps;
  std::vector<std::size_t> val_rows;
  if (val_ds && val_ds->n > 0) {
    if (val_ds->d != d) throw DimensionError("train: validation dimension mismatch");
    val_data = detail::PreparedData::from(*val_ds, is_vae);
    auto val_rng = make_rng(derive_seed(cfg.seed, 26));
    val_eps = detail::sample_eps(val_ds->n, cfg.d_z, val_rng);
    val_rows.resize(val_ds->n);
    for (std::size_t i = 0; i < val_ds->n; ++i) val_rows[i] = i;
    if (!is_vae) {
      val_bank = init_posterior_bank(val_ds->n, cfg.d_z, cfg.sigma, derive_seed(cfg.seed, 27));
      val_adam.emplace(val_ds->n, cfg.d_z, phi_hp);
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  PlateauState plateau(cfg.plateau_rel_tol, cfg.plateau_patience);
  std::mt19937_64 null_rng;  // never consumed when a fixed eps is supplied

  auto run_vad_batch = [&](std::span<const std::size_t> rows, PosteriorBank& bank,
                           detail::BankAdam& adam, const detail::PreparedData& pd,
                           bool update_theta, bool update_bank, const Tensor* fixed_eps,
                           std::mt19937_64& step_eps_rng) {
    Tape tape;
    MlpVars dvars = register_stack(tape, decoder.stack, update_theta);
    Tensor mu_t = bank.gather_mu(rows);
    mu_t.requires_grad = update_bank;
    Tensor ls_t = bank.gather_log_sigma(rows);
    ls_t.requires_grad = update_bank && bank.sigma.mode == SigmaMode::kLearnable;
    Var mu = tape.leaf(std::move(mu_t));
    Var ls = tape.leaf(std::move(ls_t));
    detail::StepResult res =
        detail::build_bound(tape, decoder, dvars, mu, ls, pd.x0_rows(rows), pd.mask_rows(rows),
                            cfg, step_eps_rng, fixed_eps);
    if (update_theta) {
      std::size_t cursor = 0;
      detail::step_stack(theta_adam, cursor, decoder.stack, tape, dvars);
    }
    if (update_bank) {
      auto g_mu = tape.grad(mu);
      auto g_ls = tape.grad(ls);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        std::span<const double> row_mu{g_mu.data() + r * cfg.d_z, cfg.d_z};
        std::span<const double> row_ls =
            g_ls.empty() ? std::span<const double>{}
                         : std::span<const double>{g_ls.data() + r * cfg.d_z, cfg.d_z};
        adam.step_row(bank, rows[r], row_mu, row_ls);
      }
    }
    return res.bound;
  };

  auto run_vae_batch = [&](std::span<const std::size_t> rows, const detail::PreparedData& pd,
                           bool update_params, const Tensor* fixed_eps,
                           std::mt19937_64& step_eps_rng) {
    EncoderMLP& encoder = *out.bundle.encoder;
    Tape tape;
    MlpVars dvars = register_stack(tape, decoder.stack, update_params);
    EncoderVars evars = register_encoder(tape, encoder, update_params);
    EncoderHeads heads = encoder_forward(tape, encoder, evars, tape.constant(pd.xcat_rows(rows)));
    Var ls = heads.log_sigma;
    if (cfg.sigma.mode == SigmaMode::kFixed) {
      Tensor fixed = new_tensor({rows.size(), cfg.d_z},
                                std::vector<double>(rows.size() * cfg.d_z,
                                                    std::log(cfg.sigma.sigma0)));
      ls = tape.constant(std::move(fixed));
    }
    detail::StepResult res =
        detail::build_bound(tape, decoder, dvars, heads.mu, ls, pd.x0_rows(rows),
                            pd.mask_rows(rows), cfg, step_eps_rng, fixed_eps);
    if (update_params) {
      std::size_t cursor = 0;
      detail::step_stack(theta_adam, cursor, decoder.stack, tape, dvars);
      detail::step_stack(theta_adam, cursor, encoder.trunk, tape, evars.trunk);
      theta_adam.states[cursor++].step(encoder.w_mu.data, tape.grad(evars.w_mu));
      theta_adam.states[cursor++].step(encoder.b_mu.data, tape.grad(evars.b_mu));
      theta_adam.states[cursor++].step(encoder.w_log_sigma.data, tape.grad(evars.w_log_sigma));
      theta_adam.states[cursor++].step(encoder.b_log_sigma.data, tape.grad(evars.b_log_sigma));
    }
    return res.bound;
  };

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_bound = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      std::span<const std::size_t> rows{order.data() + start, len};
      double b;
      try {
        b = is_vae ? run_vae_batch(rows, data, true, nullptr, eps_rng)
                   : run_vad_batch(rows, out.train_bank, bank_adam, data, true, true, nullptr, eps_rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch at row " + std::to_string(start) + ")");
      }
      epoch_bound += b * double(len);
    }
    epoch_bound /= double(n);
    out.train_curve.push_back(epoch_bound);
    out.epochs_run = epoch + 1;

    double objective = epoch_bound;
    if (val_data) {
      if (!is_vae)
        for (std::size_t s = 0; s < cfg.val_refine_steps; ++s)
          run_vad_batch(val_rows, val_bank, *val_adam, *val_data, false, true, nullptr, eps_rng);
      // fixed-eps bound, no parameter updates
      double vb;
      if (is_vae) {
        vb = run_vae_batch(val_rows, *val_data, false, &val_eps, null_rng);
      } else {
        vb = run_vad_batch(val_rows, val_bank, *val_adam, *val_data, false, false, &val_eps, null_rng);
      }
      out.val_curve.push_back(vb);
      objective = vb;
    }
    if (plateau_check(plateau, objective) == PlateauDecision::kStop) break;
  }
  out.final_val_bound = val_data && !out.val_curve.empty() ? plateau.best
                        : out.train_curve.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                  : plateau.best;
  return out;
}

// --- inference ---

struct InferConfig {
  std::size_t max_steps = 2000;
  double lr_phi = 1e-2;
  double rel_tol = 1e-4;
  int patience = 20;
  std::uint64_t seed = 0;
  const PosteriorBank* warm_start = nullptr;  // optional initial bank (copied)
};

struct InferResult {
  PosteriorBank bank;
  double bound = 0.0;      // fixed-eps estimate of the achieved lower bound
  std::size_t steps = 0;   // posterior-optimization steps taken (0 for the vae)
};

// Test-time posterior inference. Decoder parameters are registered
// non-trainable, so they are bit-identical before and after. For the
// decoder-only model a fresh bank is optimized until plateau; for the vae a
// single encoder forward pass produces the posterior.
inline InferResult infer(ModelBundle& bundle, const Dataset& ds, const InferConfig& icfg) {
  if (ds.d != bundle.data_dim) throw DimensionError("infer: data width != model width");
  const TrainConfig& cfg = bundle.cfg;
  const bool is_vae = cfg.model == ModelKind::kVae;
  const detail::PreparedData data = detail::PreparedData::from(ds, is_vae);
  auto rng = make_rng(derive_seed(icfg.seed, 31));
  Tensor eval_eps = detail::sample_eps(ds.n, cfg.d_z, rng);
  std::vector<std::size_t> rows(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) rows[i] = i;

  InferResult out;
  std::mt19937_64 null_rng;

  auto bound_at = [&](PosteriorBank& bank) {
    Tape tape;
    MlpVars dvars = register_stack(tape, bundle.decoder.stack, false);
    Var mu = tape.constant(bank.gather_mu(rows));
    Var ls = tape.constant(bank.gather_log_sigma(rows));
    const std::vector<double> lambda(ds.d, cfg.lambda);
    Var z = reparameterize_t(tape, mu, ls, tape.constant(eval_eps));
    Var dec = decoder_forward(tape, bundle.decoder, dvars, z);
    Var recon = tape.mean_all(masked_gauss_loglik_rows(
        tape, dec, tape.constant(data.x0_rows(rows)), tape.constant(data.mask_rows(rows)),
        lambda));
    if (cfg.elbo_mode == ElboMode::kFull) {
      Var kl = tape.mean_all(kl_to_std_normal_rows(tape, mu, ls));
      return tape.value(lower_bound_t(tape, recon, kl, ElboMode::kFull)).data[0];
    }
    return tape.value(recon).data[0];
  };

  if (is_vae) {
    EncoderMLP& encoder = *bundle.encoder;
    out.bank.count = ds.n;
    out.bank.d_z = cfg.d_z;
    out.bank.sigma = cfg.sigma;
    out.bank.mu.resize(ds.n * cfg.d_z);
    out.bank.log_sigma.resize(ds.n * cfg.d_z);
    Tape tape;
    EncoderVars evars = register_encoder(tape, encoder, false);
    EncoderHeads heads = encoder_forward(tape, encoder, evars, tape.constant(data.xcat_rows(rows)));
    out.bank.mu = tape.value(heads.mu).data;
    out.bank.log_sigma = cfg.sigma.mode == SigmaMode::kFixed
                             ? std::vector<double>(ds.n * cfg.d_z, std::log(cfg.sigma.sigma0))
                             : tape.value(heads.log_sigma).data;
    out.bound = bound_at(out.bank);
    return out;
  }

  if (icfg.warm_start) {
    if (icfg.warm_start->count != ds.n || icfg.warm_start->d_z != cfg.d_z)
      throw DimensionError("infer: warm-start bank shape mismatch");
    out.bank = *icfg.warm_start;
  } else {
    out.bank = init_posterior_bank(ds.n, cfg.d_z, cfg.sigma, derive_seed(icfg.seed, 32));
  }
  detail::BankAdam adam(ds.n, cfg.d_z, AdamParams{.lr = icfg.lr_phi});
  auto eps_rng = make_rng(derive_seed(icfg.seed, 33));
  PlateauState plateau(icfg.rel_tol, icfg.patience);
  const std::vector<double> lambda(ds.d, cfg.lambda);
  for (std::size_t step = 0; step < icfg.max_steps; ++step) {
    Tape tape;
    MlpVars dvars = register_stack(tape, bundle.decoder.stack, false);
    Tensor mu_t = out.bank.gather_mu(rows);
    mu_t.requires_grad = true;
    Tensor ls_t = out.bank.gather_log_sigma(rows);
    ls_t.requires_grad = cfg.sigma.mode == SigmaMode::kLearnable;
    Var mu = tape.leaf(std::move(mu_t));
    Var ls = tape.leaf(std::move(ls_t));
    detail::build_bound(tape, bundle.decoder, dvars, mu, ls, data.x0_rows(rows),
                        data.mask_rows(rows), cfg, eps_rng, nullptr);
    auto g_mu = tape.grad(mu);
    auto g_ls = tape.grad(ls);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::span<const double> row_mu{g_mu.data() + r * cfg.d_z, cfg.d_z};
      std::span<const double> row_ls =
          g_ls.empty() ? std::span<const double>{}
                       : std::span<const double>{g_ls.data() + r * cfg.d_z, cfg.d_z};
      adam.step_row(out.bank, r, row_mu, row_ls);
    }
    out.steps = step + 1;
    if (plateau_check(plateau, bound_at(out.bank)) == PlateauDecision::kStop) break;
  }
  out.bound = bound_at(out.bank);
  return out;
}

// Decoded mean of the posterior: decode(mu) row by row.
inline Matrix decode_means(ModelBundle& bundle, const PosteriorBank& bank) {
  Tensor mu = new_tensor({bank.count, bank.d_z}, bank.mu);
  Tensor dec = decode(bundle.decoder, mu);
  return make_matrix(bank.count, bundle.data_dim, std::move(dec.data));
}

// Observed entries kept from x, missing entries filled from decode(mu).
inline std::vector<double> impute(ModelBundle& bundle, const DiagGaussianParams& posterior,
                                  std::span<const double> x, std::span<const std::uint8_t> mask) {
  if (posterior.mu.size() != bundle.cfg.d_z) throw DimensionError("impute: posterior width != d_z");
  if (x.size() != mask.size() || x.size() != bundle.data_dim)
    throw DimensionError("impute: row width mismatch");
  Tensor mu = new_tensor({1, posterior.mu.size()}, posterior.mu);
  Tensor dec = decode(bundle.decoder, mu);
  std::vector<double> outrow(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) outrow[j] = mask[j] ? x[j] : dec.data[j];
  return outrow;
}

// --- evaluation ---

struct CategoryMse {
  double incomplete = std::numeric_limits<double>::quiet_NaN();  // over mask=1 entries
  double missing = std::numeric_limits<double>::quiet_NaN();     // over mask=0 entries
  double full = std::numeric_limits<double>::quiet_NaN();        // over all entries
  std::size_t n_observed = 0, n_missing = 0;
};

// Per-entry MSE between decoded rows and the revealed ground truth, split by
// mask category. Categories with zero entries stay NaN rather than 0.
inline CategoryMse eval_mse(const Matrix& decoded, const Matrix& x_hat, const MaskMatrix& masks) {
  if (decoded.n != x_hat.n || decoded.d != x_hat.d || masks.n != x_hat.n || masks.d != x_hat.d)
    throw DimensionError("eval_mse: shapes differ");
  CategoryMse out;
  double sse_obs = 0.0, sse_miss = 0.0;
  for (std::size_t i = 0; i < decoded.n; ++i)
    for (std::size_t j = 0; j < decoded.d; ++j) {
      const double r = decoded.at(i, j) - x_hat.at(i, j);
      if (masks.at(i, j)) {
        sse_obs += r * r;
        ++out.n_observed;
      } else {
        sse_miss += r * r;
        ++out.n_missing;
      }
    }
  if (out.n_observed) out.incomplete = sse_obs / double(out.n_observed);
  if (out.n_missing) out.missing = sse_miss / double(out.n_missing);
  const std::size_t total = out.n_observed + out.n_missing;
  if (total) out.full = (sse_obs + sse_miss) / double(total);
  return out;
}

// --- metrics records and their CSV schema ---

struct MetricsRecord {
  std::string model;
  double r_train = 0.0, r_test = 0.0;
  std::uint64_t seed = 0;
  double mse_incomplete = std::numeric_limits<double>::quiet_NaN();
  double mse_missing = std::numeric_limits<double>::quiet_NaN();
  double mse_full = std::numeric_limits<double>::quiet_NaN();
  double lower_bound = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  double baseline_mse = std::numeric_limits<double>::quiet_NaN();
};

inline std::string metrics_csv_header(bool with_baseline) {
  std::string h = "model,r_train,r_test,seed,mse_incomplete,mse_missing,mse_full,lower_bound,seconds";
  if (with_baseline) h += ",baseline_mse";
  return h + "\n";
}

inline std::string metrics_csv_row(const MetricsRecord& rec, bool with_baseline) {
  char buf[64];
  auto num = [&](double v) -> std::string {
    if (std::isnan(v)) return "";  // undefined category -> empty cell
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
  };
  std::string row = rec.model;
  row += "," + num(rec.r_train) + "," + num(rec.r_test) + "," + std::to_string(rec.seed);
  row += "," + num(rec.mse_incomplete) + "," + num(rec.mse_missing) + "," + num(rec.mse_full);
  row += "," + num(rec.lower_bound);
  std::snprintf(buf, sizeof buf, "%.3f", rec.seconds);
  row += "," + std::string(buf);
  if (with_baseline) row += "," + num(rec.baseline_mse);
  return row + "\n";
}

inline void write_metrics_csv(const std::string& path, std::span<const MetricsRecord> records,
                              bool with_baseline) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  out << metrics_csv_header(with_baseline);
  for (const auto& rec : records) out << metrics_csv_row(rec, with_baseline);
  if (!out) throw DataFormatError("write failed: " + path);
}

}  // namespace vad
