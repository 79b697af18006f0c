#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vad/distributions.hpp"
#include "vad/errors.hpp"
#include "vad/rng.hpp"
#include "vad/tensor.hpp"

// Model parameter sets: the neural decoder F(z; theta), the per-datapoint
// posterior bank (the decoder-only model's phi), and the amortized encoder
// used by the encoder-based baseline.

namespace vad {

enum class SigmaMode { kLearnable, kFixed };

struct SigmaSpec {
  SigmaMode mode = SigmaMode::kFixed;
  double sigma0 = 0.1;  // used in fixed mode

  static SigmaSpec learnable() { return {SigmaMode::kLearnable, 0.0}; }
  static SigmaSpec fixed(double sigma0) {
    if (sigma0 <= 0) throw ConfigError("SigmaSpec: sigma0 must be positive");
    return {SigmaMode::kFixed, sigma0};
  }
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = dist(rng);
  return new_tensor({fan_in, fan_out}, std::move(w));
}

}  // namespace detail

// Feedforward stack: dims = [in, h_1, ..., h_L, out]. Weights are persistent
// tensors re-registered on a fresh tape every optimization step.
struct MlpStack {
  std::vector<std::size_t> dims;
  std::vector<Tensor> weights;  // weights[l]: [dims[l], dims[l+1]]
  std::vector<Tensor> biases;   // biases[l]: [dims[l+1]]

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  }
};

inline MlpStack init_mlp_stack(const std::vector<std::size_t>& dims, std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("init_mlp_stack: need at least input and output dims");
  for (std::size_t d : dims)
    if (d < 1) throw ConfigError("init_mlp_stack: zero-width layer");
  MlpStack s;
  s.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    s.weights.push_back(detail::glorot_uniform(dims[l], dims[l + 1], rng));
    s.biases.push_back(zeros({dims[l + 1]}));
  }
  return s;
}

struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

inline MlpVars register_stack(Tape& tape, MlpStack& stack, bool trainable) {
  MlpVars vars;
  for (std::size_t l = 0; l < stack.weights.size(); ++l) {
    Tensor w = stack.weights[l];
    Tensor b = stack.biases[l];
    w.requires_grad = trainable;
    b.requires_grad = trainable;
    vars.weights.push_back(tape.leaf(std::move(w)));
    vars.biases.push_back(tape.leaf(std::move(b)));
  }
  return vars;
}

struct DecoderMLP {
  MlpStack stack;  // dims [d_z, h..., d]
  Activation hidden_activation = Activation::kTanh;
  Activation output_activation = Activation::kIdentity;

  std::size_t latent_dim() const { return stack.dims.front(); }
  std::size_t output_dim() const { return stack.dims.back(); }
  std::size_t param_count() const { return stack.param_count(); }
};

inline DecoderMLP init_decoder(const std::vector<std::size_t>& layer_dims,
                               Activation hidden_activation, Activation output_activation,
                               std::uint64_t rng_seed) {
  if (layer_dims.empty()) throw ConfigError("init_decoder: empty layer list");
  auto rng = make_rng(derive_seed(rng_seed, 1));
  DecoderMLP m;
  m.stack = init_mlp_stack(layer_dims, rng);
  m.hidden_activation = hidden_activation;
  m.output_activation = output_activation;
  return m;
}

inline Var decoder_forward(Tape& tape, const DecoderMLP& m, const MlpVars& vars, Var z) {
  Var h = z;
  const std::size_t layers = vars.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add(tape.matmul(h, vars.weights[l]), vars.biases[l]);
    h = tape.activation(l + 1 < layers ? m.hidden_activation : m.output_activation, h);
  }
  return h;
}

// Convenience forward pass outside any training graph: z [n, d_z] -> [n, d].
inline Tensor decode(DecoderMLP& m, const Tensor& z) {
  if (z.rank() != 2 || z.shape[1] != m.latent_dim())
    throw DimensionError("decode: z width != decoder latent dim");
  if (z.shape[0] == 0) return zeros({0, m.output_dim()});
  Tape tape;
  MlpVars vars = register_stack(tape, m.stack, false);
  Var out = decoder_forward(tape, m, vars, tape.constant(z));
  return tape.value(out);
}

// Per-datapoint approximate-posterior parameters, stored as flat [N, d_z]
// row-major arrays so batches can be gathered and scattered cheaply.
struct PosteriorBank {
  std::size_t count = 0;
  std::size_t d_z = 0;
  SigmaSpec sigma;
  std::vector<double> mu;         // [N, d_z]
  std::vector<double> log_sigma;  // [N, d_z]

  DiagGaussianParams params_of(std::size_t i) const {
    DiagGaussianParams q;
    q.mu.assign(mu.begin() + i * d_z, mu.begin() + (i + 1) * d_z);
    q.log_sigma.assign(log_sigma.begin() + i * d_z, log_sigma.begin() + (i + 1) * d_z);
    return q;
  }
  std::span<double> mu_row(std::size_t i) { return {mu.data() + i * d_z, d_z}; }
  std::span<double> log_sigma_row(std::size_t i) { return {log_sigma.data() + i * d_z, d_z}; }

  Tensor gather_mu(std::span<const std::size_t> rows) const { return gather(mu, rows); }
  Tensor gather_log_sigma(std::span<const std::size_t> rows) const {
    return gather(log_sigma, rows);
  }
  void scatter_mu(std::span<const std::size_t> rows, const Tensor& t) { scatter(mu, rows, t); }
  void scatter_log_sigma(std::span<const std::size_t> rows, const Tensor& t) {
    scatter(log_sigma, rows, t);
  }

 private:
  Tensor gather(const std::vector<double>& src, std::span<const std::size_t> rows) const {
    std::vector<double> out(rows.size() * d_z);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d_z; ++j) out[r * d_z + j] = src[rows[r] * d_z + j];
    return new_tensor({rows.size(), d_z}, std::move(out));
  }
  void scatter(std::vector<double>& dst, std::span<const std::size_t> rows, const Tensor& t) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d_z; ++j) dst[rows[r] * d_z + j] = t.data[r * d_z + j];
  }
};

inline PosteriorBank init_posterior_bank(std::size_t count, std::size_t d_z, SigmaSpec sigma,
                                         std::uint64_t rng_seed) {
  if (count < 1 || d_z < 1) throw ConfigError("init_posterior_bank: count and d_z must be >= 1");
  PosteriorBank bank;
  bank.count = count;
  bank.d_z = d_z;
  bank.sigma = sigma;
  bank.mu.resize(count * d_z);
  auto rng = make_rng(derive_seed(rng_seed, 2));
  std::normal_distribution<double> dist(0.0, 0.01);
  for (double& v : bank.mu) v = dist(rng);
  const double ls0 =
      sigma.mode == SigmaMode::kFixed ? std::log(sigma.sigma0) : std::log(0.1);
  bank.log_sigma.assign(count * d_z, ls0);
  return bank;
}

// Encoder for the amortized baseline: input is the zero-imputed datapoint
// concatenated with its mask (width 2d), a shared trunk, and two d_z-wide
// output heads.
struct EncoderMLP {
  MlpStack trunk;  // dims [2d, h...]
  Tensor w_mu, b_mu;
  Tensor w_log_sigma, b_log_sigma;
  Activation hidden_activation = Activation::kTanh;
  std::size_t data_dim = 0;
  std::size_t d_z = 0;

  std::size_t param_count() const {
    return trunk.param_count() + 2 * (trunk.dims.back() * d_z + d_z);
  }
};

inline EncoderMLP init_encoder(std::size_t data_dim, const std::vector<std::size_t>& hidden_dims,
                               std::size_t d_z, Activation hidden_activation,
                               std::uint64_t rng_seed) {
  if (data_dim < 1 || d_z < 1) throw ConfigError("init_encoder: data_dim and d_z must be >= 1");
  if (hidden_dims.empty()) throw ConfigError("init_encoder: need at least one hidden layer");
  auto rng = make_rng(derive_seed(rng_seed, 3));
  EncoderMLP e;
  e.data_dim = data_dim;
  e.d_z = d_z;
  e.hidden_activation = hidden_activation;
  std::vector<std::size_t> dims;
  dims.push_back(2 * data_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  e.trunk = init_mlp_stack(dims, rng);
  const std::size_t h = dims.back();
  e.w_mu = detail::glorot_uniform(h, d_z, rng);
  e.b_mu = zeros({d_z});
  e.w_log_sigma = detail::glorot_uniform(h, d_z, rng);
  e.b_log_sigma = zeros({d_z});
  return e;
}

// Zero-imputed datapoint concatenated with the mask; values at masked-out
// coordinates never reach the encoder.
inline std::vector<double> encoder_input(std::span<const double> x,
                                         std::span<const std::uint8_t> mask) {
  if (x.size() != mask.size()) throw DimensionError("encoder_input: x and mask lengths differ");
  std::vector<double> in(2 * x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    in[j] = mask[j] ? x[j] : 0.0;
    in[x.size() + j] = static_cast<double>(mask[j]);
  }
  return in;
}

struct EncoderVars {
  MlpVars trunk;
  Var w_mu, b_mu, w_log_sigma, b_log_sigma;
};

inline EncoderVars register_encoder(Tape& tape, EncoderMLP& e, bool trainable) {
  EncoderVars v;
  v.trunk = register_stack(tape, e.trunk, trainable);
  auto reg = [&](Tensor t) {
    t.requires_grad = trainable;
    return tape.leaf(std::move(t));
  };
  v.w_mu = reg(e.w_mu);
  v.b_mu = reg(e.b_mu);
  v.w_log_sigma = reg(e.w_log_sigma);
  v.b_log_sigma = reg(e.b_log_sigma);
  return v;
}

struct EncoderHeads {
  Var mu;
  Var log_sigma;
};

// xcat: [n, 2d] already zero-imputed + mask-concatenated.
inline EncoderHeads encoder_forward(Tape& tape, const EncoderMLP& e, const EncoderVars& vars,
                                    Var xcat) {
  Var h = xcat;
  for (std::size_t l = 0; l < vars.trunk.weights.size(); ++l) {
    h = tape.add(tape.matmul(h, vars.trunk.weights[l]), vars.trunk.biases[l]);
    h = tape.activation(e.hidden_activation, h);
  }
  EncoderHeads heads;
  heads.mu = tape.add(tape.matmul(h, vars.w_mu), vars.b_mu);
  heads.log_sigma = tape.add(tape.matmul(h, vars.w_log_sigma), vars.b_log_sigma);
  return heads;
}

// Single-datapoint amortized posterior (plain forward pass).
inline DiagGaussianParams encode(EncoderMLP& e, std::span<const double> x,
                                 std::span<const std::uint8_t> mask) {
  if (x.size() != e.data_dim) throw DimensionError("encode: datapoint width != encoder data dim");
  std::vector<double> in = encoder_input(x, mask);
  Tape tape;
  EncoderVars vars = register_encoder(tape, e, false);
  EncoderHeads heads =
      encoder_forward(tape, e, vars, tape.constant(new_tensor({1, in.size()}, in)));
  DiagGaussianParams q;
  q.mu = tape.value(heads.mu).data;
  q.log_sigma = tape.value(heads.log_sigma).data;
  if (e.d_z != q.mu.size()) throw DimensionError("encode: head width mismatch");
  return q;
}

}  // namespace vad
