#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vad/engine.hpp"
#include "vad/errors.hpp"

// Checkpoint format: a textual key-value header, a BLOB line declaring the
// byte length, then all parameters as little-endian 64-bit reals in declared
// layer order (each layer's weights row-major, then its biases; the encoder
// trunk and heads follow the decoder for the vae). Loads are bit-exact.

namespace vad {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_f64_le(std::ostream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64_le(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kRelu: return "relu";
    default: return "identity";
  }
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw DataFormatError("checkpoint: unknown activation '" + s + "'");
}

inline std::string dims_str(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? " " : "") + std::to_string(dims[i]);
  return s;
}

inline void blob_stack(std::ostream& out, const MlpStack& stack) {
  for (std::size_t l = 0; l < stack.weights.size(); ++l) {
    for (double v : stack.weights[l].data) put_f64_le(out, v);
    for (double v : stack.biases[l].data) put_f64_le(out, v);
  }
}

inline void unblob_stack(const std::vector<unsigned char>& blob, std::size_t& off,
                         MlpStack& stack) {
  for (std::size_t l = 0; l < stack.weights.size(); ++l) {
    for (double& v : stack.weights[l].data) {
      v = get_f64_le(blob.data() + off);
      off += 8;
    }
    for (double& v : stack.biases[l].data) {
      v = get_f64_le(blob.data() + off);
      off += 8;
    }
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  const TrainConfig& cfg = bundle.cfg;
  std::size_t blob_len = 8 * bundle.decoder.param_count();
  if (bundle.encoder) blob_len += 8 * bundle.encoder->param_count();

  out << "VAD-CHECKPOINT " << kCheckpointVersion << "\n";
  out << "model " << model_kind_name(cfg.model) << "\n";
  out << "d_z " << cfg.d_z << "\n";
  out << "data_dim " << bundle.data_dim << "\n";
  out << "decoder_dims " << detail::dims_str(bundle.decoder.stack.dims) << "\n";
  out << "hidden_activation " << detail::activation_name(cfg.hidden_activation) << "\n";
  out << "output_activation " << detail::activation_name(cfg.output_activation) << "\n";
  if (bundle.encoder) out << "encoder_dims " << detail::dims_str(bundle.encoder->trunk.dims) << "\n";
  out << "sigma_mode " << (cfg.sigma.mode == SigmaMode::kFixed ? "fixed" : "learnable") << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", cfg.sigma.sigma0);
  out << "sigma0 " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", cfg.lambda);
  out << "lambda " << buf << "\n";
  out << "elbo_mode " << (cfg.elbo_mode == ElboMode::kFull ? "full" : "recon_only") << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", cfg.lr_theta);
  out << "lr_theta " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", cfg.lr_phi);
  out << "lr_phi " << buf << "\n";
  out << "rng_seed " << cfg.seed << "\n";
  out << "BLOB " << blob_len << "\n";

  detail::blob_stack(out, bundle.decoder.stack);
  if (bundle.encoder) {
    detail::blob_stack(out, bundle.encoder->trunk);
    for (double v : bundle.encoder->w_mu.data) detail::put_f64_le(out, v);
    for (double v : bundle.encoder->b_mu.data) detail::put_f64_le(out, v);
    for (double v : bundle.encoder->w_log_sigma.data) detail::put_f64_le(out, v);
    for (double v : bundle.encoder->b_log_sigma.data) detail::put_f64_le(out, v);
  }
  if (!out) throw DataFormatError("write failed: " + path);
}

inline ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("VAD-CHECKPOINT ", 0) != 0)
    throw DataFormatError(path + ": not a checkpoint file (bad signature at byte offset 0)");
  const int version = std::atoi(line.c_str() + 15);
  if (version != kCheckpointVersion)
    throw DataFormatError(path + ": unsupported checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));

  ModelBundle bundle;
  TrainConfig& cfg = bundle.cfg;
  std::vector<std::size_t> decoder_dims, encoder_dims;
  std::size_t declared_blob = 0;
  bool saw_blob = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "BLOB") {
      ls >> declared_blob;
      saw_blob = true;
      break;
    } else if (key == "model") {
      std::string v;
      ls >> v;
      if (v == "vad")
        cfg.model = ModelKind::kVad;
      else if (v == "vae")
        cfg.model = ModelKind::kVae;
      else
        throw DataFormatError(path + ": unknown model kind '" + v + "'");
    } else if (key == "d_z") {
      ls >> cfg.d_z;
    } else if (key == "data_dim") {
      ls >> bundle.data_dim;
    } else if (key == "decoder_dims") {
      std::size_t v;
      while (ls >> v) decoder_dims.push_back(v);
    } else if (key == "encoder_dims") {
      std::size_t v;
      while (ls >> v) encoder_dims.push_back(v);
    } else if (key == "hidden_activation") {
      std::string v;
      ls >> v;
      cfg.hidden_activation = detail::activation_from_name(v);
    } else if (key == "output_activation") {
      std::string v;
      ls >> v;
      cfg.output_activation = detail::activation_from_name(v);
    } else if (key == "sigma_mode") {
      std::string v;
      ls >> v;
      cfg.sigma.mode = v == "fixed" ? SigmaMode::kFixed : SigmaMode::kLearnable;
    } else if (key == "sigma0") {
      ls >> cfg.sigma.sigma0;
    } else if (key == "lambda") {
      ls >> cfg.lambda;
    } else if (key == "elbo_mode") {
      std::string v;
      ls >> v;
      cfg.elbo_mode = v == "full" ? ElboMode::kFull : ElboMode::kReconOnly;
    } else if (key == "lr_theta") {
      ls >> cfg.lr_theta;
    } else if (key == "lr_phi") {
      ls >> cfg.lr_phi;
    } else if (key == "rng_seed") {
      ls >> cfg.seed;
    }
    // unknown keys are ignored for forward compatibility
  }
  if (!saw_blob) throw DataFormatError(path + ": missing BLOB section");
  if (decoder_dims.size() < 2) throw DataFormatError(path + ": missing or short decoder_dims");
  if (decoder_dims.front() != cfg.d_z || decoder_dims.back() != bundle.data_dim)
    throw DataFormatError(path + ": decoder_dims disagree with d_z/data_dim");

  // reconstruct shapes, then overwrite every parameter from the blob
  bundle.decoder = init_decoder(decoder_dims, cfg.hidden_activation, cfg.output_activation, 0);
  cfg.decoder_hidden.assign(decoder_dims.begin() + 1, decoder_dims.end() - 1);
  std::size_t expected = 8 * bundle.decoder.param_count();
  if (cfg.model == ModelKind::kVae) {
    if (encoder_dims.size() < 2 || encoder_dims.front() != 2 * bundle.data_dim)
      throw DataFormatError(path + ": missing or inconsistent encoder_dims");
    std::vector<std::size_t> hidden(encoder_dims.begin() + 1, encoder_dims.end());
    bundle.encoder = init_encoder(bundle.data_dim, hidden, cfg.d_z, cfg.hidden_activation, 0);
    cfg.encoder_hidden = hidden;
    expected += 8 * bundle.encoder->param_count();
  }
  if (expected != declared_blob)
    throw DataFormatError(path + ": header/blob length disagreement, dims imply " +
                          std::to_string(expected) + " bytes but header declares " +
                          std::to_string(declared_blob));

  std::vector<unsigned char> blob(declared_blob);
  if (!in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(declared_blob))) {
    throw DataFormatError(path + ": truncated blob, expected " + std::to_string(declared_blob) +
                          " bytes, got " + std::to_string(in.gcount()));
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataFormatError(path + ": trailing bytes after declared blob length");

  std::size_t off = 0;
  detail::unblob_stack(blob, off, bundle.decoder.stack);
  if (bundle.encoder) {
    detail::unblob_stack(blob, off, bundle.encoder->trunk);
    auto read_tensor = [&](Tensor& t) {
      for (double& v : t.data) {
        v = detail::get_f64_le(blob.data() + off);
        off += 8;
      }
    };
    read_tensor(bundle.encoder->w_mu);
    read_tensor(bundle.encoder->b_mu);
    read_tensor(bundle.encoder->w_log_sigma);
    read_tensor(bundle.encoder->b_log_sigma);
  }
  return bundle;
}

// 8-bit binary PGM, used for the inpainting grids; values clamped to [0,1].
inline void write_pgm(const std::string& path, std::span<const double> pixels, std::size_t rows,
                      std::size_t cols) {
  if (pixels.size() != rows * cols) throw DimensionError("write_pgm: pixel count != rows*cols");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : pixels) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    const unsigned char byte = static_cast<unsigned char>(c * 255.0 + 0.5);
    out.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!out) throw DataFormatError("write failed: " + path);
}

// FNV-1a over the raw parameter bytes; the frozen-decoder assertions compare
// these hashes before and after inference.
inline std::uint64_t param_hash(const ModelBundle& bundle) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::vector<double>& data) {
    for (double v : data) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const Tensor& w : bundle.decoder.stack.weights) mix(w.data);
  for (const Tensor& b : bundle.decoder.stack.biases) mix(b.data);
  if (bundle.encoder) {
    for (const Tensor& w : bundle.encoder->trunk.weights) mix(w.data);
    for (const Tensor& b : bundle.encoder->trunk.biases) mix(b.data);
    mix(bundle.encoder->w_mu.data);
    mix(bundle.encoder->b_mu.data);
    mix(bundle.encoder->w_log_sigma.data);
    mix(bundle.encoder->b_log_sigma.data);
  }
  return h;
}

}  // namespace vad
