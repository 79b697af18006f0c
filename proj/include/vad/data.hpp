#pragma once

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/rng.hpp"

// Synthetic data generation, missingness samplers, masking, splits, the
// mean-prediction baseline, and dataset IO (CSV and IDX image files).

namespace vad {

inline double missing_marker() { return std::numeric_limits<double>::quiet_NaN(); }

struct Matrix {
  std::size_t n = 0, d = 0;
  std::vector<double> v;  // row-major [n, d]

  double& at(std::size_t i, std::size_t j) { return v[i * d + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * d + j]; }
  std::span<const double> row(std::size_t i) const { return {v.data() + i * d, d}; }
  std::span<double> row(std::size_t i) { return {v.data() + i * d, d}; }
};

inline Matrix make_matrix(std::size_t n, std::size_t d, std::vector<double> v) {
  if (v.size() != n * d) throw DimensionError("make_matrix: data length != n*d");
  return Matrix{n, d, std::move(v)};
}

struct MaskMatrix {
  std::size_t n = 0, d = 0;
  std::vector<std::uint8_t> v;  // 1 = observable, 0 = missing

  std::uint8_t at(std::size_t i, std::size_t j) const { return v[i * d + j]; }
  std::span<const std::uint8_t> row(std::size_t i) const { return {v.data() + i * d, d}; }
};

// Ground truth (when known), masks, and the incomplete view. x agrees with
// x_hat on observed entries; masked-out entries hold the missing marker.
// x_hat is evaluation-only and never feeds training.
struct Dataset {
  std::size_t n = 0, d = 0;
  bool has_ground_truth = false;
  std::vector<double> x_hat;       // [n, d] when has_ground_truth
  std::vector<std::uint8_t> masks;  // [n, d]
  std::vector<double> x;           // [n, d], NaN at missing entries

  std::span<const double> x_row(std::size_t i) const { return {x.data() + i * d, d}; }
  std::span<const double> x_hat_row(std::size_t i) const { return {x_hat.data() + i * d, d}; }
  std::span<const std::uint8_t> mask_row(std::size_t i) const { return {masks.data() + i * d, d}; }
};

inline Dataset apply_mask(const Matrix& x_hat, const MaskMatrix& masks) {
  if (x_hat.n != masks.n || x_hat.d != masks.d)
    throw DimensionError("apply_mask: value and mask shapes differ");
  Dataset ds;
  ds.n = x_hat.n;
  ds.d = x_hat.d;
  ds.has_ground_truth = true;
  ds.x_hat = x_hat.v;
  ds.masks = masks.v;
  ds.x.resize(x_hat.v.size());
  for (std::size_t i = 0; i < ds.x.size(); ++i)
    ds.x[i] = masks.v[i] ? x_hat.v[i] : missing_marker();
  return ds;
}

inline Dataset dataset_from_incomplete(const Matrix& x, const MaskMatrix& masks) {
  if (x.n != masks.n || x.d != masks.d)
    throw DimensionError("dataset_from_incomplete: value and mask shapes differ");
  Dataset ds;
  ds.n = x.n;
  ds.d = x.d;
  ds.has_ground_truth = false;
  ds.masks = masks.v;
  ds.x.resize(x.v.size());
  for (std::size_t i = 0; i < ds.x.size(); ++i)
    ds.x[i] = masks.v[i] ? x.v[i] : missing_marker();
  return ds;
}

// --- missingness samplers ---

// Each entry independently missing with probability r.
inline MaskMatrix sample_mcar(std::size_t n, std::size_t d, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sample_mcar: missing ratio outside [0,1]");
  MaskMatrix m;
  m.n = n;
  m.d = d;
  m.v.resize(n * d);
  auto rng = make_rng(derive_seed(seed, 11));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& cell : m.v) cell = u(rng) < r ? 0 : 1;
  return m;
}

// n_blocks possibly-overlapping block_h x block_w zero blocks on an all-ones
// grid; returned flattened row-major (one image's mask).
inline std::vector<std::uint8_t> sample_block_mask(std::size_t rows, std::size_t cols,
                                                   std::size_t block_h, std::size_t block_w,
                                                   std::size_t n_blocks, std::uint64_t seed) {
  if (block_h > rows || block_w > cols)
    throw ConfigError("sample_block_mask: block larger than grid");
  if (n_blocks < 1) throw ConfigError("sample_block_mask: n_blocks must be >= 1");
  std::vector<std::uint8_t> mask(rows * cols, 1);
  auto rng = make_rng(derive_seed(seed, 12));
  std::uniform_int_distribution<std::size_t> ur(0, rows - block_h);
  std::uniform_int_distribution<std::size_t> uc(0, cols - block_w);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t r0 = ur(rng);
    const std::size_t c0 = uc(rng);
    for (std::size_t i = 0; i < block_h; ++i)
      for (std::size_t j = 0; j < block_w; ++j) mask[(r0 + i) * cols + (c0 + j)] = 0;
  }
  return mask;
}

// --- synthetic data (independent draws plus derived interdependent dims) ---

enum class SynthDist { kNormal, kUniform, kBeta, kLogistic, kGumbel };

struct SynthColumnSpec {
  SynthDist dist;
  double p1 = 0.0, p2 = 0.0;
};

struct SyntheticConfig {
  std::size_t n_rows = 5000;
  std::size_t d = 30;
  std::size_t n_independent = 10;
  std::uint64_t seed = 0;
};

namespace detail {

inline double sample_open_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = u(rng);
  while (v <= 0.0 || v >= 1.0) v = u(rng);
  return v;
}

// Parameter ranges for the five generating families: Normal mu in [-1,1],
// sigma in (0,2]; Uniform a in [-2,2], b in [a,2]; Beta alpha,beta in
// (0.05,3] (degenerate 0 endpoint excluded); Logistic mu in [-1,1], s in
// (0,2]; Gumbel mu in [-1,1], beta in (0,2].
inline SynthColumnSpec draw_column_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_real_distribution<double> u11(-1.0, 1.0);
  std::uniform_real_distribution<double> u22(-2.0, 2.0);
  auto half_open_scale = [&](double hi) { return hi * (1.0 - std::generate_canonical<double, 53>(rng)); };
  SynthColumnSpec spec{};
  spec.dist = static_cast<SynthDist>(pick(rng));
  switch (spec.dist) {
    case SynthDist::kNormal:
      spec.p1 = u11(rng);
      spec.p2 = half_open_scale(2.0);
      break;
    case SynthDist::kUniform: {
      spec.p1 = u22(rng);
      std::uniform_real_distribution<double> ub(spec.p1, 2.0);
      spec.p2 = ub(rng);
      break;
    }
    case SynthDist::kBeta: {
      auto draw = [&] { return 3.0 - 2.95 * std::generate_canonical<double, 53>(rng); };
      spec.p1 = draw();
      spec.p2 = draw();
      break;
    }
    case SynthDist::kLogistic:
      spec.p1 = u11(rng);
      spec.p2 = half_open_scale(2.0);
      break;
    case SynthDist::kGumbel:
      spec.p1 = u11(rng);
      spec.p2 = half_open_scale(2.0);
      break;
  }
  return spec;
}

inline double sample_column_value(const SynthColumnSpec& spec, std::mt19937_64& rng) {
  switch (spec.dist) {
    case SynthDist::kNormal: {
      std::normal_distribution<double> dist(spec.p1, spec.p2);
      return dist(rng);
    }
    case SynthDist::kUniform: {
      std::uniform_real_distribution<double> dist(spec.p1, spec.p2);
      return dist(rng);
    }
    case SynthDist::kBeta: {
      std::gamma_distribution<double> ga(spec.p1, 1.0);
      std::gamma_distribution<double> gb(spec.p2, 1.0);
      const double a = ga(rng);
      const double b = gb(rng);
      return a + b > 0.0 ? a / (a + b) : 0.5;
    }
    case SynthDist::kLogistic: {
      const double u = sample_open_unit(rng);
      return spec.p1 + spec.p2 * std::log(u / (1.0 - u));
    }
    case SynthDist::kGumbel: {
      std::extreme_value_distribution<double> dist(spec.p1, spec.p2);
      return dist(rng);
    }
  }
  return 0.0;
}

}  // namespace detail

struct SyntheticDataset {
  Dataset data;  // fully observed, masks all ones
  std::vector<SynthColumnSpec> independent_specs;
};

// First n_independent columns are i.i.d. draws from randomly parameterized
// univariate families; each remaining column combines a random subset of
// independent columns through a weighted product, an affine sum, and a
// sampled activation.
inline SyntheticDataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_independent < 2) throw ConfigError("gen_synthetic: n_independent must be >= 2");
  if (cfg.d < cfg.n_independent) throw ConfigError("gen_synthetic: d must be >= n_independent");
  if (cfg.n_rows < 1) throw ConfigError("gen_synthetic: n_rows must be >= 1");
  auto rng = make_rng(derive_seed(cfg.seed, 13));
  const std::size_t n = cfg.n_rows, d = cfg.d;
  Matrix values;
  values.n = n;
  values.d = d;
  values.v.assign(n * d, 0.0);
  SyntheticDataset out;
  for (std::size_t j = 0; j < cfg.n_independent; ++j) {
    const SynthColumnSpec spec = detail::draw_column_spec(rng);
    out.independent_specs.push_back(spec);
    for (std::size_t i = 0; i < n; ++i) values.at(i, j) = detail::sample_column_value(spec, rng);
  }
  std::uniform_real_distribution<double> u11(-1.0, 1.0);
  for (std::size_t j = cfg.n_independent; j < d; ++j) {
    std::uniform_int_distribution<std::size_t> usize(2, std::min<std::size_t>(5, cfg.n_independent));
    const std::size_t k = usize(rng);
    std::vector<std::size_t> pool(cfg.n_independent);
    for (std::size_t p = 0; p < pool.size(); ++p) pool[p] = p;
    for (std::size_t p = 0; p < k; ++p) {
      std::uniform_int_distribution<std::size_t> upick(p, pool.size() - 1);
      std::swap(pool[p], pool[upick(rng)]);
    }
    std::vector<double> w(k), w_affine(k);
    for (auto& v : w) v = u11(rng);
    for (auto& v : w_affine) v = u11(rng);
    const double bias = u11(rng);
    std::uniform_int_distribution<int> uact(0, 2);
    const int act = uact(rng);
    for (std::size_t i = 0; i < n; ++i) {
      double prod = 1.0, affine = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double col = values.at(i, pool[p]);
        prod *= w[p] * col;
        affine += w_affine[p] * col;
      }
      double v = prod + affine + bias;
      if (act == 0)
        v = std::tanh(v);
      else if (act == 1)
        v = 1.0 / (1.0 + std::exp(-v));
      values.at(i, j) = v;
    }
  }
  MaskMatrix ones;
  ones.n = n;
  ones.d = d;
  ones.v.assign(n * d, 1);
  out.data = apply_mask(values, ones);
  return out;
}

// --- baseline and splits ---

// MSE of predicting the per-dimension train mean for every test entry.
inline double mean_baseline(const Matrix& train_x_hat, const Matrix& test_x_hat) {
  if (train_x_hat.d != test_x_hat.d) throw DimensionError("mean_baseline: dimension mismatch");
  if (train_x_hat.n == 0) throw ConfigError("mean_baseline: empty train set");
  if (test_x_hat.n == 0) throw ConfigError("mean_baseline: empty test set");
  const std::size_t d = train_x_hat.d;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < train_x_hat.n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += train_x_hat.at(i, j);
  for (double& m : mean) m /= static_cast<double>(train_x_hat.n);
  double sse = 0.0;
  for (std::size_t i = 0; i < test_x_hat.n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double r = test_x_hat.at(i, j) - mean[j];
      sse += r * r;
    }
  return sse / static_cast<double>(test_x_hat.n * d);
}

struct SplitResult {
  Dataset train, val, test;
};

namespace detail {

inline Dataset take_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.n = rows.size();
  out.d = ds.d;
  out.has_ground_truth = ds.has_ground_truth;
  if (ds.has_ground_truth) out.x_hat.reserve(rows.size() * ds.d);
  out.masks.reserve(rows.size() * ds.d);
  out.x.reserve(rows.size() * ds.d);
  for (std::size_t r : rows) {
    if (ds.has_ground_truth)
      out.x_hat.insert(out.x_hat.end(), ds.x_hat.begin() + r * ds.d,
                       ds.x_hat.begin() + (r + 1) * ds.d);
    out.masks.insert(out.masks.end(), ds.masks.begin() + r * ds.d,
                     ds.masks.begin() + (r + 1) * ds.d);
    out.x.insert(out.x.end(), ds.x.begin() + r * ds.d, ds.x.begin() + (r + 1) * ds.d);
  }
  return out;
}

}  // namespace detail

// Row-disjoint, exhaustive split; sizes are floors of the fractions with the
// remainder handed out in train, val, test order.
inline SplitResult split(const Dataset& ds, double f_train, double f_val, double f_test,
                         std::uint64_t seed) {
  if (f_train <= 0 || f_val <= 0 || f_test <= 0)
    throw ConfigError("split: fractions must be positive");
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  std::vector<std::size_t> order(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) order[i] = i;
  auto rng = make_rng(derive_seed(seed, 14));
  std::shuffle(order.begin(), order.end(), rng);
  std::array<std::size_t, 3> counts = {
      static_cast<std::size_t>(std::floor(f_train * static_cast<double>(ds.n))),
      static_cast<std::size_t>(std::floor(f_val * static_cast<double>(ds.n))),
      static_cast<std::size_t>(std::floor(f_test * static_cast<double>(ds.n)))};
  std::size_t assigned = counts[0] + counts[1] + counts[2];
  for (std::size_t k = 0; assigned < ds.n; k = (k + 1) % 3, ++assigned) ++counts[k];
  SplitResult out;
  std::span<const std::size_t> all(order);
  out.train = detail::take_rows(ds, all.subspan(0, counts[0]));
  out.val = detail::take_rows(ds, all.subspan(counts[0], counts[1]));
  out.test = detail::take_rows(ds, all.subspan(counts[0] + counts[1], counts[2]));
  return out;
}

// --- CSV IO ---
// Header `dim_0,...,dim_{d-1}`, LF line endings, decimal floats, empty cell
// = missing. Mask CSVs share the shape with cells in {0,1}.

inline void write_values_csv(const std::string& path, const Matrix& m,
                             const std::vector<std::uint8_t>* masks = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  for (std::size_t j = 0; j < m.d; ++j) out << (j ? "," : "") << "dim_" << j;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.d; ++j) {
      if (j) out << ",";
      const double v = m.at(i, j);
      const bool missing = (masks && !(*masks)[i * m.d + j]) || std::isnan(v);
      if (!missing) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
      }
    }
    out << "\n";
  }
  if (!out) throw DataFormatError("write failed: " + path);
}

inline void write_mask_csv(const std::string& path, const MaskMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  for (std::size_t j = 0; j < m.d; ++j) out << (j ? "," : "") << "dim_" << j;
  out << "\n";
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.d; ++j) out << (j ? "," : "") << int(m.at(i, j));
    out << "\n";
  }
  if (!out) throw DataFormatError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

// Values with empty cells coming back as the missing marker. The returned
// matrix uses NaN for missing entries; pair with read_mask_csv when masks
// are carried separately.
inline Matrix read_values_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DataFormatError(path + ": missing header row (byte offset 0)");
  const auto header = detail::split_csv_line(line);
  if (header.empty() || (header.size() == 1 && header[0].empty()))
    throw DataFormatError(path + ": malformed header (byte offset 0)");
  const std::size_t d = header.size();
  Matrix m;
  m.d = d;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() && in.eof()) break;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != d)
      throw DataFormatError(path + ": row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(d));
    for (const auto& cell : cells) {
      if (cell.empty()) {
        m.v.push_back(missing_marker());
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw DataFormatError(path + ": row " + std::to_string(row) +
                              ": cannot parse cell '" + cell + "'");
      m.v.push_back(v);
    }
  }
  m.n = row;
  return m;
}

inline MaskMatrix read_mask_csv(const std::string& path) {
  const Matrix m = read_values_csv(path);
  MaskMatrix out;
  out.n = m.n;
  out.d = m.d;
  out.v.resize(m.v.size());
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    if (m.v[i] == 0.0)
      out.v[i] = 0;
    else if (m.v[i] == 1.0)
      out.v[i] = 1;
    else
      throw DataFormatError(path + ": mask cell " + std::to_string(i) + " not in {0,1}");
  }
  return out;
}

// Mask derived from the value matrix itself (empty cells were missing).
inline MaskMatrix mask_from_values(const Matrix& m) {
  MaskMatrix out;
  out.n = m.n;
  out.d = m.d;
  out.v.resize(m.v.size());
  for (std::size_t i = 0; i < m.v.size(); ++i) out.v[i] = std::isnan(m.v[i]) ? 0 : 1;
  return out;
}

// --- IDX image ingestion (big-endian, magic 0x0803) ---

inline Dataset load_idx(const std::string& images_path) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open: " + images_path);
  auto read_u32 = [&](std::size_t offset) -> std::uint32_t {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw DataFormatError(images_path + ": truncated header at byte offset " +
                            std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
  };
  const std::uint32_t magic = read_u32(0);
  if (magic != 0x00000803u) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "bad IDX magic 0x%08" PRIx32 " at byte offset 0, expected 0x00000803",
                  magic);
    throw DataFormatError(images_path + ": " + msg);
  }
  const std::uint32_t n = read_u32(4);
  const std::uint32_t rows = read_u32(8);
  const std::uint32_t cols = read_u32(12);
  const std::size_t payload = std::size_t(n) * rows * cols;
  std::vector<unsigned char> pixels(payload);
  if (!in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(payload))) {
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    throw DataFormatError(images_path + ": truncated payload, expected " +
                          std::to_string(payload) + " bytes, got " + std::to_string(got) +
                          " (data starts at byte offset 16)");
  }
  Dataset ds;
  ds.n = n;
  ds.d = std::size_t(rows) * cols;
  ds.has_ground_truth = true;
  ds.x_hat.resize(payload);
  for (std::size_t i = 0; i < payload; ++i) ds.x_hat[i] = pixels[i] / 255.0;
  ds.x = ds.x_hat;
  ds.masks.assign(payload, 1);
  return ds;
}

}  // namespace vad
