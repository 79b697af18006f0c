// Command-line front end: data generation, masking, training, inference,
// imputation, evaluation, and the two experiment protocols.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vad/checkpoint.hpp"
#include "vad/data.hpp"
#include "vad/engine.hpp"
#include "vad/errors.hpp"
#include "vad/experiment.hpp"

using json = nlohmann::json;
using namespace vad;

namespace {

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

TrainConfig config_from_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  TrainConfig cfg;
  if (j.contains("d_z")) cfg.d_z = j["d_z"].get<std::size_t>();
  if (j.contains("decoder_hidden")) cfg.decoder_hidden = j["decoder_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("encoder_hidden")) cfg.encoder_hidden = j["encoder_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("hidden_activation")) cfg.hidden_activation = parse_activation(j["hidden_activation"]);
  if (j.contains("output_activation")) cfg.output_activation = parse_activation(j["output_activation"]);
  if (j.contains("lr_theta")) cfg.lr_theta = j["lr_theta"].get<double>();
  if (j.contains("lr_phi")) cfg.lr_phi = j["lr_phi"].get<double>();
  if (j.contains("mc_samples")) cfg.mc_samples = j["mc_samples"].get<std::size_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"].get<std::size_t>();
  if (j.contains("elbo_mode"))
    cfg.elbo_mode = j["elbo_mode"] == "full" ? ElboMode::kFull : ElboMode::kReconOnly;
  if (j.contains("sigma_mode")) {
    if (j["sigma_mode"] == "learnable")
      cfg.sigma = SigmaSpec::learnable();
    else
      cfg.sigma = SigmaSpec::fixed(j.value("sigma0", 0.1));
  } else if (j.contains("sigma0")) {
    cfg.sigma = SigmaSpec::fixed(j["sigma0"].get<double>());
  }
  if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
  if (j.contains("plateau_rel_tol")) cfg.plateau_rel_tol = j["plateau_rel_tol"].get<double>();
  if (j.contains("plateau_patience")) cfg.plateau_patience = j["plateau_patience"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  return cfg;
}

Dataset load_dataset(const std::string& data_path, const std::string& masks_path) {
  Matrix values = read_values_csv(data_path);
  MaskMatrix masks = masks_path.empty() ? mask_from_values(values) : read_mask_csv(masks_path);
  if (masks.n != values.n || masks.d != values.d)
    throw DimensionError("data and mask shapes differ: " + data_path + " vs " + masks_path);
  return dataset_from_incomplete(values, masks);
}

void write_posteriors_csv(const std::string& path, const PosteriorBank& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  for (std::size_t j = 0; j < bank.d_z; ++j) out << (j ? "," : "") << "mu_" << j;
  for (std::size_t j = 0; j < bank.d_z; ++j) out << ",log_sigma_" << j;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < bank.count; ++i) {
    for (std::size_t j = 0; j < bank.d_z; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", bank.mu[i * bank.d_z + j]);
      out << (j ? "," : "") << buf;
    }
    for (std::size_t j = 0; j < bank.d_z; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", bank.log_sigma[i * bank.d_z + j]);
      out << "," << buf;
    }
    out << "\n";
  }
}

PosteriorBank read_posteriors_csv(const std::string& path) {
  Matrix m = read_values_csv(path);
  if (m.d % 2 != 0) throw DataFormatError(path + ": posterior CSV must have 2*d_z columns");
  PosteriorBank bank;
  bank.count = m.n;
  bank.d_z = m.d / 2;
  bank.mu.resize(bank.count * bank.d_z);
  bank.log_sigma.resize(bank.count * bank.d_z);
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < bank.d_z; ++j) {
      bank.mu[i * bank.d_z + j] = m.at(i, j);
      bank.log_sigma[i * bank.d_z + j] = m.at(i, bank.d_z + j);
    }
  return bank;
}

// Desk-scale default: one candidate per model. The reduced grid is the
// scaled-down sweep pattern (d_z x width x depth x lr x sigma0).
ExperimentGrid make_grid(const std::string& name, const TrainConfig& base) {
  ExperimentGrid grid;
  if (name == "tiny") {
    grid.vad_candidates = {base};
    grid.vae_candidates = {base};
    return grid;
  }
  if (name != "reduced") throw ConfigError("unknown grid '" + name + "' (use tiny or reduced)");
  for (std::size_t d_z : {8u, 25u})
    for (std::size_t width : {50u, 100u})
      for (std::size_t depth : {2u, 4u})
        for (double lr : {1e-2, 1e-3})
          for (double sigma0 : {0.01, 0.1, 0.5}) {
            TrainConfig cfg = base;
            cfg.d_z = d_z;
            cfg.decoder_hidden.assign(depth, width);
            cfg.encoder_hidden.assign(depth, width);
            cfg.lr_theta = lr;
            cfg.lr_phi = lr;
            cfg.sigma = SigmaSpec::fixed(sigma0);
            grid.vad_candidates.push_back(cfg);
            grid.vae_candidates.push_back(cfg);
          }
  return grid;
}

int run(int argc, char** argv) {
  CLI::App app{"Variational auto-decoder / auto-encoder harness for incomplete data"};
  app.require_subcommand(1);
  app.fallthrough();  // lets every subcommand accept --seed
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "master RNG seed")->capture_default_str();

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic ground-truth CSV");
  SyntheticConfig synth_cfg;
  std::string gen_out;
  gen->add_option("--n", synth_cfg.n_rows, "rows")->capture_default_str();
  gen->add_option("--d", synth_cfg.d, "dimensions")->capture_default_str();
  gen->add_option("--n-independent", synth_cfg.n_independent, "independent dimensions")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // --- mask ---
  auto* mask_cmd = app.add_subcommand("mask", "sample a missingness mask CSV");
  double mask_rate = -1.0;
  std::size_t mask_blocks = 0, mask_n = 0, mask_d = 0, mask_rows = 28, mask_cols = 28;
  std::string mask_out;
  mask_cmd->add_option("--rate", mask_rate, "MCAR missing ratio in [0,1]");
  mask_cmd->add_option("--blocks", mask_blocks, "number of 4x4 missing blocks per image");
  mask_cmd->add_option("--n", mask_n, "rows in the mask")->required();
  mask_cmd->add_option("--d", mask_d, "columns (MCAR mode)");
  mask_cmd->add_option("--rows", mask_rows, "image rows (block mode)")->capture_default_str();
  mask_cmd->add_option("--cols", mask_cols, "image cols (block mode)")->capture_default_str();
  mask_cmd->add_option("--out", mask_out, "output mask CSV")->required();

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train a model on incomplete data");
  std::string train_model = "vad", train_data, train_masks, train_config, train_out,
              train_metrics;
  train_cmd->add_option("--model", train_model, "vad or vae")->capture_default_str();
  train_cmd->add_option("--data", train_data, "incomplete data CSV")->required();
  train_cmd->add_option("--masks", train_masks, "mask CSV (default: derived from empty cells)");
  train_cmd->add_option("--config", train_config, "training config JSON");
  train_cmd->add_option("--out", train_out, "checkpoint output path")->required();
  train_cmd->add_option("--metrics-out", train_metrics, "training metrics CSV");

  // --- infer ---
  auto* infer_cmd = app.add_subcommand("infer", "posterior inference on new rows");
  std::string infer_ckpt, infer_data, infer_masks, infer_out;
  InferConfig infer_cfg;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer_cmd->add_option("--data", infer_data, "incomplete data CSV")->required();
  infer_cmd->add_option("--masks", infer_masks, "mask CSV");
  infer_cmd->add_option("--out", infer_out, "posterior CSV output")->required();
  infer_cmd->add_option("--max-steps", infer_cfg.max_steps, "optimization budget")
      ->capture_default_str();
  infer_cmd->add_option("--lr-phi", infer_cfg.lr_phi, "posterior learning rate")
      ->capture_default_str();

  // --- impute ---
  auto* impute_cmd = app.add_subcommand("impute", "fill missing entries from decoded means");
  std::string imp_ckpt, imp_post, imp_data, imp_masks, imp_out, imp_pgm_dir;
  std::size_t imp_rows = 28, imp_cols = 28;
  impute_cmd->add_option("--checkpoint", imp_ckpt, "trained checkpoint")->required();
  impute_cmd->add_option("--posteriors", imp_post, "posterior CSV from infer")->required();
  impute_cmd->add_option("--data", imp_data, "incomplete data CSV")->required();
  impute_cmd->add_option("--masks", imp_masks, "mask CSV");
  impute_cmd->add_option("--out", imp_out, "completed CSV output")->required();
  impute_cmd->add_option("--pgm-dir", imp_pgm_dir, "dump per-row PGM images (input/imputed)");
  impute_cmd->add_option("--img-rows", imp_rows, "PGM image rows")->capture_default_str();
  impute_cmd->add_option("--img-cols", imp_cols, "PGM image cols")->capture_default_str();

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "category MSE between decoded rows and truth");
  std::string eval_decoded, eval_truth, eval_masks, eval_out;
  eval_cmd->add_option("--decoded", eval_decoded, "decoded/completed CSV")->required();
  eval_cmd->add_option("--truth", eval_truth, "ground-truth CSV")->required();
  eval_cmd->add_option("--masks", eval_masks, "mask CSV")->required();
  eval_cmd->add_option("--out", eval_out, "JSON output path (default stdout)");

  // --- experiment ---
  auto* exp_cmd = app.add_subcommand("experiment", "run experiment 1 or 2 end to end");
  int exp_id = 1;
  std::string exp_mode = "test-only", exp_dataset = "synthetic", exp_data_path, exp_out,
              exp_grid = "tiny", exp_config;
  std::vector<double> exp_r_grid;
  std::size_t exp_runs = 5;
  bool exp_timing = false;
  SyntheticConfig exp_synth;
  exp_cmd->add_option("--id", exp_id, "1 (matched rates) or 2 (mismatched)")->required();
  exp_cmd->add_option("--mode", exp_mode, "test-only or train-only (experiment 2)")
      ->capture_default_str();
  exp_cmd->add_option("--dataset", exp_dataset, "synthetic, csv, or idx")->capture_default_str();
  exp_cmd->add_option("--data", exp_data_path, "dataset path for csv/idx sources");
  exp_cmd->add_option("--out", exp_out, "metrics CSV output")->required();
  exp_cmd->add_option("--r-grid", exp_r_grid, "missing ratios (default 0.1..0.9)")
      ->delimiter(',');
  exp_cmd->add_option("--runs", exp_runs, "seeded test runs per cell")->capture_default_str();
  exp_cmd->add_option("--grid", exp_grid, "hyperparameter grid: tiny or reduced")
      ->capture_default_str();
  exp_cmd->add_option("--config", exp_config, "base training config JSON");
  exp_cmd->add_flag("--timing", exp_timing,
                    "write real wall-clock seconds (breaks byte reproducibility)");
  exp_cmd->add_option("--n", exp_synth.n_rows, "synthetic rows")->capture_default_str();
  exp_cmd->add_option("--d", exp_synth.d, "synthetic dims")->capture_default_str();
  exp_cmd->add_option("--n-independent", exp_synth.n_independent, "synthetic independent dims")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;  // --help/--version exit cleanly
  }

  if (gen->parsed()) {
    synth_cfg.seed = seed;
    SyntheticDataset ds = gen_synthetic(synth_cfg);
    write_values_csv(gen_out, make_matrix(ds.data.n, ds.data.d, ds.data.x_hat));
    std::cerr << "wrote " << ds.data.n << "x" << ds.data.d << " synthetic CSV to " << gen_out
              << "\n";
    return kExitOk;
  }

  if (mask_cmd->parsed()) {
    MaskMatrix m;
    if (mask_rate >= 0.0) {
      if (mask_d == 0) throw ConfigError("mask: --d is required with --rate");
      m = sample_mcar(mask_n, mask_d, mask_rate, seed);
    } else if (mask_blocks > 0) {
      m.n = mask_n;
      m.d = mask_rows * mask_cols;
      m.v.reserve(m.n * m.d);
      for (std::size_t i = 0; i < mask_n; ++i) {
        auto row = sample_block_mask(mask_rows, mask_cols, 4, 4, mask_blocks,
                                     derive_seed(seed, i));
        m.v.insert(m.v.end(), row.begin(), row.end());
      }
    } else {
      throw ConfigError("mask: provide --rate or --blocks");
    }
    write_mask_csv(mask_out, m);
    std::cerr << "wrote " << m.n << "x" << m.d << " mask CSV to " << mask_out << "\n";
    return kExitOk;
  }

  if (train_cmd->parsed()) {
    TrainConfig cfg = train_config.empty() ? TrainConfig{} : config_from_json(train_config);
    if (train_model == "vad")
      cfg.model = ModelKind::kVad;
    else if (train_model == "vae")
      cfg.model = ModelKind::kVae;
    else
      throw ConfigError("train: unknown model '" + train_model + "'");
    if (app.count("--seed")) cfg.seed = seed;
    Dataset ds = load_dataset(train_data, train_masks);
    const auto start = std::chrono::steady_clock::now();
    TrainOutcome out = train(ds, nullptr, cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_checkpoint(train_out, out.bundle);
    std::cerr << "trained " << train_model << " for " << out.epochs_run
              << " epochs, final bound " << out.train_curve.back() << ", saved to " << train_out
              << "\n";
    if (!train_metrics.empty()) {
      MetricsRecord rec;
      rec.model = train_model;
      rec.seed = cfg.seed;
      rec.lower_bound = out.train_curve.back();
      rec.seconds = secs;
      write_metrics_csv(train_metrics, std::vector<MetricsRecord>{rec}, false);
    }
    return kExitOk;
  }

  if (infer_cmd->parsed()) {
    ModelBundle bundle = load_checkpoint(infer_ckpt);
    Dataset ds = load_dataset(infer_data, infer_masks);
    infer_cfg.seed = seed;
    InferResult res = infer(bundle, ds, infer_cfg);
    write_posteriors_csv(infer_out, res.bank);
    std::cerr << "inferred posteriors for " << ds.n << " rows in " << res.steps
              << " steps, bound " << res.bound << ", wrote " << infer_out << "\n";
    return kExitOk;
  }

  if (impute_cmd->parsed()) {
    ModelBundle bundle = load_checkpoint(imp_ckpt);
    PosteriorBank bank = read_posteriors_csv(imp_post);
    Dataset ds = load_dataset(imp_data, imp_masks);
    if (bank.count != ds.n) throw DimensionError("impute: posterior rows != data rows");
    Matrix completed;
    completed.n = ds.n;
    completed.d = ds.d;
    completed.v.reserve(ds.n * ds.d);
    for (std::size_t i = 0; i < ds.n; ++i) {
      auto row = impute(bundle, bank.params_of(i), ds.x_row(i), ds.mask_row(i));
      completed.v.insert(completed.v.end(), row.begin(), row.end());
    }
    write_values_csv(imp_out, completed);
    if (!imp_pgm_dir.empty()) {
      std::filesystem::create_directories(imp_pgm_dir);
      for (std::size_t i = 0; i < ds.n; ++i) {
        std::vector<double> given(ds.d);
        for (std::size_t j = 0; j < ds.d; ++j)
          given[j] = ds.masks[i * ds.d + j] ? ds.x[i * ds.d + j] : 0.0;
        write_pgm(imp_pgm_dir + "/row" + std::to_string(i) + "_given.pgm", given, imp_rows,
                  imp_cols);
        write_pgm(imp_pgm_dir + "/row" + std::to_string(i) + "_imputed.pgm",
                  completed.row(i), imp_rows, imp_cols);
      }
    }
    std::cerr << "imputed " << ds.n << " rows, wrote " << imp_out << "\n";
    return kExitOk;
  }

  if (eval_cmd->parsed()) {
    Matrix decoded = read_values_csv(eval_decoded);
    Matrix truth = read_values_csv(eval_truth);
    MaskMatrix masks = read_mask_csv(eval_masks);
    CategoryMse mse = eval_mse(decoded, truth, masks);
    json j;
    j["mse_incomplete"] = std::isnan(mse.incomplete) ? json() : json(mse.incomplete);
    j["mse_missing"] = std::isnan(mse.missing) ? json() : json(mse.missing);
    j["mse_full"] = std::isnan(mse.full) ? json() : json(mse.full);
    j["n_observed"] = mse.n_observed;
    j["n_missing"] = mse.n_missing;
    if (eval_out.empty()) {
      std::cout << j.dump(2) << "\n";
    } else {
      std::ofstream out(eval_out);
      out << j.dump(2) << "\n";
    }
    return kExitOk;
  }

  if (exp_cmd->parsed()) {
    Dataset gt;
    if (exp_dataset == "synthetic") {
      exp_synth.seed = derive_seed(seed, 900);
      gt = gen_synthetic(exp_synth).data;
    } else if (exp_dataset == "csv") {
      if (exp_data_path.empty()) throw ConfigError("experiment: --data required for csv source");
      Matrix values = read_values_csv(exp_data_path);
      for (double v : values.v)
        if (std::isnan(v))
          throw ConfigError("experiment: csv source must be fully observed ground truth");
      MaskMatrix ones{values.n, values.d, std::vector<std::uint8_t>(values.n * values.d, 1)};
      gt = apply_mask(values, ones);
    } else if (exp_dataset == "idx") {
      if (exp_data_path.empty()) throw ConfigError("experiment: --data required for idx source");
      gt = load_idx(exp_data_path);
    } else {
      throw ConfigError("experiment: unknown dataset source '" + exp_dataset + "'");
    }

    TrainConfig base = exp_config.empty() ? TrainConfig{} : config_from_json(exp_config);
    ExperimentConfig xcfg;
    xcfg.seed = seed;
    xcfg.n_test_runs = exp_runs;
    xcfg.timing = exp_timing;
    if (!exp_r_grid.empty()) xcfg.r_grid = exp_r_grid;

    std::vector<MetricsRecord> records;
    if (exp_id == 1) {
      records = experiment1(gt, make_grid(exp_grid, base), xcfg).records;
    } else if (exp_id == 2) {
      Exp2Mode mode;
      if (exp_mode == "test-only")
        mode = Exp2Mode::kTestOnly;
      else if (exp_mode == "train-only")
        mode = Exp2Mode::kTrainOnly;
      else
        throw ConfigError("experiment: unknown mode '" + exp_mode + "'");
      records = experiment2(mode, gt, base, base, xcfg);
    } else {
      throw ConfigError("experiment: --id must be 1 or 2");
    }
    write_metrics_csv(exp_out, records, true);
    std::cerr << "wrote " << records.size() << " metric rows to " << exp_out << "\n";
    return kExitOk;
  }

  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataFormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
