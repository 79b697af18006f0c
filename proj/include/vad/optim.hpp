#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vad/errors.hpp"

// Gradient-step rules and plateau detection for the training loops.

namespace vad {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

// Buffer-level Adam update with bias correction; t is the step count after
// increment (first call passes t = 1). Shared by whole-model states and the
// per-datapoint posterior states, which slice row views out of larger arrays.
inline void adam_update(std::span<double> params, std::span<const double> grads,
                        std::span<double> m, std::span<double> v, std::int64_t t,
                        const AdamParams& hp) {
  if (params.size() != grads.size() || m.size() != params.size() || v.size() != params.size())
    throw DimensionError("adam_update: buffer sizes differ");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) throw NumericError("adam_update: non-finite gradient");
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps_hat);
  }
}

// Owns moments for one parameter group.
struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
  AdamParams hp;

  AdamState() = default;
  AdamState(std::size_t n, const AdamParams& params) : m(n, 0.0), v(n, 0.0), hp(params) {}

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m.size())
      throw DimensionError("AdamState::step: group size " + std::to_string(m.size()) +
                           " != params size " + std::to_string(params.size()));
    ++t;
    adam_update(params, grads, m, v, t, hp);
  }
};

inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

// Plateau detection on a maximized objective: stop once the best value seen
// has gone `patience` consecutive appends without improving by more than
// rel_tol * (1 + |best|).
struct PlateauState {
  double rel_tol = 1e-4;
  int patience = 20;
  std::vector<double> history;
  double best = 0.0;
  int since_improvement = 0;

  PlateauState() = default;
  PlateauState(double tol, int pat) : rel_tol(tol), patience(pat) {
    if (tol <= 0) throw ConfigError("PlateauState: rel_tol must be positive");
    if (pat < 1) throw ConfigError("PlateauState: patience must be >= 1");
  }
};

enum class PlateauDecision { kContinue, kStop };

inline PlateauDecision plateau_check(PlateauState& state, double new_value) {
  if (std::isnan(new_value)) throw NumericError("plateau_check: NaN objective value");
  state.history.push_back(new_value);
  if (state.history.size() == 1) {
    state.best = new_value;
    state.since_improvement = 0;
    return PlateauDecision::kContinue;
  }
  if (new_value > state.best + state.rel_tol * (1.0 + std::abs(state.best))) {
    state.best = new_value;
    state.since_improvement = 0;
  } else {
    ++state.since_improvement;
    state.best = std::max(state.best, new_value);
  }
  return state.since_improvement >= state.patience ? PlateauDecision::kStop
                                                   : PlateauDecision::kContinue;
}

}  // namespace vad
