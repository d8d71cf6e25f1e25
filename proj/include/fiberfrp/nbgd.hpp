// SPDX-License-Identifier: Apache-2.0
//
// Normalized batch gradient descent (NBGD) for FRP kernels.
//
// The optimizer works on the dimensionless vector w = kappa * s with
// kappa = (8/9) gamma E_s, so r_hat = a + j T w and the step size alpha is
// independent of launch power. Kernels are mapped back as s = w / kappa.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fiberfrp/frp.hpp"
#include "fiberfrp/kernels.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

enum class ConvergenceCriterion { mse_difference, parameter_distance };

inline const char* to_string(ConvergenceCriterion c) {
  return c == ConvergenceCriterion::mse_difference ? "mse_difference" : "parameter_distance";
}

struct OptimizerConfig {
  double alpha0 = 0.0;  // 0: median |grad| of the first gradient
  double schedule_decay = 0.9;
  std::size_t schedule_period = 15;
  double mse_threshold_factor = 0.1;
  std::size_t max_iterations = 100000;
  double validation_factor = 10.0;
  std::size_t validation_retries = 5;
  double alpha_retry_shrink = 0.75;
  std::size_t batch_size = 4096;
  ConvergenceCriterion criterion = ConvergenceCriterion::mse_difference;
  double parameter_tolerance = 1e-6;  // parameter_distance only: ||w(l+1) - w(l)|| < tol

  void validate() const {
    if (alpha0 < 0.0) throw ConfigError("alpha0 must be >= 0 (0 selects automatic)");
    if (!(schedule_decay > 0.0 && schedule_decay < 1.0)) throw ConfigError("schedule_decay must lie in (0, 1)");
    if (schedule_period == 0) throw ConfigError("schedule_period must be positive");
    if (!(mse_threshold_factor > 0.0)) throw ConfigError("mse_threshold_factor must be positive");
    if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
    if (!(validation_factor > 0.0)) throw ConfigError("validation_factor must be positive");
    if (validation_retries == 0) throw ConfigError("validation_retries must be positive");
    if (!(alpha_retry_shrink > 0.0 && alpha_retry_shrink < 1.0))
      throw ConfigError("alpha_retry_shrink must lie in (0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(parameter_tolerance > 0.0)) throw ConfigError("parameter_tolerance must be positive");
  }
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"alpha0", c.alpha0},
       {"schedule_decay", c.schedule_decay},
       {"schedule_period", c.schedule_period},
       {"mse_threshold_factor", c.mse_threshold_factor},
       {"max_iterations", c.max_iterations},
       {"validation_factor", c.validation_factor},
       {"validation_retries", c.validation_retries},
       {"alpha_retry_shrink", c.alpha_retry_shrink},
       {"batch_size", c.batch_size},
       {"criterion", to_string(c.criterion)},
       {"parameter_tolerance", c.parameter_tolerance}};
}

enum class OptimizerStatus { running, converged, validated, failed };

inline const char* to_string(OptimizerStatus s) {
  switch (s) {
    case OptimizerStatus::running: return "running";
    case OptimizerStatus::converged: return "converged";
    case OptimizerStatus::validated: return "validated";
    case OptimizerStatus::failed: return "failed";
  }
  return "?";
}

struct OptimizerState {
  CVec s_hat;  // normalized kernels w
  CVec r_hat;
  std::size_t iteration = 0;
  double alpha = 0.0;
  std::vector<double> mse_trace;
  OptimizerStatus status = OptimizerStatus::running;
  double last_step_norm = std::numeric_limits<double>::infinity();
};

/// (1 / 2B) ||r_hat - r||^2.
inline double mse(const CVec& r_hat, const CVec& r) {
  if (r_hat.size() != r.size()) throw ConfigError("mse: length mismatch");
  if (r.empty()) throw ConfigError("mse: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += std::norm(r_hat[i] - r[i]);
  return acc / (2.0 * static_cast<double>(r.size()));
}

/// Gradient of the MSE in the Wirtinger sense: grad = -eta * g.
struct WirtingerGradient {
  CVec g;    // T^H (r_hat - r)
  cplx eta;  // j kappa / B
  CVec full() const {
    CVec out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = -eta * g[i];
    return out;
  }
};

/// kappa = (8/9) gamma E_s; pass 1 when differentiating with respect to w.
inline WirtingerGradient wirtinger_gradient(const TripletBatch& batch, const CVec& r_hat, double kappa) {
  const std::size_t B = batch.rows();
  const std::size_t L = batch.cols();
  if (r_hat.size() != B) throw ConfigError("wirtinger_gradient: r_hat length mismatch");
  WirtingerGradient out;
  out.g.assign(L, cplx{});
  out.eta = kJ * kappa / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const cplx e = r_hat[i] - batch.r[i];
    const cplx* t = batch.row(i);
    for (std::size_t j = 0; j < L; ++j) out.g[j] += detail::mul(std::conj(t[j]), e);
  }
  return out;
}

/// a + j T w.
inline CVec normalized_prediction(const TripletBatch& batch, const CVec& w) {
  CVec out = batch_product(batch, w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = batch.a[i] + kJ * out[i];
  return out;
}

inline OptimizerState make_state(const TripletBatch& batch, CVec w, double alpha) {
  if (w.size() != batch.cols()) throw ConfigError("initial kernel vector length does not match batch memory");
  OptimizerState st;
  st.s_hat = std::move(w);
  st.alpha = alpha;
  st.r_hat = normalized_prediction(batch, st.s_hat);
  st.mse_trace.push_back(mse(st.r_hat, batch.r));
  return st;
}

inline constexpr double kGradientGuard = 1e-300;

/// One normalized step w += j alpha g / |g| (component-wise), then r_hat and the schedule.
inline void nbgd_step(OptimizerState& state, const TripletBatch& batch, const OptimizerConfig& config) {
  if (state.status != OptimizerStatus::running) throw OptimizerError("nbgd_step: optimizer is not running");
  const auto grad = wirtinger_gradient(batch, state.r_hat, 1.0);
  bool any = false;
  double step2 = 0.0;
  for (std::size_t i = 0; i < grad.g.size(); ++i) {
    const double mag = std::abs(grad.g[i]);
    if (mag < kGradientGuard) continue;
    any = true;
    const cplx d = kJ * (state.alpha / mag) * grad.g[i];
    state.s_hat[i] += d;
    step2 += std::norm(d);
  }
  state.last_step_norm = std::sqrt(step2);
  if (!any) {
    state.status = OptimizerStatus::converged;
    return;
  }
  state.r_hat = normalized_prediction(batch, state.s_hat);
  state.mse_trace.push_back(mse(state.r_hat, batch.r));
  ++state.iteration;
  if (state.iteration % config.schedule_period == 0) state.alpha *= config.schedule_decay;
}

/// Convergence test after a step taken with step size alpha_used.
inline bool has_converged(const OptimizerState& state, const OptimizerConfig& config, double alpha_used) {
  if (state.status == OptimizerStatus::converged) return true;
  if (config.criterion == ConvergenceCriterion::parameter_distance)
    return state.last_step_norm < config.parameter_tolerance;
  const auto n = state.mse_trace.size();
  if (n < 2) return false;
  return std::abs(state.mse_trace[n - 1] - state.mse_trace[n - 2]) < config.mse_threshold_factor * alpha_used;
}

/// Median |grad_w MSE| = median |g_i| / B over nonzero components.
inline double auto_alpha0(const TripletBatch& batch, const CVec& w) {
  const auto r_hat = normalized_prediction(batch, w);
  const auto grad = wirtinger_gradient(batch, r_hat, 1.0);
  std::vector<double> mags;
  for (const auto& v : grad.g) {
    const double m = std::abs(v);
    if (m >= kGradientGuard) mags.push_back(m / static_cast<double>(batch.rows()));
  }
  if (mags.empty()) return 0.0;
  auto mid = mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  return *mid;
}

/// Training batch plus fresh validation batches (attempt index selects the draw).
struct BatchSource {
  std::function<TripletBatch()> training;
  std::function<TripletBatch(std::size_t attempt)> validation;
};

struct NbgdAttempt {
  double alpha0 = 0.0;
  std::size_t iterations = 0;
  double final_alpha = 0.0;
  double mse_converged = 0.0;
  double mse_validation = 0.0;
  bool accepted = false;
};

struct NbgdReport {
  OptimizerConfig config;
  int memory = 0;
  double kappa = 0.0;
  OptimizerStatus status = OptimizerStatus::running;
  std::vector<NbgdAttempt> attempts;
  std::vector<double> mse_trace;  // concatenated over attempts
  double final_alpha = 0.0;
  double final_mse = 0.0;
  double wall_time_s = 0.0;

  std::size_t total_iterations() const {
    std::size_t n = 0;
    for (const auto& a : attempts) n += a.iterations;
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config;
    j["memory"] = memory;
    j["kernel_count"] = KernelTensor::length(memory);
    j["kappa"] = kappa;
    j["status"] = to_string(status);
    j["iterations"] = total_iterations();
    j["final_alpha"] = final_alpha;
    j["final_mse"] = final_mse;
    j["wall_time_s"] = wall_time_s;
    nlohmann::json att = nlohmann::json::array();
    std::vector<double> val;
    for (const auto& a : attempts) {
      att.push_back({{"alpha0", a.alpha0},
                     {"iterations", a.iterations},
                     {"final_alpha", a.final_alpha},
                     {"mse_converged", a.mse_converged},
                     {"mse_validation", a.mse_validation},
                     {"accepted", a.accepted}});
      val.push_back(a.mse_validation);
    }
    j["attempts"] = att;
    j["validation_mse"] = val;
    j["mse_trace"] = mse_trace;
    j["gradient_note"] =
        "update uses the direction of T^H(r_hat - r) only; the scalar eta = j(8/9)gamma*E_s/B is "
        "dropped by the component-wise normalization";
    return j;
  }
};

struct NbgdResult {
  KernelTensor kernels;
  NbgdReport report;
};

/// Full training loop with validation and step-size retries. kappa = (8/9) gamma E_s.
/// Status is failed when no attempt passes validation; the last estimate is still returned.
inline NbgdResult run_nbgd(const BatchSource& source, const OptimizerConfig& config, const KernelTensor& init,
                           double kappa) {
  config.validate();
  if (!(kappa > 0.0)) throw ConfigError("NBGD needs a positive nonlinear scale (gamma and power)");
  const auto t0 = std::chrono::steady_clock::now();
  const TripletBatch train = source.training();
  if (train.memory != init.memory) throw ConfigError("NBGD: training batch memory does not match kernels");

  NbgdReport rep;
  rep.config = config;
  rep.memory = init.memory;
  rep.kappa = kappa;

  CVec w(init.values.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = kappa * init.values[i];
  double alpha0 = config.alpha0 > 0.0 ? config.alpha0 : auto_alpha0(train, w);
  if (!(alpha0 > 0.0)) alpha0 = 1e-12;  // already exact; the first step reports convergence

  for (std::size_t attempt = 0; attempt < config.validation_retries; ++attempt) {
    NbgdAttempt at;
    at.alpha0 = alpha0;
    OptimizerState st = make_state(train, w, alpha0);
    rep.mse_trace.push_back(st.mse_trace.front());
    while (st.iteration < config.max_iterations) {
      const double used = st.alpha;
      nbgd_step(st, train, config);
      if (st.status == OptimizerStatus::converged) break;
      rep.mse_trace.push_back(st.mse_trace.back());
      if (has_converged(st, config, used)) break;
    }
    at.iterations = st.iteration;
    at.final_alpha = st.alpha;
    at.mse_converged = st.mse_trace.back();
    w = st.s_hat;

    const TripletBatch val = source.validation(attempt);
    if (val.memory != init.memory) throw ConfigError("NBGD: validation batch memory does not match kernels");
    at.mse_validation = mse(normalized_prediction(val, w), val.r);
    at.accepted = at.mse_validation <= config.validation_factor * at.mse_converged;
    rep.attempts.push_back(at);
    rep.final_alpha = st.alpha;
    rep.final_mse = at.mse_converged;
    if (at.accepted) {
      rep.status = OptimizerStatus::validated;
      break;
    }
    alpha0 *= config.alpha_retry_shrink;
  }
  if (rep.status != OptimizerStatus::validated) rep.status = OptimizerStatus::failed;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  KernelTensor out(init.memory);
  for (std::size_t i = 0; i < w.size(); ++i) out.values[i] = w[i] / kappa;
  out.grid = init.grid;
  out.source = KernelSource::nbgd;
  return {std::move(out), std::move(rep)};
}

}  // namespace fiberfrp
