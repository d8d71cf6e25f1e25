// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "fiberfrp/nbgd.hpp"
#include "fiberfrp/signal.hpp"

using namespace fiberfrp;

namespace {

cplx rand_c(std::mt19937_64& g, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  return {n(g), n(g)};
}

DualPolSymbolSeq qam_stream(std::size_t n, std::uint64_t seed) {
  return random_symbols(make_constellation("16QAM"), n, seed);
}

std::vector<std::size_t> range(std::size_t from, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = from + i;
  return v;
}

// Noise-free outputs r = a + j T w* for a known normalized kernel vector w*.
struct Synthetic {
  DualPolSymbolSeq a, r;
  CVec w_star;
};

Synthetic make_synthetic(int M, std::size_t n, std::uint64_t seed, double scale = 0.02) {
  std::mt19937_64 g(seed);
  Synthetic s;
  s.a = qam_stream(n, seed);
  KernelTensor k(M);
  for (auto& v : k.values) v = rand_c(g, scale);
  s.w_star = k.values;
  // kappa = 1 with gamma = 9/8, E_s = 1.
  s.r = predict_sequence(s.a, k, 9.0 / 8.0, 1.0);
  return s;
}

}  // namespace

TEST(Mse, Examples) {
  const CVec r{{1, 2}, {-3, 0.5}};
  EXPECT_EQ(mse(r, r), 0.0);
  EXPECT_DOUBLE_EQ(mse(CVec{{1, 0}}, CVec{{0, 0}}), 0.5);
  std::mt19937_64 g(1);
  CVec x(50), y(50);
  double acc = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = rand_c(g);
    y[i] = rand_c(g);
    const double dr = x[i].real() - y[i].real(), di = x[i].imag() - y[i].imag();
    acc += dr * dr + di * di;
  }
  EXPECT_NEAR(mse(x, y), acc / 100.0, 1e-14);
  EXPECT_THROW(mse(CVec(2), CVec(3)), ConfigError);
  EXPECT_THROW(mse(CVec{}, CVec{}), ConfigError);
}

TEST(Gradient, ZeroResidualAndScalarCase) {
  const auto a = qam_stream(64, 2);
  const auto b = build_batch(a, a, 1, Polarization::x, range(0, 32));
  for (const auto& v : wirtinger_gradient(b, b.r, 1.0).g) EXPECT_EQ(v, cplx{});

  TripletBatch one;
  one.memory = 0;
  one.a = {cplx{0, 0}};
  one.r = {cplx{0, 0}};
  one.matrix = {cplx{1, 0}};
  const auto gr = wirtinger_gradient(one, CVec{cplx{0, 1}}, 2.0);
  ASSERT_EQ(gr.g.size(), 1u);
  EXPECT_EQ(gr.g[0], cplx(0, 1));
  EXPECT_EQ(gr.eta, cplx(0, 2));
}

TEST(Gradient, MatchesCentralFiniteDifferences) {
  const auto a = qam_stream(256, 3);
  auto r = a;
  std::mt19937_64 g(4);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 1, Polarization::x, range(0, 128));
  const double kappa = 1.7e-16;
  KernelTensor s(1);
  for (auto& v : s.values) v = rand_c(g, 1e14);

  auto objective = [&](const KernelTensor& k) { return mse(predict_batch(batch, k, 9.0 / 8.0 * kappa, 1.0), batch.r); };
  const auto r_hat = predict_batch(batch, s, 9.0 / 8.0 * kappa, 1.0);
  const auto grad = wirtinger_gradient(batch, r_hat, kappa).full();
  // The objective is quadratic, so a large step has no truncation error.
  const double h = 1e11;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto p = s, m = s;
    p.values[i] += h;
    m.values[i] -= h;
    const double d_re = (objective(p) - objective(m)) / (2 * h);
    p = s;
    m = s;
    p.values[i] += cplx(0, h);
    m.values[i] -= cplx(0, h);
    const double d_im = (objective(p) - objective(m)) / (2 * h);
    const cplx fd{d_re, d_im};
    EXPECT_NEAR(std::abs(fd - grad[i]), 0.0, 1e-6 * std::abs(grad[i])) << i;
  }
}

TEST(Step, EveryComponentMovesByAlpha) {
  const auto a = qam_stream(512, 5);
  auto r = a;
  std::mt19937_64 g(6);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 1, Polarization::x, range(0, 256));
  auto st = make_state(batch, CVec(27), 0.003);
  const auto before = st.s_hat;
  nbgd_step(st, batch, OptimizerConfig{});
  EXPECT_EQ(st.iteration, 1u);
  for (std::size_t i = 0; i < 27; ++i) EXPECT_NEAR(std::abs(st.s_hat[i] - before[i]), 0.003, 1e-15);
  EXPECT_EQ(st.mse_trace.size(), 2u);
  EXPECT_NEAR(st.mse_trace.back(), mse(normalized_prediction(batch, st.s_hat), batch.r), 1e-15);
}

TEST(Step, ExactFitStopsWithoutNan) {
  const auto syn = make_synthetic(1, 256, 7);
  const auto batch = build_batch(syn.a, syn.r, 1, Polarization::x, range(0, 128));
  auto st = make_state(batch, syn.w_star, 0.01);
  // r_hat equals r up to rounding; force exact equality to hit the guard.
  st.r_hat = batch.r;
  nbgd_step(st, batch, OptimizerConfig{});
  EXPECT_EQ(st.status, OptimizerStatus::converged);
  EXPECT_EQ(st.s_hat, syn.w_star);
  EXPECT_TRUE(has_converged(st, OptimizerConfig{}, 0.01));
  EXPECT_THROW(nbgd_step(st, batch, OptimizerConfig{}), OptimizerError);
}

TEST(Step, DirectionIsScaleInvariant) {
  const auto a = qam_stream(256, 8);
  auto r = a;
  std::mt19937_64 g(9);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 1, Polarization::x, range(0, 128));
  auto s1 = make_state(batch, CVec(27), 0.002);
  auto s2 = s1;
  for (std::size_t i = 0; i < batch.rows(); ++i) s2.r_hat[i] = batch.r[i] + 7.5 * (s1.r_hat[i] - batch.r[i]);
  nbgd_step(s1, batch, OptimizerConfig{});
  nbgd_step(s2, batch, OptimizerConfig{});
  for (std::size_t i = 0; i < 27; ++i) EXPECT_NEAR(std::abs(s1.s_hat[i] - s2.s_hat[i]), 0.0, 1e-15);
}

TEST(Step, NormalizedUpdateEqualsGenericNormalizedDescent) {
  const auto a = qam_stream(256, 10);
  auto r = a;
  std::mt19937_64 g(11);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 2, Polarization::x, range(0, 128));
  const double alpha = 0.004;
  auto st = make_state(batch, CVec(125), alpha);
  const auto before = st.s_hat;
  for (double kappa : {1.0, 3.3e-16, 42.0}) {
    // -alpha * grad / |grad| with the full gradient in normalized units.
    const auto full = wirtinger_gradient(batch, st.r_hat, kappa).full();
    auto tmp = st;
    nbgd_step(tmp, batch, OptimizerConfig{});
    for (std::size_t i = 0; i < full.size(); ++i) {
      const cplx generic = before[i] - alpha * full[i] / std::abs(full[i]);
      EXPECT_NEAR(std::abs(tmp.s_hat[i] - generic), 0.0, 1e-15) << kappa;
    }
  }
}

TEST(Step, DeterministicTrajectory) {
  const auto a = qam_stream(512, 12);
  auto r = a;
  std::mt19937_64 g(13);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 1, Polarization::x, range(0, 256));
  auto s1 = make_state(batch, CVec(27), 0.002);
  auto s2 = make_state(batch, CVec(27), 0.002);
  for (int i = 0; i < 10; ++i) {
    nbgd_step(s1, batch, OptimizerConfig{});
    nbgd_step(s2, batch, OptimizerConfig{});
    EXPECT_EQ(s1.s_hat, s2.s_hat);
    EXPECT_EQ(s1.mse_trace, s2.mse_trace);
  }
}

TEST(Step, ScheduleDecaysAtMultiplesOfPeriod) {
  const auto a = qam_stream(256, 14);
  auto r = a;
  std::mt19937_64 g(15);
  for (auto& v : r.x) v += rand_c(g, 0.05);
  const auto batch = build_batch(a, r, 0, Polarization::x, range(0, 128));
  auto st = make_state(batch, CVec(1), 1.0);
  for (int i = 1; i <= 45; ++i) {
    nbgd_step(st, batch, OptimizerConfig{});
    const double expect = std::pow(0.9, i / 15);
    EXPECT_NEAR(st.alpha, expect, 1e-15) << i;
  }
}

TEST(Convergence, MseDifferenceAndParameterDistance) {
  OptimizerState st;
  st.mse_trace = {1.0};
  OptimizerConfig c;
  EXPECT_FALSE(has_converged(st, c, 1.0));
  st.mse_trace = {1.0, 0.95};
  EXPECT_TRUE(has_converged(st, c, 1.0));
  EXPECT_FALSE(has_converged(st, c, 0.4));
  c.criterion = ConvergenceCriterion::parameter_distance;
  c.parameter_tolerance = 1e-3;
  st.last_step_norm = 2e-3;
  EXPECT_FALSE(has_converged(st, c, 1.0));
  st.last_step_norm = 5e-4;
  EXPECT_TRUE(has_converged(st, c, 1.0));
}

TEST(Config, Validation) {
  OptimizerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.schedule_decay = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha0 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha_retry_shrink = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AutoAlpha, IsMedianGradientMagnitude) {
  const auto syn = make_synthetic(1, 512, 16);
  const auto batch = build_batch(syn.a, syn.r, 1, Polarization::x, range(0, 256));
  const CVec w(27);
  const auto g = wirtinger_gradient(batch, normalized_prediction(batch, w), 1.0).g;
  std::vector<double> m;
  for (const auto& v : g) m.push_back(std::abs(v) / 256.0);
  std::sort(m.begin(), m.end());
  EXPECT_DOUBLE_EQ(auto_alpha0(batch, w), m[13]);
  EXPECT_GT(m[13], 0.0);
}

namespace {

BatchSource synthetic_source(const Synthetic& syn, int M, std::size_t B) {
  BatchSource src;
  src.training = [&syn, M, B] { return build_batch(syn.a, syn.r, M, Polarization::x, range(0, B)); };
  src.validation = [&syn, M, B](std::size_t k) {
    return build_batch(syn.a, syn.r, M, Polarization::x, range(B * (k + 1), B));
  };
  return src;
}

}  // namespace

TEST(Run, RecoversSyntheticKernels) {
  const int M = 1;
  const std::size_t B = 1024;
  const auto syn = make_synthetic(M, 8 * B, 17);
  OptimizerConfig cfg;
  cfg.batch_size = B;
  const auto res = run_nbgd(synthetic_source(syn, M, B), cfg, KernelTensor(M), 1.0);
  EXPECT_EQ(res.report.status, OptimizerStatus::validated);
  EXPECT_EQ(res.kernels.source, KernelSource::nbgd);
  double err = 0.0;
  for (std::size_t i = 0; i < syn.w_star.size(); ++i) err = std::max(err, std::abs(res.kernels.values[i] - syn.w_star[i]));
  EXPECT_LE(err, 10.0 * res.report.final_alpha) << "iterations " << res.report.total_iterations();
  EXPECT_LT(res.report.total_iterations(), 100000u);
  std::cout << "[ synthetic ] M=1 B=1024: " << res.report.total_iterations() << " iterations, max error " << err
            << ", final alpha " << res.report.final_alpha << '\n';
}

TEST(Run, SmokeConvergesWellBeforeIterationCap) {
  const auto syn = make_synthetic(1, 2048, 18);
  OptimizerConfig cfg;
  cfg.batch_size = 256;
  const auto res = run_nbgd(synthetic_source(syn, 1, 256), cfg, KernelTensor(1), 1.0);
  EXPECT_EQ(res.report.status, OptimizerStatus::validated);
  EXPECT_LT(res.report.total_iterations(), 10000u);
  std::cout << "[ synthetic ] M=1 B=256: " << res.report.total_iterations() << " iterations\n";
}

TEST(Run, KappaMapsNormalizedKernelsBack) {
  const auto syn = make_synthetic(0, 1024, 19);
  OptimizerConfig cfg;
  cfg.batch_size = 128;
  const double kappa = 2e-16;
  const auto res = run_nbgd(synthetic_source(syn, 0, 128), cfg, KernelTensor(0), kappa);
  EXPECT_NEAR(std::abs(res.kernels.values[0] * kappa - syn.w_star[0]), 0.0, 10.0 * res.report.final_alpha);
  EXPECT_THROW(run_nbgd(synthetic_source(syn, 0, 128), cfg, KernelTensor(0), 0.0), ConfigError);
  EXPECT_THROW(run_nbgd(synthetic_source(syn, 0, 128), cfg, KernelTensor(1), 1.0), ConfigError);
}

TEST(Run, FailedValidationShrinksStepAndReturns) {
  const auto syn = make_synthetic(1, 4096, 20);
  // Noise on validation rows only: the fit cannot pass a very strict threshold.
  auto noisy = syn;
  std::mt19937_64 g(21);
  for (std::size_t i = 256; i < noisy.r.size(); ++i) noisy.r.x[i] += rand_c(g, 1.0);
  OptimizerConfig cfg;
  cfg.batch_size = 256;
  cfg.validation_factor = 1.5;
  cfg.alpha0 = 0.01;
  const auto res = run_nbgd(synthetic_source(noisy, 1, 256), cfg, KernelTensor(1), 1.0);
  EXPECT_EQ(res.report.status, OptimizerStatus::failed);
  ASSERT_EQ(res.report.attempts.size(), 5u);
  for (std::size_t k = 1; k < 5; ++k) {
    EXPECT_NEAR(res.report.attempts[k].alpha0, 0.75 * res.report.attempts[k - 1].alpha0, 1e-18);
    EXPECT_FALSE(res.report.attempts[k].accepted);
  }
  EXPECT_EQ(res.kernels.size(), 27u);
}

TEST(Report, JsonKeys) {
  const auto syn = make_synthetic(0, 1024, 22);
  OptimizerConfig cfg;
  cfg.batch_size = 128;
  const auto j = run_nbgd(synthetic_source(syn, 0, 128), cfg, KernelTensor(0), 1.0).report.to_json();
  for (const char* key : {"config", "memory", "kernel_count", "kappa", "status", "iterations", "final_alpha",
                          "final_mse", "wall_time_s", "attempts", "validation_mse", "mse_trace", "gradient_note"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["status"], "validated");
  EXPECT_EQ(j["config"]["schedule_period"], 15);
  EXPECT_EQ(j["kernel_count"], 1);
}
