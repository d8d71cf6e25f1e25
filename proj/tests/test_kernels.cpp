// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fiberfrp/kernels.hpp"

using namespace fiberfrp;

namespace {

const PulseShape kPulse{};
FiberParams reference_fiber() { return FiberParams::from_engineering(0.2, -21.7, 1.2, 120); }

std::string tmp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

// Direct midpoint-rule evaluation with no operand reordering.
cplx direct_kernel(int k, int l, int m, const FiberParams& fiber, const IntegrationGrid& g) {
  const auto n = static_cast<long>(g.n_t);
  const long s = std::lround(kPulse.symbol_period / g.dt());
  auto at = [&](const CVec& h, long i) { return h[static_cast<std::size_t>(((i % n) + n) % n)]; };
  const double dz = fiber.length / static_cast<double>(g.n_z);
  cplx total{};
  for (std::size_t j = 0; j < g.n_z; ++j) {
    const double z = (j + 0.5) * dz;
    const CVec h = dispersed_pulse(kPulse, fiber, z, g);
    cplx acc{};
    for (long i = 0; i < n; ++i)
      acc += std::conj(at(h, i)) * std::conj(at(h, i - k * s)) * at(h, i - l * s) * at(h, i - m * s);
    total += std::exp(-fiber.alpha * z) * dz * g.dt() * acc;
  }
  return total;
}

}  // namespace

TEST(Grid, ForLinkCoversDispersionSpread) {
  const auto g = IntegrationGrid::for_link(kPulse, reference_fiber());
  EXPECT_NEAR((g.t_max - g.t_min) / kPulse.symbol_period, 256.0, 1e-9);
  EXPECT_EQ(g.n_t, 1024u);
  EXPECT_EQ(g.n_z, 640u);
  EXPECT_NEAR(g.dt(), kPulse.sample_period(), 1e-24);
  const auto r = g.refined();
  EXPECT_EQ(r.n_t, 2048u);
  EXPECT_EQ(r.n_z, 1280u);
}

TEST(Grid, RejectsBadGrids) {
  const auto fiber = reference_fiber();
  const double T = kPulse.symbol_period;
  EXPECT_THROW(KernelIntegrator(kPulse, fiber, IntegrationGrid{-64 * T, 64 * T, 128 * 3 + 1, 16}), ConfigError);
  EXPECT_THROW(KernelIntegrator(kPulse, fiber, IntegrationGrid{-64 * T, 64 * T, 128, 16}), NumericalError);
  EXPECT_THROW(IntegrationGrid({0, 0, 16, 16}).validate(), ConfigError);
  EXPECT_THROW(compute_tensor(-1, kPulse, fiber, IntegrationGrid::for_link(kPulse, fiber)), ConfigError);
}

TEST(DispersedPulse, UnitEnergyAtEveryDistance) {
  const auto fiber = reference_fiber();
  const auto g = IntegrationGrid::for_link(kPulse, fiber);
  for (double z : {0.0, 30e3, 120e3}) {
    const auto h = dispersed_pulse(kPulse, fiber, z, g);
    EXPECT_NEAR(energy(h) * g.dt(), 1.0, 1e-9) << z;
  }
  const auto h0 = dispersed_pulse(kPulse, fiber, 0.0, g);
  const auto centre = static_cast<std::size_t>(std::llround(-g.t_min / g.dt()));
  const double expect = rrc_value(0.0, kPulse.rolloff, kPulse.symbol_period);
  EXPECT_NEAR(h0[centre].real(), expect, 1e-3 * expect);
  EXPECT_THROW(dispersed_pulse(kPulse, fiber, 121e3, g), ConfigError);
}

TEST(Kernels, DispersionlessS000MatchesIndependentQuadrature) {
  auto fiber = reference_fiber();
  fiber.beta2 = 0.0;
  const auto g = IntegrationGrid::for_link(kPulse, fiber, 64);
  const cplx s000 = compute_kernel(0, 0, 0, kPulse, fiber, g);
  // L_eff * integral of h^4 from the closed-form pulse, trapezoid on [-64T, 64T] at T/64.
  const double T = kPulse.symbol_period;
  const double dt = T / 64.0;
  double acc = 0.0;
  for (int i = -64 * 64; i <= 64 * 64; ++i) {
    const double h = rrc_value(i * dt, kPulse.rolloff, T);
    acc += (std::abs(i) == 64 * 64 ? 0.5 : 1.0) * h * h * h * h * dt;
  }
  const double expect = fiber.effective_length() * acc;
  EXPECT_NEAR(s000.real(), expect, 5e-3 * expect);
  EXPECT_NEAR(s000.imag(), 0.0, 1e-9 * expect);
}

TEST(Kernels, TensorMatchesDirectIntegrationAndIsSymmetric) {
  const auto fiber = reference_fiber();
  auto g = IntegrationGrid::for_link(kPulse, fiber, 24);
  const auto t = compute_tensor(1, kPulse, fiber, g);
  for (int k = -1; k <= 1; ++k)
    for (int l = -1; l <= 1; ++l)
      for (int m = -1; m <= 1; ++m) {
        const cplx d = direct_kernel(k, l, m, fiber, g);
        const cplx sw = direct_kernel(k, m, l, fiber, g);
        const double scale = std::abs(t.at(0, 0, 0));
        EXPECT_NEAR(std::abs(t.at(k, l, m) - d), 0.0, 1e-10 * scale) << k << l << m;
        EXPECT_NEAR(std::abs(d - sw), 0.0, 1e-10 * scale) << k << l << m;
      }
}

TEST(Kernels, StructuralIdentities) {
  const auto fiber = reference_fiber();
  const auto t = compute_tensor(2, kPulse, fiber, IntegrationGrid::for_link(kPulse, fiber, 160));
  const double peak = std::abs(t.at(0, 0, 0));
  EXPECT_GT(t.at(0, 0, 0).real(), 0.0);
  for (int k = -2; k <= 2; ++k) {
    // S_kk0 = S_k0k = integral of |h|^2 |h_k|^2: real and positive.
    EXPECT_NEAR(t.at(k, k, 0).imag(), 0.0, 1e-9 * peak);
    EXPECT_GT(t.at(k, k, 0).real(), 0.0);
    EXPECT_NEAR(std::abs(t.at(k, k, 0) - t.at(k, 0, k)), 0.0, 1e-12 * peak);
    for (int l = -2; l <= 2; ++l)
      for (int m = -2; m <= 2; ++m) {
        // Even pulse: time reversal maps (k,l,m) to (-k,-l,-m).
        EXPECT_NEAR(std::abs(t.at(k, l, m) - t.at(-k, -l, -m)), 0.0, 1e-9 * peak);
        EXPECT_EQ(t.at(k, l, m), t.at(k, m, l));
      }
  }
  EXPECT_GT(std::abs(t.at(0, 0, 0)), std::abs(t.at(1, 0, 0)));
  EXPECT_GT(std::abs(t.at(1, 0, 0)), std::abs(t.at(2, 0, 0)));
}

TEST(Kernels, ReferenceLinkS000Magnitude) {
  const auto fiber = reference_fiber();
  const auto s = compute_kernel(0, 0, 0, kPulse, fiber, IntegrationGrid::for_link(kPulse, fiber));
  // Dispersion spreads the pulse well beyond L_eff * integral(h^4) (which is ~1.2e15 m/s).
  EXPECT_NEAR(s.real(), 2.85e14, 0.01e14);
}

TEST(Kernels, RestrictMatchesSmallerTensor) {
  const auto fiber = reference_fiber();
  const auto g = IntegrationGrid::for_link(kPulse, fiber, 32);
  const auto big = compute_tensor(2, kPulse, fiber, g);
  const auto small = compute_tensor(1, kPulse, fiber, g);
  const auto r = big.restrict_to(1);
  ASSERT_EQ(r.size(), 27u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(std::abs(r.values[i] - small.values[i]), 0.0, 1e-12 * std::abs(small.values[13]));
  EXPECT_THROW(big.restrict_to(3), std::out_of_range);
}

TEST(Kernels, CertificateConverges) {
  const auto fiber = reference_fiber();
  const auto t = compute_tensor(1, kPulse, fiber, IntegrationGrid::for_link(kPulse, fiber));
  const auto c = certify(t, kPulse, fiber);
  EXPECT_TRUE(c.passed()) << c.max_relative_change;
  EXPECT_LT(c.max_change_vs_peak, 1e-4);
}

TEST(KernelTensor, IndexingIsCanonical) {
  KernelTensor t(1);
  EXPECT_EQ(t.size(), 27u);
  EXPECT_EQ(KernelTensor::length(3), 343u);
  EXPECT_EQ(KernelTensor::length(15), 29791u);
  EXPECT_EQ(t.index(-1, -1, -1), 0u);
  EXPECT_EQ(t.index(-1, -1, 0), 1u);
  EXPECT_EQ(t.index(-1, 0, -1), 3u);
  EXPECT_EQ(t.index(0, -1, -1), 9u);
  EXPECT_EQ(t.index(1, 1, 1), 26u);
  EXPECT_THROW(t.at(2, 0, 0), std::out_of_range);
  EXPECT_THROW(KernelTensor(-1), ConfigError);
}

TEST(KernelFile, RoundTripIsBitExact) {
  const auto fiber = reference_fiber();
  auto t = compute_tensor(1, kPulse, fiber, IntegrationGrid::for_link(kPulse, fiber, 16));
  t.source = KernelSource::nbgd;
  t.training_power_dbm = 13.0;
  t.seed = 42;
  const auto path = tmp_path("fiberfrp_k.bin");
  save_tensor(path, t);
  EXPECT_EQ(std::filesystem::file_size(path), 8u + 4 + 4 + 8 + 8 + 8 + 8 + 1 + 8 + 8 + 8 + 27u * 16u);
  EXPECT_TRUE(load_tensor(path) == t);
  KernelTensor a(0);
  save_tensor(path, a);
  const auto b = load_tensor(path);
  EXPECT_TRUE(std::isnan(b.training_power_dbm));
  EXPECT_TRUE(a == b);
  std::remove(path.c_str());
}

TEST(KernelFile, CorruptFilesRejected) {
  const auto path = tmp_path("fiberfrp_bad.bin");
  KernelTensor t(1);
  save_tensor(path, t);
  const auto full = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, full - 5);
  EXPECT_THROW(load_tensor(path), FormatError);

  save_tensor(path, t);
  { std::ofstream(path, std::ios::app | std::ios::binary) << 'x'; }
  EXPECT_THROW(load_tensor(path), FormatError);

  { std::ofstream(path, std::ios::binary) << "NOTAKERNELFILE"; }
  EXPECT_THROW(load_tensor(path), FormatError);

  save_tensor(path, t);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(load_tensor(path), FormatError);
  std::remove(path.c_str());
}

TEST(KernelFile, CsvExport) {
  KernelTensor t(1);
  t.at(0, 0, 0) = {3.0, -4.0};
  const auto path = tmp_path("fiberfrp_k.csv");
  export_tensor_csv(path, t);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "k,l,m,re,im,abs");
  int rows = 0;
  bool found = false;
  while (std::getline(is, line)) {
    ++rows;
    if (line == "0,0,0,3,-4,5") found = true;
  }
  EXPECT_EQ(rows, 27);
  EXPECT_TRUE(found);
  std::remove(path.c_str());
}
