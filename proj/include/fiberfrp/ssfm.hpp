// SPDX-License-Identifier: Apache-2.0
//
// Split-step Fourier propagation of the attenuation-normalized Manakov
// equation and the ideal receiver chain (CDC, matched filter, sampler).
//
// Linear operator convention: a length-dz linear step multiplies the
// spectrum by exp(+j beta2/2 omega^2 dz). CDC applies the conjugate.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fiberfrp/fft.hpp"
#include "fiberfrp/signal.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

/// Fiber span in SI units.
struct FiberParams {
  double alpha = 0.0;   // 1/m (power attenuation)
  double beta2 = 0.0;   // s^2/m
  double gamma = 0.0;   // 1/(W m)
  double length = 0.0;  // m

  /// From datasheet units: dB/km, ps^2/km, 1/(W km), km.
  static FiberParams from_engineering(double alpha_db_km, double beta2_ps2_km, double gamma_w_km,
                                      double length_km) {
    FiberParams f;
    f.alpha = alpha_db_km * std::log(10.0) / 10.0 / 1e3;
    f.beta2 = beta2_ps2_km * 1e-24 / 1e3;
    f.gamma = gamma_w_km / 1e3;
    f.length = length_km * 1e3;
    f.validate();
    return f;
  }

  void validate() const {
    if (alpha < 0.0) throw ConfigError("fiber attenuation must be >= 0");
    if (!(length > 0.0)) throw ConfigError("fiber length must be > 0");
    if (gamma < 0.0) throw ConfigError("nonlinear coefficient must be >= 0");
  }

  /// Effective length of [z0, z0 + dz]: integral of exp(-alpha z).
  double effective_length(double z0, double dz) const {
    if (alpha == 0.0) return dz;
    return -std::expm1(-alpha * dz) * std::exp(-alpha * z0) / alpha;
  }
  double effective_length() const { return effective_length(0.0, length); }
};

struct AseConfig {
  bool enabled = false;
  double noise_figure_db = 5.0;
  double center_frequency = 193.41e12;  // Hz

  void validate() const {
    if (enabled && !(std::pow(10.0, noise_figure_db / 10.0) > 0.0))
      throw ConfigError("noise figure must be positive");
  }
};

inline constexpr double kPlanck = 6.62607015e-34;


/// Multiplies the spectrum of both polarizations by exp(+j beta2/2 omega^2 dz).
inline void apply_dispersion(SampledField& field, double beta2, double dz) {
  const std::size_t n = field.size();
  if (n == 0 || beta2 == 0.0 || dz == 0.0) return;
  const double dt = field.dt();
  CVec phase(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = angular_frequency(k, n, dt);
    phase[k] = std::polar(1.0 / static_cast<double>(n), 0.5 * beta2 * w * w * dz);
  }
  Fft fft(n);
  for (CVec* pol : {&field.x, &field.y}) {
    fft.forward(*pol);
    detail::mul_inplace(*pol, phase);
    fft.backward(*pol);
  }
}

/// Manakov Kerr rotation with effective length leff; magnitudes are untouched.
inline void apply_kerr(SampledField& field, double gamma, double leff) {
  const double c = kManakovFactor * gamma * leff;
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double p = std::norm(field.x[i]) + std::norm(field.y[i]);
    const cplx rot = detail::unit_phasor(c * p);
    detail::mul_inplace(field.x[i], rot);
    detail::mul_inplace(field.y[i], rot);
  }
}

/// Symmetric split-step solution over the full span with uniform step (last step may be partial).
inline SampledField propagate(SampledField field, const FiberParams& fiber, double step) {
  fiber.validate();
  if (!(step > 0.0)) throw ConfigError("SSFM step must be > 0");
  // 1% slack so that 4 samples/symbol at roll-off 0.01 counts as four times the bandwidth.
  if (field.signal_bandwidth > 0.0 && field.sample_rate < 0.99 * 4.0 * field.signal_bandwidth)
    std::clog << "warning: SSFM sample rate below four times the signal bandwidth\n";

  std::vector<double> steps;
  {
    const auto full = static_cast<std::size_t>(std::floor(fiber.length / step * (1.0 + 1e-12)));
    steps.assign(full, step);
    const double rest = fiber.length - static_cast<double>(full) * step;
    if (rest > 1e-9 * step) steps.push_back(rest);
  }

  if (fiber.gamma == 0.0) {
    apply_dispersion(field, fiber.beta2, fiber.length);
    return field;
  }
  if (fiber.beta2 == 0.0) {
    apply_kerr(field, fiber.gamma, fiber.effective_length());
    return field;
  }

  const std::size_t n = field.size();
  const double dt = field.dt();
  std::vector<double> w2(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = angular_frequency(k, n, dt);
    w2[k] = w * w;
  }
  // Linear operator for a given length, with the 1/n of the FFT pair folded in.
  auto make_phase = [&](double dz) {
    CVec ph(n);
    for (std::size_t k = 0; k < n; ++k) ph[k] = std::polar(1.0 / static_cast<double>(n), 0.5 * fiber.beta2 * w2[k] * dz);
    return ph;
  };
  const CVec half_step = make_phase(0.5 * step);
  const CVec full_step = make_phase(step);

  Fft fft(n);
  fft.forward(field.x);
  fft.forward(field.y);
  double z = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double dz_lin = i == 0 ? 0.5 * steps[0] : 0.5 * (steps[i - 1] + steps[i]);
    const CVec* ph = nullptr;
    CVec custom;
    if (std::abs(dz_lin - 0.5 * step) < 1e-12 * step) ph = &half_step;
    else if (std::abs(dz_lin - step) < 1e-12 * step) ph = &full_step;
    else {
      custom = make_phase(dz_lin);
      ph = &custom;
    }
    for (CVec* pol : {&field.x, &field.y}) {
      detail::mul_inplace(*pol, *ph);
      fft.backward(*pol);
    }
    apply_kerr(field, fiber.gamma, fiber.effective_length(z, steps[i]));
    z += steps[i];
    fft.forward(field.x);
    fft.forward(field.y);
  }
  const CVec last = make_phase(0.5 * steps.back());
  for (CVec* pol : {&field.x, &field.y}) {
    detail::mul_inplace(*pol, last);
    fft.backward(*pol);
  }
  return field;
}

/// Ideal chromatic dispersion compensation for the full span.
inline SampledField cdc(SampledField field, const FiberParams& fiber) {
  apply_dispersion(field, fiber.beta2, -fiber.length);
  return field;
}

/// Matched filter, symbol-rate sampling and 1/sqrt(E_s) rescaling.
inline DualPolSymbolSeq receive(const SampledField& field, const PulseShape& pulse, const LinkPower& power) {
  pulse.validate();
  const auto sps = static_cast<std::size_t>(pulse.samples_per_symbol);
  const std::size_t n = field.size();
  if (n == 0 || n % sps != 0) throw ConfigError("receive: waveform length is not a multiple of samples_per_symbol");
  const std::size_t nsym = n / sps;
  const auto spectrum = rrc_spectrum(pulse, n, field.dt());
  const double scale = 1.0 / (static_cast<double>(n) * std::sqrt(power.symbol_energy()));
  Fft fft(n);
  DualPolSymbolSeq out(nsym);
  auto filter = [&](const CVec& in, CVec& sym) {
    CVec v = in;
    fft.forward(v);
    for (std::size_t k = 0; k < n; ++k) v[k] *= spectrum[k] * scale;
    fft.backward(v);
    for (std::size_t i = 0; i < nsym; ++i) sym[i] = v[i * sps];
  };
  filter(field.x, out.x);
  filter(field.y, out.y);
  return out;
}

/// Per-polarization ASE power over the simulation bandwidth (W): n_sp h nu (G - 1) B_sim.
inline double ase_noise_power(const AseConfig& ase, const FiberParams& fiber, double bandwidth) {
  const double gain = std::exp(fiber.alpha * fiber.length);
  const double nsp = std::pow(10.0, ase.noise_figure_db / 10.0) / 2.0;
  return nsp * kPlanck * ase.center_frequency * (gain - 1.0) * bandwidth;
}

/// Lumped EDFA noise at the span end (gain absorbed by the attenuation normalization).
inline SampledField add_ase(SampledField field, const AseConfig& ase, const FiberParams& fiber, std::uint64_t seed) {
  ase.validate();
  if (!ase.enabled) return field;
  const double var = ase_noise_power(ase, fiber, field.sample_rate);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, std::sqrt(var / 2.0));
  for (CVec* pol : {&field.x, &field.y})
    for (auto& v : *pol) v += cplx{g(rng), g(rng)};
  return field;
}

namespace detail {
template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_le(std::istream& is) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw NumericalError("unexpected end of file");
  return v;
}
}  // namespace detail

/// Debug dump: f64 sample_rate, u64 length, then x and y as interleaved f32 (re, im).
inline void save_waveform(const std::string& path, const SampledField& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  detail::write_le<double>(os, field.sample_rate);
  detail::write_le<std::uint64_t>(os, field.size());
  for (const CVec* pol : {&field.x, &field.y})
    for (const auto& c : *pol) {
      detail::write_le<float>(os, static_cast<float>(c.real()));
      detail::write_le<float>(os, static_cast<float>(c.imag()));
    }
}

inline SampledField load_waveform(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  SampledField f;
  f.sample_rate = detail::read_le<double>(is);
  const auto n = detail::read_le<std::uint64_t>(is);
  for (CVec* pol : {&f.x, &f.y}) {
    pol->resize(n);
    for (auto& c : *pol) {
      const float re = detail::read_le<float>(is);
      const float im = detail::read_le<float>(is);
      c = {re, im};
    }
  }
  return f;
}

}  // namespace fiberfrp
