// SPDX-License-Identifier: Apache-2.0
//
// Transmitter side: constellations, root-raised-cosine pulses and linear
// modulation of dual-polarization symbol streams.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fiberfrp/fft.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

/// Normalized constituent 2-D constellation (zero mean, unit energy, origin excluded).
struct Constellation {
  std::vector<cplx> points;
  std::string label;

  std::size_t size() const { return points.size(); }

  /// E{A^2} under uniform symbols; zero for every square QAM.
  cplx second_moment() const {
    cplx acc{};
    for (const auto& p : points) acc += p * p;
    return acc / static_cast<double>(points.size());
  }

  double mean_energy() const {
    double acc = 0.0;
    for (const auto& p : points) acc += std::norm(p);
    return acc / static_cast<double>(points.size());
  }

  /// Index of the closest point.
  std::size_t nearest(cplx v) const {
    std::size_t best = 0;
    double best_d = std::norm(v - points[0]);
    for (std::size_t i = 1; i < points.size(); ++i) {
      const double d = std::norm(v - points[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  /// Throws ConfigError unless the metric invariants hold.
  void validate(double tol = 1e-12) const {
    if (points.size() < 2) throw ConfigError("constellation needs at least two points");
    cplx mean{};
    for (const auto& p : points) mean += p;
    mean /= static_cast<double>(points.size());
    if (std::abs(mean) > tol) throw ConfigError("constellation " + label + " is not zero mean");
    if (std::abs(mean_energy() - 1.0) > tol)
      throw ConfigError("constellation " + label + " is not unit energy");
    for (const auto& p : points) {
      if (std::abs(p) < 1e-9) throw ConfigError("constellation " + label + " contains the origin");
      std::size_t same_ring = 0;
      for (const auto& q : points)
        if (std::abs(std::abs(q) - std::abs(p)) < 1e-9) ++same_ring;
      if (same_ring < 2) throw ConfigError("constellation " + label + " has a single-point ring");
    }
  }

  /// Builds from arbitrary points after rescaling to unit energy; invariants are enforced.
  static Constellation custom(std::vector<cplx> pts, std::string name) {
    Constellation c{std::move(pts), std::move(name)};
    const double scale = 1.0 / std::sqrt(c.mean_energy());
    for (auto& p : c.points) p *= scale;
    c.validate(1e-12);
    return c;
  }
};

namespace detail {
inline unsigned gray_to_binary(unsigned g) {
  unsigned b = g;
  while (g >>= 1) b ^= g;
  return b;
}
}  // namespace detail

/// Gray-labeled square QAM: point i carries label i. Accepts QPSK, 16QAM, 64QAM.
inline Constellation make_constellation(const std::string& label) {
  unsigned bits = 0;
  if (label == "QPSK" || label == "4QAM") bits = 2;
  else if (label == "16QAM") bits = 4;
  else if (label == "64QAM") bits = 6;
  else throw ConfigError("unknown constellation label '" + label + "'");

  const unsigned half = bits / 2;
  const unsigned side = 1u << half;
  const unsigned count = 1u << bits;
  std::vector<cplx> pts(count);
  for (unsigned i = 0; i < count; ++i) {
    const unsigned ibits = i >> half;
    const unsigned qbits = i & (side - 1);
    const double re = 2.0 * detail::gray_to_binary(ibits) - (side - 1.0);
    const double im = 2.0 * detail::gray_to_binary(qbits) - (side - 1.0);
    pts[i] = {re, im};
  }
  Constellation c{std::move(pts), label == "4QAM" ? "QPSK" : label};
  const double scale = 1.0 / std::sqrt(2.0 * (count - 1.0) / 3.0);
  for (auto& p : c.points) p *= scale;
  c.validate(1e-12);
  return c;
}

/// Uniform i.i.d. symbols on both polarizations.
inline DualPolSymbolSeq random_symbols(const Constellation& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, c.size() - 1);
  DualPolSymbolSeq s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.x[i] = c.points[pick(rng)];
    s.y[i] = c.points[pick(rng)];
  }
  return s;
}

struct PulseShape {
  double rolloff = 0.01;
  double symbol_period = 1.0 / 60e9;  // s
  int span = 64;                      // truncation half-width in symbols (taps only)
  int samples_per_symbol = 4;

  double sample_period() const { return symbol_period / samples_per_symbol; }
  /// Two-sided occupied bandwidth (1 + rolloff) / T.
  double bandwidth() const { return (1.0 + rolloff) / symbol_period; }

  void validate() const {
    if (!(rolloff >= 0.0 && rolloff <= 1.0)) throw ConfigError("RRC roll-off must lie in [0, 1]");
    if (!(symbol_period > 0.0)) throw ConfigError("symbol period must be positive");
    if (samples_per_symbol < 2) throw ConfigError("samples_per_symbol must be >= 2");
    if (span < 1) throw ConfigError("RRC span must be >= 1 symbol");
  }
};

/// Unit-energy root-raised-cosine h(t) in closed form, singular points taken as limits.
inline double rrc_value(double t, double rolloff, double T) {
  const double x = t / T;
  const double norm = 1.0 / std::sqrt(T);
  if (std::abs(x) < 1e-12) return norm * (1.0 - rolloff + 4.0 * rolloff / kPi);
  if (rolloff > 0.0 && std::abs(std::abs(x) - 1.0 / (4.0 * rolloff)) < 1e-9) {
    const double a = kPi / (4.0 * rolloff);
    return norm * rolloff / std::sqrt(2.0) *
           ((1.0 + 2.0 / kPi) * std::sin(a) + (1.0 - 2.0 / kPi) * std::cos(a));
  }
  const double num = std::sin(kPi * x * (1.0 - rolloff)) + 4.0 * rolloff * x * std::cos(kPi * x * (1.0 + rolloff));
  const double den = kPi * x * (1.0 - 16.0 * rolloff * rolloff * x * x);
  return norm * num / den;
}

/// Truncated RRC taps on [-span*T, span*T], renormalized so sum(h^2)*dt == 1.
inline std::vector<double> rrc_taps(const PulseShape& pulse) {
  pulse.validate();
  const int half = pulse.span * pulse.samples_per_symbol;
  const double dt = pulse.sample_period();
  std::vector<double> taps(2 * static_cast<std::size_t>(half) + 1);
  for (int i = -half; i <= half; ++i)
    taps[static_cast<std::size_t>(i + half)] = rrc_value(i * dt, pulse.rolloff, pulse.symbol_period);
  double e = 0.0;
  for (double v : taps) e += v * v * dt;
  const double scale = 1.0 / std::sqrt(e);
  for (double& v : taps) v *= scale;
  return taps;
}

/// RRC spectrum |H(f)| (units sqrt(s)) at the FFT bins of an n-point grid with spacing dt.
///
/// Used for periodic (cyclic) shaping: the inverse transform of H/dt is the RRC
/// periodized with period n*dt, and H^2 folds to a constant, so matched filtering
/// is exactly ISI-free on the grid.
inline std::vector<double> rrc_spectrum(const PulseShape& pulse, std::size_t n, double dt) {
  pulse.validate();
  const double T = pulse.symbol_period;
  const double r = pulse.rolloff;
  const double f1 = (1.0 - r) / (2.0 * T);
  const double f2 = (1.0 + r) / (2.0 * T);
  std::vector<double> h(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = std::abs(angular_frequency(k, n, dt)) / (2.0 * kPi);
    if (f <= f1) h[k] = std::sqrt(T);
    else if (f < f2) h[k] = std::sqrt(T) * std::cos(kPi * T / (2.0 * r) * (f - f1));
    else h[k] = 0.0;
  }
  return h;
}

/// Launch power and symbol rate; E_s = P / (2 R_s).
struct LinkPower {
  double power_dbm = 0.0;
  double symbol_rate = 60e9;  // baud

  double watts() const { return 1e-3 * std::pow(10.0, power_dbm / 10.0); }
  double symbol_energy() const { return watts() / (2.0 * symbol_rate); }
};

/// Q(t,0) = sqrt(E_s) sum_n a_n h(t - nT), sequence cyclically extended.
inline SampledField modulate(const DualPolSymbolSeq& seq, const PulseShape& pulse, const LinkPower& power) {
  pulse.validate();
  if (seq.empty()) throw ConfigError("modulate: empty symbol sequence");
  const std::size_t sps = static_cast<std::size_t>(pulse.samples_per_symbol);
  const std::size_t n = seq.size() * sps;
  const double dt = pulse.sample_period();
  const auto spectrum = rrc_spectrum(pulse, n, dt);
  const double amp = std::sqrt(power.symbol_energy());
  const double scale = amp / (dt * static_cast<double>(n));

  SampledField field;
  field.sample_rate = 1.0 / dt;
  field.signal_bandwidth = pulse.bandwidth();
  Fft fft(n);
  auto shape = [&](const CVec& sym, CVec& out) {
    out.assign(n, cplx{});
    for (std::size_t i = 0; i < sym.size(); ++i) out[i * sps] = sym[i];
    fft.forward(out);
    for (std::size_t k = 0; k < n; ++k) out[k] *= spectrum[k] * scale;
    fft.backward(out);
  };
  shape(seq.x, field.x);
  shape(seq.y, field.y);
  return field;
}

}  // namespace fiberfrp
