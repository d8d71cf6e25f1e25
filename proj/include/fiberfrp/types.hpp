// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fiberfrp {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kJ{0.0, 1.0};

/// Manakov nonlinear weighting 8/9.
inline constexpr double kManakovFactor = 8.0 / 9.0;

/// Bad or inconsistent user-facing parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical precondition violated (grid too coarse, zero reference energy, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NBGD ended without an accepted estimate.
class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Polarization { x, y };

inline const char* to_string(Polarization p) { return p == Polarization::x ? "x" : "y"; }

/// Stream of dual-polarization symbols; x[n], y[n] form one 2-D symbol.
struct DualPolSymbolSeq {
  CVec x;
  CVec y;

  DualPolSymbolSeq() = default;
  DualPolSymbolSeq(CVec xs, CVec ys) : x(std::move(xs)), y(std::move(ys)) {
    if (x.size() != y.size()) throw ConfigError("DualPolSymbolSeq: x and y lengths differ");
  }
  explicit DualPolSymbolSeq(std::size_t n) : x(n), y(n) {}

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  void push_back(cplx xs, cplx ys) {
    x.push_back(xs);
    y.push_back(ys);
  }

  const CVec& pol(Polarization p) const { return p == Polarization::x ? x : y; }
  CVec& pol(Polarization p) { return p == Polarization::x ? x : y; }
};

struct DualPolSymbol {
  cplx x;
  cplx y;
};

/// Two-polarization baseband waveform sampled uniformly at sample_rate.
struct SampledField {
  CVec x;
  CVec y;
  double sample_rate = 0.0;       // Hz
  double signal_bandwidth = 0.0;  // Hz, occupied two-sided bandwidth; 0 if unknown

  std::size_t size() const { return x.size(); }
  double dt() const { return 1.0 / sample_rate; }
};

namespace detail {
// Plain complex product; std::complex operator* goes through the slow inf/nan-aware path.
inline cplx mul(cplx a, cplx b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline void mul_inplace(cplx& a, cplx b) {
  const double re = a.real() * b.real() - a.imag() * b.imag();
  const double im = a.real() * b.imag() + a.imag() * b.real();
  a = {re, im};
}

inline void mul_inplace(std::span<cplx> v, std::span<const cplx> w) {
  for (std::size_t k = 0; k < v.size(); ++k) mul_inplace(v[k], w[k]);
}

// exp(j phi); Taylor series below 0.05 rad (truncation error < 1e-21).
inline cplx unit_phasor(double phi) {
  if (std::abs(phi) >= 0.05) return {std::cos(phi), std::sin(phi)};
  const double p2 = phi * phi;
  const double c = 1.0 - p2 / 2.0 * (1.0 - p2 / 12.0 * (1.0 - p2 / 30.0 * (1.0 - p2 / 56.0 * (1.0 - p2 / 90.0))));
  const double s = phi * (1.0 - p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0 * (1.0 - p2 / 72.0))));
  return {c, s};
}
}  // namespace detail

inline double energy(const CVec& v) {
  double e = 0.0;
  for (const auto& c : v) e += std::norm(c);
  return e;
}

}  // namespace fiberfrp
