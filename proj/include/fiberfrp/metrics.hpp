// SPDX-License-Identifier: Apache-2.0
//
// Conditional statistics of received symbols and the accuracy metrics built
// on them: SNR, normalized radius difference, normalized phase difference and
// the relative error between two received streams.
#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <vector>

#include "fiberfrp/signal.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

/// Model precise iff relative error <= 11 %.
inline constexpr double kAccuracyThreshold = 0.11;

struct PointStats {
  cplx point;
  cplx mu{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
};

/// Per-point conditional mean and variance, indexed [polarization][constellation point].
struct ConditionalStats {
  std::array<std::vector<PointStats>, 2> pol;

  const std::vector<PointStats>& of(Polarization p) const { return pol[p == Polarization::x ? 0 : 1]; }
  std::size_t total(Polarization p) const {
    std::size_t n = 0;
    for (const auto& s : of(p)) n += s.count;
    return n;
  }
};

inline ConditionalStats conditional_stats(const DualPolSymbolSeq& a, const DualPolSymbolSeq& r,
                                          const Constellation& c) {
  if (a.size() != r.size()) throw ConfigError("conditional_stats: a and r lengths differ");
  ConditionalStats st;
  for (int p = 0; p < 2; ++p) {
    const auto pol = p == 0 ? Polarization::x : Polarization::y;
    const CVec& ap = a.pol(pol);
    const CVec& rp = r.pol(pol);
    auto& out = st.pol[static_cast<std::size_t>(p)];
    out.resize(c.size());
    std::vector<std::size_t> label(ap.size());
    // Offsets from the transmitted point keep identical inputs exact.
    std::vector<cplx> sum(c.size());
    for (std::size_t i = 0; i < ap.size(); ++i) {
      const std::size_t m = c.nearest(ap[i]);
      if (std::abs(ap[i] - c.points[m]) > 1e-9)
        throw ConfigError("conditional_stats: transmitted symbol is not a constellation point");
      label[i] = m;
      sum[m] += rp[i] - c.points[m];
      ++out[m].count;
    }
    std::vector<double> dev(c.size());
    for (std::size_t m = 0; m < c.size(); ++m) {
      out[m].point = c.points[m];
      if (out[m].count > 0) out[m].mu = c.points[m] + sum[m] / static_cast<double>(out[m].count);
    }
    for (std::size_t i = 0; i < ap.size(); ++i) {
      const std::size_t m = label[i];
      dev[m] += std::norm((rp[i] - c.points[m]) - (out[m].mu - c.points[m]));
    }
    for (std::size_t m = 0; m < c.size(); ++m) {
      if (out[m].count > 0) {
        out[m].sigma2 = dev[m] / static_cast<double>(out[m].count);
      } else {
        std::clog << "warning: constellation point " << m << " never transmitted on pol " << to_string(pol)
                  << "; excluded from statistics\n";
      }
    }
  }
  return st;
}

/// SNR in dB averaged over polarizations; nullopt when the output is noiseless.
inline std::optional<double> snr_db(const ConditionalStats& st) {
  double lin = 0.0;
  for (const auto& pol : st.pol) {
    double sig = 0.0, var = 0.0;
    for (const auto& s : pol) {
      if (s.count == 0) continue;
      sig += std::norm(s.mu) * static_cast<double>(s.count);
      var += s.sigma2 * static_cast<double>(s.count);
    }
    if (var <= 0.0) return std::nullopt;
    lin += 0.5 * sig / var;
  }
  return 10.0 * std::log10(lin);
}

/// Polarization-averaged E{(|mu(A)| - |A|) / |A|}.
inline double delta_r(const ConditionalStats& st) {
  double acc = 0.0;
  for (const auto& pol : st.pol) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : pol) {
      if (s.count == 0) continue;
      sum += static_cast<double>(s.count) * (std::abs(s.mu) - std::abs(s.point)) / std::abs(s.point);
      n += s.count;
    }
    if (n == 0) throw ConfigError("delta_r: empty statistics");
    acc += 0.5 * sum / static_cast<double>(n);
  }
  return acc;
}

/// Rings of equal |s| and, per point, the smallest phase step to another point of its ring.
struct RingStructure {
  std::vector<std::vector<std::size_t>> rings;
  std::vector<double> phi;  // radians, indexed like the constellation
};

inline double wrap_angle(double x) {
  x = std::remainder(x, 2.0 * kPi);  // [-pi, pi]
  return x <= -kPi ? x + 2.0 * kPi : x;
}

inline RingStructure ring_structure(const Constellation& c) {
  RingStructure rs;
  rs.phi.assign(c.size(), 0.0);
  std::vector<bool> seen(c.size(), false);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (seen[i]) continue;
    std::vector<std::size_t> ring;
    for (std::size_t j = i; j < c.size(); ++j)
      if (!seen[j] && std::abs(std::abs(c.points[j]) - std::abs(c.points[i])) < 1e-9) {
        ring.push_back(j);
        seen[j] = true;
      }
    if (ring.size() < 2) throw ConfigError("ring_structure: ring with a single point");
    for (std::size_t p : ring) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t q : ring)
        if (q != p) best = std::min(best, std::abs(wrap_angle(std::arg(c.points[q]) - std::arg(c.points[p]))));
      rs.phi[p] = best;
    }
    rs.rings.push_back(std::move(ring));
  }
  return rs;
}

/// Polarization-averaged E{wrap(arg mu(A) - arg A) / phi(A)}.
inline double delta_phi(const ConditionalStats& st, const RingStructure& rings) {
  double acc = 0.0;
  for (const auto& pol : st.pol) {
    if (pol.size() != rings.phi.size()) throw ConfigError("delta_phi: ring structure does not match statistics");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < pol.size(); ++m) {
      const auto& s = pol[m];
      if (s.count == 0) continue;
      sum += static_cast<double>(s.count) * wrap_angle(std::arg(s.mu) - std::arg(s.point)) / rings.phi[m];
      n += s.count;
    }
    if (n == 0) throw ConfigError("delta_phi: empty statistics");
    acc += 0.5 * sum / static_cast<double>(n);
  }
  return acc;
}

/// Unnormalized counterpart of delta_phi: mean wrapped rotation in radians.
inline double mean_phase_rotation(const ConditionalStats& st) {
  double acc = 0.0;
  for (const auto& pol : st.pol) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : pol) {
      if (s.count == 0) continue;
      sum += static_cast<double>(s.count) * wrap_angle(std::arg(s.mu) - std::arg(s.point));
      n += s.count;
    }
    if (n == 0) throw ConfigError("mean_phase_rotation: empty statistics");
    acc += 0.5 * sum / static_cast<double>(n);
  }
  return acc;
}

/// sqrt(1/2 sum_pol E|R - R_model|^2 / E|R|^2).
inline double relative_error(const DualPolSymbolSeq& reference, const DualPolSymbolSeq& model) {
  if (reference.size() != model.size()) throw ConfigError("relative_error: length mismatch");
  double acc = 0.0;
  for (const auto pol : {Polarization::x, Polarization::y}) {
    const CVec& r = reference.pol(pol);
    const CVec& m = model.pol(pol);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      num += std::norm(r[i] - m[i]);
      den += std::norm(r[i]);
    }
    if (!(den > 0.0)) throw NumericalError("relative_error: reference has zero energy");
    acc += 0.5 * num / den;
  }
  return std::sqrt(acc);
}

}  // namespace fiberfrp
