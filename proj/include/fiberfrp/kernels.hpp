// SPDX-License-Identifier: Apache-2.0
//
// SPM perturbation kernels S_klm: the double integral over z and t of
// exp(-alpha z) h*(z,t) h*(z,t-kT) h(z,t-lT) h(z,t-mT), and the tensor
// container shared by the FRP model and the NBGD optimizer.
//
// Kernels carry units of m/s (h is energy-normalized, so |h|^4 dt has units 1/s).
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fiberfrp/fft.hpp"
#include "fiberfrp/signal.hpp"
#include "fiberfrp/ssfm.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform periodic t-grid [t_min, t_max) with n_t samples, and n_z midpoint z-cells over [0, L].
struct IntegrationGrid {
  double t_min = 0.0;
  double t_max = 0.0;
  std::size_t n_t = 0;
  std::size_t n_z = 0;

  double dt() const { return (t_max - t_min) / static_cast<double>(n_t); }

  void validate() const {
    if (n_t < 2 || n_z < 2) throw ConfigError("integration grid needs n_t, n_z >= 2");
    if (!(t_max > t_min)) throw ConfigError("integration grid has an empty t-range");
  }

  /// Same range, both resolutions doubled.
  IntegrationGrid refined() const { return {t_min, t_max, 2 * n_t, 2 * n_z}; }

  /// Symmetric window covering the RRC span plus the dispersion spread 2 pi |beta2| L B on
  /// each side, rounded up to a power-of-two number of symbols.
  static IntegrationGrid for_link(const PulseShape& pulse, const FiberParams& fiber, std::size_t n_z = 640) {
    pulse.validate();
    const double T = pulse.symbol_period;
    const double spread = 2.0 * kPi * std::abs(fiber.beta2) * fiber.length * pulse.bandwidth();
    const auto half = static_cast<std::size_t>(std::ceil(pulse.span + spread / T));
    const std::size_t window = std::bit_ceil(2 * half);
    IntegrationGrid g;
    g.t_min = -0.5 * static_cast<double>(window) * T;
    g.t_max = 0.5 * static_cast<double>(window) * T;
    g.n_t = window * static_cast<std::size_t>(pulse.samples_per_symbol);
    g.n_z = n_z;
    return g;
  }
};

enum class KernelSource : std::uint8_t { analytical = 0, nbgd = 1 };

inline const char* to_string(KernelSource s) { return s == KernelSource::analytical ? "analytical" : "nbgd"; }

/// (2M+1)^3 kernels in row-major (k, l, m) order, m fastest.
struct KernelTensor {
  int memory = 0;
  CVec values;
  IntegrationGrid grid;
  KernelSource source = KernelSource::analytical;
  double training_power_dbm = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;

  static std::size_t length(int m) {
    if (m < 0) throw ConfigError("memory must be >= 0");
    const auto w = static_cast<std::size_t>(2 * m + 1);
    return w * w * w;
  }

  KernelTensor() = default;
  explicit KernelTensor(int m) : memory(m), values(length(m)) {}

  std::size_t size() const { return values.size(); }
  int width() const { return 2 * memory + 1; }

  bool contains(int k, int l, int m) const {
    return std::abs(k) <= memory && std::abs(l) <= memory && std::abs(m) <= memory;
  }

  std::size_t index(int k, int l, int m) const {
    const auto w = static_cast<std::size_t>(width());
    return (static_cast<std::size_t>(k + memory) * w + static_cast<std::size_t>(l + memory)) * w +
           static_cast<std::size_t>(m + memory);
  }

  cplx at(int k, int l, int m) const {
    if (!contains(k, l, m))
      throw std::out_of_range("kernel index (" + std::to_string(k) + "," + std::to_string(l) + "," +
                              std::to_string(m) + ") outside memory " + std::to_string(memory));
    return values[index(k, l, m)];
  }
  cplx& at(int k, int l, int m) {
    if (!contains(k, l, m)) throw std::out_of_range("kernel index outside memory");
    return values[index(k, l, m)];
  }

  /// Sub-tensor for a smaller memory.
  KernelTensor restrict_to(int m) const {
    if (m < 0 || m > memory) throw std::out_of_range("restrict_to: memory out of range");
    KernelTensor out = *this;
    out.memory = m;
    out.values.assign(length(m), cplx{});
    for (int k = -m; k <= m; ++k)
      for (int l = -m; l <= m; ++l)
        for (int n = -m; n <= m; ++n) out.values[out.index(k, l, n)] = values[index(k, l, n)];
    return out;
  }

  bool operator==(const KernelTensor& o) const {
    auto same_double = [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); };
    return memory == o.memory && values == o.values && same_double(grid.t_min, o.grid.t_min) &&
           same_double(grid.t_max, o.grid.t_max) && grid.n_t == o.grid.n_t && grid.n_z == o.grid.n_z &&
           source == o.source && same_double(training_power_dbm, o.training_power_dbm) && seed == o.seed;
  }
};

/// h(z, t) on the grid: the pulse spectrum times exp(+j beta2 z omega^2 / 2), transformed back.
inline CVec dispersed_pulse(const PulseShape& pulse, const FiberParams& fiber, double z, const IntegrationGrid& grid) {
  grid.validate();
  if (z < 0.0 || z > fiber.length * (1.0 + 1e-12)) throw ConfigError("dispersed_pulse: z outside [0, L]");
  const double dt = grid.dt();
  if (1.0 / dt < pulse.bandwidth())
    throw NumericalError("integration grid too coarse for the pulse bandwidth");
  const std::size_t n = grid.n_t;
  const auto spec = rrc_spectrum(pulse, n, dt);
  CVec h(n);
  const double scale = 1.0 / (static_cast<double>(n) * dt);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = angular_frequency(k, n, dt);
    h[k] = std::polar(spec[k] * scale, 0.5 * fiber.beta2 * w * w * z + w * grid.t_min);
  }
  Fft fft(n);
  fft.backward(h);
  return h;
}

/// Evaluates kernels on a cached set of dispersed-pulse z-slices.
class KernelIntegrator {
 public:
  KernelIntegrator(const PulseShape& pulse, const FiberParams& fiber, const IntegrationGrid& grid)
      : pulse_(pulse), fiber_(fiber), grid_(grid) {
    pulse.validate();
    fiber.validate();
    grid.validate();
    const double ratio = pulse.symbol_period / grid.dt();
    shift_ = static_cast<std::ptrdiff_t>(std::llround(ratio));
    if (shift_ < 1 || std::abs(ratio - static_cast<double>(shift_)) > 1e-9 * ratio)
      throw ConfigError("integration grid spacing must divide the symbol period");
    if (1.0 / grid.dt() < pulse.bandwidth())
      throw NumericalError("integration grid too coarse for the pulse bandwidth");

    const double dz = fiber.length / static_cast<double>(grid.n_z);
    slices_.reserve(grid.n_z);
    weights_.reserve(grid.n_z);
    for (std::size_t j = 0; j < grid.n_z; ++j) {
      const double z = (static_cast<double>(j) + 0.5) * dz;
      slices_.push_back(dispersed_pulse(pulse, fiber, z, grid));
      weights_.push_back(std::exp(-fiber.alpha * z) * dz * grid.dt());
    }
  }

  const IntegrationGrid& grid() const { return grid_; }

  cplx kernel(int k, int l, int m) const {
    if (l > m) std::swap(l, m);  // same operand order as tensor()
    cplx acc{};
    CVec p(grid_.n_t), hl(grid_.n_t), hm(grid_.n_t);
    for (std::size_t j = 0; j < slices_.size(); ++j) {
      prefactor(slices_[j], k, p);
      shifted(slices_[j], l, hl);
      shifted(slices_[j], m, hm);
      acc += weights_[j] * triple_sum(p, hl, hm);
    }
    return acc;
  }

  /// All (2M+1)^3 kernels; l <-> m symmetry halves the work.
  KernelTensor tensor(int memory) const {
    KernelTensor out(memory);
    out.grid = grid_;
    const int w = 2 * memory + 1;
    const std::size_t n = grid_.n_t;
#pragma omp parallel for schedule(static)
    for (int k = -memory; k <= memory; ++k) {
      std::vector<CVec> shifts(static_cast<std::size_t>(w), CVec(n));
      CVec p(n);
      std::vector<cplx> acc(static_cast<std::size_t>(w * w));
      for (std::size_t j = 0; j < slices_.size(); ++j) {
        prefactor(slices_[j], k, p);
        for (int d = -memory; d <= memory; ++d) shifted(slices_[j], d, shifts[static_cast<std::size_t>(d + memory)]);
        for (int l = -memory; l <= memory; ++l)
          for (int m = l; m <= memory; ++m) {
            const auto& hl = shifts[static_cast<std::size_t>(l + memory)];
            const auto& hm = shifts[static_cast<std::size_t>(m + memory)];
            acc[static_cast<std::size_t>((l + memory) * w + (m + memory))] += weights_[j] * triple_sum(p, hl, hm);
          }
      }
      for (int l = -memory; l <= memory; ++l)
        for (int m = l; m <= memory; ++m) {
          const cplx v = acc[static_cast<std::size_t>((l + memory) * w + (m + memory))];
          out.values[out.index(k, l, m)] = v;
          out.values[out.index(k, m, l)] = v;
        }
    }
    return out;
  }

 private:
  // out[i] = h[i - d*shift] (cyclic)
  void shifted(const CVec& h, int d, CVec& out) const {
    const auto n = static_cast<std::ptrdiff_t>(h.size());
    std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(d) * shift_) % n;
    if (off < 0) off += n;
    // out[i] = h[(i - off) mod n]
    std::copy(h.end() - off, h.end(), out.begin());
    std::copy(h.begin(), h.end() - off, out.begin() + off);
  }

  // out[i] = conj(h[i] * h[i - kT])
  void prefactor(const CVec& h, int k, CVec& out) const {
    shifted(h, k, out);
    for (std::size_t i = 0; i < h.size(); ++i) {
      cplx v = out[i];
      detail::mul_inplace(v, h[i]);
      out[i] = std::conj(v);
    }
  }

  static cplx triple_sum(const CVec& p, const CVec& a, const CVec& b) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double abr = a[i].real() * b[i].real() - a[i].imag() * b[i].imag();
      const double abi = a[i].real() * b[i].imag() + a[i].imag() * b[i].real();
      re += p[i].real() * abr - p[i].imag() * abi;
      im += p[i].real() * abi + p[i].imag() * abr;
    }
    return {re, im};
  }

  PulseShape pulse_;
  FiberParams fiber_;
  IntegrationGrid grid_;
  std::ptrdiff_t shift_ = 1;
  std::vector<CVec> slices_;
  std::vector<double> weights_;
};

inline cplx compute_kernel(int k, int l, int m, const PulseShape& pulse, const FiberParams& fiber,
                           const IntegrationGrid& grid) {
  return KernelIntegrator(pulse, fiber, grid).kernel(k, l, m);
}

inline KernelTensor compute_tensor(int memory, const PulseShape& pulse, const FiberParams& fiber,
                                   const IntegrationGrid& grid) {
  if (memory < 0) throw ConfigError("memory must be >= 0");
  return KernelIntegrator(pulse, fiber, grid).tensor(memory);
}

/// Result of recomputing a tensor on the refined grid.
struct ConvergenceCertificate {
  IntegrationGrid base;
  IntegrationGrid refined;
  double max_relative_change = 0.0;   // over every kernel
  double max_change_vs_peak = 0.0;    // max |dS| / max |S|
  double tolerance = 1e-3;
  bool passed() const { return max_relative_change < tolerance; }
};

inline ConvergenceCertificate certify(const KernelTensor& base, const PulseShape& pulse, const FiberParams& fiber) {
  ConvergenceCertificate c;
  c.base = base.grid;
  c.refined = base.grid.refined();
  const KernelTensor fine = compute_tensor(base.memory, pulse, fiber, c.refined);
  double peak = 0.0;
  for (const auto& v : fine.values) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double d = std::abs(fine.values[i] - base.values[i]);
    const double ref = std::abs(fine.values[i]);
    c.max_relative_change = std::max(c.max_relative_change, ref > 0.0 ? d / ref : (d > 0.0 ? 1.0 : 0.0));
    c.max_change_vs_peak = std::max(c.max_change_vs_peak, peak > 0.0 ? d / peak : 0.0);
  }
  return c;
}

inline constexpr char kKernelMagic[8] = {'F', 'R', 'P', 'K', 'E', 'R', 'N', 'L'};
inline constexpr std::uint32_t kKernelFormatVersion = 1;

/// Binary layout (little-endian): magic[8], u32 version, i32 M, f64 t_min, f64 t_max,
/// u64 n_t, u64 n_z, u8 source, f64 training power (dBm), u64 seed, u64 count,
/// then count x (f64 re, f64 im) in canonical order.
inline void save_tensor(const std::string& path, const KernelTensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kKernelMagic, sizeof(kKernelMagic));
  detail::write_le<std::uint32_t>(os, kKernelFormatVersion);
  detail::write_le<std::int32_t>(os, t.memory);
  detail::write_le<double>(os, t.grid.t_min);
  detail::write_le<double>(os, t.grid.t_max);
  detail::write_le<std::uint64_t>(os, t.grid.n_t);
  detail::write_le<std::uint64_t>(os, t.grid.n_z);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.source));
  detail::write_le<double>(os, t.training_power_dbm);
  detail::write_le<std::uint64_t>(os, t.seed);
  detail::write_le<std::uint64_t>(os, t.values.size());
  for (const auto& v : t.values) {
    detail::write_le<double>(os, v.real());
    detail::write_le<double>(os, v.imag());
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline KernelTensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[sizeof(kKernelMagic)] = {};
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(kKernelMagic)))
    throw FormatError(path + ": not a kernel tensor file");
  try {
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kKernelFormatVersion)
      throw FormatError(path + ": unsupported kernel format version " + std::to_string(version));
    KernelTensor t;
    t.memory = detail::read_le<std::int32_t>(is);
    if (t.memory < 0 || t.memory > 1000) throw FormatError(path + ": corrupt memory field");
    t.grid.t_min = detail::read_le<double>(is);
    t.grid.t_max = detail::read_le<double>(is);
    t.grid.n_t = detail::read_le<std::uint64_t>(is);
    t.grid.n_z = detail::read_le<std::uint64_t>(is);
    const auto src = detail::read_le<std::uint8_t>(is);
    if (src > 1) throw FormatError(path + ": corrupt source field");
    t.source = static_cast<KernelSource>(src);
    t.training_power_dbm = detail::read_le<double>(is);
    t.seed = detail::read_le<std::uint64_t>(is);
    const auto count = detail::read_le<std::uint64_t>(is);
    if (count != KernelTensor::length(t.memory)) throw FormatError(path + ": value count does not match memory");
    t.values.resize(count);
    for (auto& v : t.values) {
      const double re = detail::read_le<double>(is);
      const double im = detail::read_le<double>(is);
      v = {re, im};
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
    return t;
  } catch (const NumericalError&) {
    throw FormatError(path + ": truncated kernel file");
  }
}

/// Inspection export: k,l,m,re,im,abs.
inline void export_tensor_csv(const std::string& path, const KernelTensor& t) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "k,l,m,re,im,abs\n" << std::setprecision(17);
  for (int k = -t.memory; k <= t.memory; ++k)
    for (int l = -t.memory; l <= t.memory; ++l)
      for (int m = -t.memory; m <= t.memory; ++m) {
        const cplx v = t.values[t.index(k, l, m)];
        os << k << ',' << l << ',' << m << ',' << v.real() << ',' << v.imag() << ',' << std::abs(v) << '\n';
      }
}

}  // namespace fiberfrp
