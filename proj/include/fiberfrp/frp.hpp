// SPDX-License-Identifier: Apache-2.0
//
// Finite-memory first-order regular perturbation model:
//   r_n = a_n + j (8/9) gamma E_s sum_{k,l,m} (a_{n+k}^H a_{n+l}) a_{n+m} S_klm
#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "fiberfrp/kernels.hpp"
#include "fiberfrp/types.hpp"

namespace fiberfrp {

/// Scalar in front of the triplet sum, (8/9) gamma E_s (units W^-1 m^-1 J = s/m).
inline double nonlinear_scale(double gamma, double symbol_energy) {
  return kManakovFactor * gamma * symbol_energy;
}

/// The 2M+1 symbols centred on index n, cyclically extended.
inline DualPolSymbolSeq extract_window(const DualPolSymbolSeq& seq, std::size_t n, int memory) {
  const auto len = static_cast<long long>(seq.size());
  if (len == 0) throw ConfigError("extract_window: empty sequence");
  DualPolSymbolSeq w(2 * static_cast<std::size_t>(memory) + 1);
  for (int d = -memory; d <= memory; ++d) {
    long long i = (static_cast<long long>(n) + d) % len;
    if (i < 0) i += len;
    w.x[static_cast<std::size_t>(d + memory)] = seq.x[static_cast<std::size_t>(i)];
    w.y[static_cast<std::size_t>(d + memory)] = seq.y[static_cast<std::size_t>(i)];
  }
  return w;
}

namespace detail {
inline int window_memory(const DualPolSymbolSeq& window) {
  if (window.size() % 2 == 0) throw ConfigError("triplet window length must be odd (2M+1)");
  return static_cast<int>(window.size() / 2);
}

// Fills out[0..L) with the triplets of one window; pointers index the window centre.
inline void fill_triplets(const cplx* wx, const cplx* wy, int memory, Polarization pol, cplx* out) {
  const int w = 2 * memory + 1;
  const cplx* p = pol == Polarization::x ? wx : wy;
  std::size_t idx = 0;
  for (int k = 0; k < w; ++k) {
    for (int l = 0; l < w; ++l) {
      const cplx c = detail::mul(std::conj(wx[k]), wx[l]) + detail::mul(std::conj(wy[k]), wy[l]);
      for (int m = 0; m < w; ++m) out[idx++] = detail::mul(c, p[m]);
    }
  }
}

// Triplet sum for both polarizations without materializing the triplet vector.
inline DualPolSymbol triplet_sum(const cplx* wx, const cplx* wy, const KernelTensor& s) {
  const int w = s.width();
  cplx ax{}, ay{};
  const cplx* kern = s.values.data();
  for (int k = 0; k < w; ++k) {
    for (int l = 0; l < w; ++l) {
      const cplx c = detail::mul(std::conj(wx[k]), wx[l]) + detail::mul(std::conj(wy[k]), wy[l]);
      cplx sx{}, sy{};
      for (int m = 0; m < w; ++m, ++kern) {
        sx += detail::mul(*kern, wx[m]);
        sy += detail::mul(*kern, wy[m]);
      }
      ax += detail::mul(c, sx);
      ay += detail::mul(c, sy);
    }
  }
  return {ax, ay};
}
}  // namespace detail

/// Triplet vector of one window in canonical (k, l, m) order.
inline CVec triplets(const DualPolSymbolSeq& window, Polarization pol) {
  const int memory = detail::window_memory(window);
  CVec out(KernelTensor::length(memory));
  detail::fill_triplets(window.x.data(), window.y.data(), memory, pol, out.data());
  return out;
}

/// FRP output symbol for the centre of a 2M+1 window.
inline DualPolSymbol predict(const DualPolSymbolSeq& window, const KernelTensor& kernels, double gamma,
                             double symbol_energy) {
  const int memory = detail::window_memory(window);
  if (memory != kernels.memory) throw ConfigError("predict: window memory does not match kernel memory");
  const auto c = static_cast<std::size_t>(memory);
  const cplx scale = kJ * nonlinear_scale(gamma, symbol_energy);
  const auto d = detail::triplet_sum(window.x.data(), window.y.data(), kernels);
  return {window.x[c] + scale * d.x, window.y[c] + scale * d.y};
}

/// FRP applied to a whole (cyclic) stream.
inline DualPolSymbolSeq predict_sequence(const DualPolSymbolSeq& a, const KernelTensor& kernels, double gamma,
                                         double symbol_energy) {
  const int memory = kernels.memory;
  const std::size_t n = a.size();
  if (n == 0) throw ConfigError("predict_sequence: empty sequence");
  const std::size_t w = static_cast<std::size_t>(kernels.width());
  const cplx scale = kJ * nonlinear_scale(gamma, symbol_energy);
  // Padded copy so every window is contiguous.
  CVec px(n + w - 1), py(n + w - 1);
  for (std::size_t i = 0; i < n + w - 1; ++i) {
    const std::size_t src = (i + n * w - static_cast<std::size_t>(memory)) % n;
    px[i] = a.x[src];
    py[i] = a.y[src];
  }
  DualPolSymbolSeq out(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const auto d = detail::triplet_sum(&px[u], &py[u], kernels);
    out.x[u] = a.x[u] + scale * d.x;
    out.y[u] = a.y[u] + scale * d.y;
  }
  return out;
}

/// B transmission pairs of one polarization with their triplet matrix (row-major B x L).
struct TripletBatch {
  CVec a;
  CVec r;
  CVec matrix;
  int memory = 0;
  Polarization pol = Polarization::x;

  std::size_t rows() const { return a.size(); }
  std::size_t cols() const { return KernelTensor::length(memory); }
  const cplx* row(std::size_t i) const { return matrix.data() + i * cols(); }
};

/// Rows for the given symbol indices of (a, r); windows are cyclic in a.
inline TripletBatch build_batch(const DualPolSymbolSeq& a, const DualPolSymbolSeq& r, int memory, Polarization pol,
                                const std::vector<std::size_t>& indices) {
  if (a.size() != r.size()) throw ConfigError("build_batch: a and r lengths differ");
  if (memory < 0) throw ConfigError("memory must be >= 0");
  TripletBatch b;
  b.memory = memory;
  b.pol = pol;
  const std::size_t L = KernelTensor::length(memory);
  b.a.resize(indices.size());
  b.r.resize(indices.size());
  b.matrix.resize(indices.size() * L);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t n = indices[i];
    if (n >= a.size()) throw ConfigError("build_batch: index out of range");
    const auto w = extract_window(a, n, memory);
    detail::fill_triplets(w.x.data(), w.y.data(), memory, pol, b.matrix.data() + i * L);
    b.a[i] = a.pol(pol)[n];
    b.r[i] = r.pol(pol)[n];
  }
  return b;
}

/// T * v for a batch.
inline CVec batch_product(const TripletBatch& batch, const CVec& v) {
  const std::size_t L = batch.cols();
  if (v.size() != L) throw ConfigError("batch_product: kernel vector length mismatch");
  CVec out(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const cplx* t = batch.row(i);
    cplx acc{};
    for (std::size_t j = 0; j < L; ++j) acc += detail::mul(t[j], v[j]);
    out[i] = acc;
  }
  return out;
}

/// r_hat = a + j (8/9) gamma E_s T s.
inline CVec predict_batch(const TripletBatch& batch, const KernelTensor& kernels, double gamma, double symbol_energy) {
  if (batch.memory != kernels.memory) throw ConfigError("predict_batch: batch memory does not match kernel memory");
  const cplx scale = kJ * nonlinear_scale(gamma, symbol_energy);
  CVec out = batch_product(batch, kernels.values);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = batch.a[i] + scale * out[i];
  return out;
}

/// Debug dump: row, a, r and the first eight triplet columns.
inline void write_batch_csv(const std::string& path, const TripletBatch& batch) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  const std::size_t shown = std::min<std::size_t>(8, batch.cols());
  os << "row,a_re,a_im,r_re,r_im";
  for (std::size_t j = 0; j < shown; ++j) os << ",t" << j << "_re,t" << j << "_im";
  os << '\n';
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    os << i << ',' << batch.a[i].real() << ',' << batch.a[i].imag() << ',' << batch.r[i].real() << ','
       << batch.r[i].imag();
    for (std::size_t j = 0; j < shown; ++j) os << ',' << batch.row(i)[j].real() << ',' << batch.row(i)[j].imag();
    os << '\n';
  }
}

/// Closed-form conditional mean of the FRP output given the centre symbol s,
/// for i.i.d. zero-mean unit-energy neighbours with E{A^2} = second_moment.
inline cplx conditional_mean_closed_form(cplx s, const KernelTensor& kernels, double gamma, double symbol_energy,
                                      cplx second_moment) {
  cplx acc = s * (1.0 + std::norm(s)) * kernels.at(0, 0, 0);
  for (int k = -kernels.memory; k <= kernels.memory; ++k) {
    if (k == 0) continue;
    acc += s * (2.0 * kernels.at(k, k, 0) + kernels.at(k, 0, k));
    acc += std::conj(s) * second_moment * kernels.at(0, k, k);
  }
  return s + kJ * nonlinear_scale(gamma, symbol_energy) * acc;
}

}  // namespace fiberfrp
