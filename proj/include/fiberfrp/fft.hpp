// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cstddef>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include "fiberfrp/types.hpp"

namespace fiberfrp {

namespace detail {
// The FFTW planner is not re-entrant; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Unnormalized in-place complex FFT pair of fixed length (forward uses e^{-j}).
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) {
    if (n == 0) throw std::invalid_argument("Fft: zero length");
    buf_ = fftw_alloc_complex(n);
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  ~Fft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_);
  }

  std::size_t size() const { return n_; }

  void forward(std::span<cplx> data) const { run(fwd_, data); }
  /// Unnormalized: backward(forward(x)) = n * x.
  void backward(std::span<cplx> data) const { run(bwd_, data); }

 private:
  void run(fftw_plan plan, std::span<cplx> data) const {
    if (data.size() != n_) throw std::invalid_argument("Fft: length mismatch");
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    if (fftw_alignment_of(reinterpret_cast<double*>(p)) ==
        fftw_alignment_of(reinterpret_cast<double*>(buf_))) {
      fftw_execute_dft(plan, p, p);
    } else {
      std::copy(data.begin(), data.end(), reinterpret_cast<cplx*>(buf_));
      fftw_execute_dft(plan, buf_, buf_);
      std::copy_n(reinterpret_cast<const cplx*>(buf_), n_, data.begin());
    }
  }

  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// Angular frequency of FFT bin k for n samples at spacing dt (bins >= n/2 are negative).
inline double angular_frequency(std::size_t k, std::size_t n, double dt) {
  const auto nn = static_cast<double>(n);
  const double kk = k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - nn;
  return 2.0 * kPi * kk / (nn * dt);
}

}  // namespace fiberfrp
