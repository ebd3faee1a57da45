// Orthonormal 2D discrete Fourier transforms (FFTW backend).

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace sofpi {

using Complex = std::complex<double>;

/// In-place unitary 2D DFT of a row-major h x w array. The forward transform
/// uses exp(-2*pi*i*...), the inverse exp(+2*pi*i*...); both scale by 1/sqrt(hw).
void dft2(std::vector<Complex>& data, std::size_t h, std::size_t w, bool inverse);

/// Signed frequency index of bin k on an n-point grid: k for k < n/2 and
/// k - n otherwise (the Nyquist bin of even n maps to -n/2).
inline long signed_frequency(std::size_t k, std::size_t n) {
  return 2 * k < n ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

}  // namespace sofpi
