#include "sofpi/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "sofpi/tensor.hpp"

namespace sofpi {
namespace {

// A plan bound to its own aligned buffer. Executing always on the planned
// buffer keeps FFTW's codelet choice, and hence the rounding, identical
// between calls.
struct Plan {
  fftw_complex* buffer = nullptr;
  fftw_plan plan = nullptr;
  ~Plan() {
    if (plan) fftw_destroy_plan(plan);
    if (buffer) fftw_free(buffer);
  }
};

std::mutex g_mutex;
std::map<std::tuple<std::size_t, std::size_t, bool>, std::unique_ptr<Plan>> g_plans;

}  // namespace

void dft2(std::vector<Complex>& data, std::size_t h, std::size_t w, bool inverse) {
  if (data.size() != h * w) throw ShapeError("dft2: buffer of " + std::to_string(data.size()) + " for " +
                                             std::to_string(h) + "x" + std::to_string(w));
  std::lock_guard lock(g_mutex);
  auto& slot = g_plans[{h, w, inverse}];
  if (!slot) {
    slot = std::make_unique<Plan>();
    slot->buffer = fftw_alloc_complex(h * w);
    slot->plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), slot->buffer, slot->buffer,
                                  inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  static_assert(sizeof(Complex) == sizeof(fftw_complex));
  std::memcpy(slot->buffer, data.data(), h * w * sizeof(Complex));
  fftw_execute(slot->plan);
  std::memcpy(static_cast<void*>(data.data()), slot->buffer, h * w * sizeof(Complex));
  const double s = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (auto& z : data) z *= s;
}

}  // namespace sofpi
