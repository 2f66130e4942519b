#include "dlcm/common.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

namespace dlcm {

double Rng::next_normal() {
  // Box-Muller; the spare is discarded so draw order is layout-independent.
  double u1 = next_unit();
  const double u2 = next_unit();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::next_trunc_normal(double sigma, double clip) {
  for (;;) {
    const double z = next_normal();
    if (std::abs(z) <= clip) return z * sigma;
  }
}

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("DLCM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) return cap;
    if (cap >= 1) return cap;
  }
  return hw;
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace dlcm
