#pragma once

#include "semvol/error.hpp"
#include "semvol/linalg.hpp"

#include <cmath>
#include <optional>

namespace testing {

// Code of the semvol::Error thrown by fn, or nullopt when nothing is thrown.
template <typename F>
std::optional<semvol::ErrorCode> error_code(F &&fn) {
  try {
    fn();
  } catch (const semvol::Error &e) {
    return e.code();
  }
  return std::nullopt;
}

inline semvol::linalg::Matrix unit_pair(double theta) {
  semvol::linalg::Matrix v(2, 2);
  v << 1.0, std::cos(theta), 0.0, std::sin(theta);
  return v;
}

inline constexpr double kPi = 3.14159265358979323846;

} // namespace testing
