#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace lpimpute {

/// One training-curve entry: 1-based iteration and the observed-cell
/// reconstruction RMSE after it.
struct CurvePoint {
  std::size_t iteration = 0;
  double rmse = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

/// CSV `iteration,rmse`.
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);

}  // namespace lpimpute
