#pragma once

#include <algorithm>

namespace matvl {

/// Axis-aligned rectangle in page units, y increasing downward.
struct Box {
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool well_ordered() const { return x0 <= x1 && y0 <= y1; }

  Box clamped(double w, double h) const {
    return {std::clamp(x0, 0.0, w), std::clamp(y0, 0.0, h), std::clamp(x1, 0.0, w),
            std::clamp(y1, 0.0, h)};
  }

  bool operator==(const Box&) const = default;
};

}  // namespace matvl
