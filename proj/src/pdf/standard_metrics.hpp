#pragma once

#include <array>

namespace matvl::pdf {

// Helvetica advance widths (1/1000 em) for codes 32..126.
inline constexpr std::array<int, 95> kHelveticaWidths = {
    278, 278, 355, 556, 556, 889, 667, 191, 333, 333, 389, 584, 278, 333, 278, 278,
    556, 556, 556, 556, 556, 556, 556, 556, 556, 556, 278, 278, 584, 584, 584, 556,
    1015, 667, 667, 722, 722, 667, 611, 778, 722, 278, 500, 667, 556, 833, 722, 778,
    667, 778, 722, 667, 611, 722, 667, 944, 667, 667, 611, 278, 278, 278, 469, 556,
    333, 556, 556, 500, 556, 556, 278, 556, 556, 222, 222, 500, 222, 833, 556, 556,
    556, 556, 333, 500, 278, 556, 500, 722, 500, 500, 500, 334, 260, 334, 584};

inline constexpr int kHelveticaAscent = 718;
inline constexpr int kHelveticaDescent = -207;

inline int helvetica_width(unsigned code) {
  if (code >= 32 && code <= 126) return kHelveticaWidths[code - 32];
  return 556;
}

}  // namespace matvl::pdf
