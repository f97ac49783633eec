#pragma once

#include <cstdint>
#include <vector>

#include "locater/errors.hpp"

namespace locater {

// Binary pixel mask, one byte per pixel (0/1), index = x * h + y.
struct Mask {
  int w = 0, h = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int width, int height) : w(width), h(height), v(static_cast<size_t>(width) * height, 0) {}

  uint8_t& at(int x, int y) { return v[static_cast<size_t>(x) * h + y]; }
  uint8_t at(int x, int y) const { return v[static_cast<size_t>(x) * h + y]; }

  int64_t count() const {
    int64_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  bool empty_mask() const { return count() == 0; }

  bool operator==(const Mask& o) const { return w == o.w && h == o.h && v == o.v; }
};

}  // namespace locater
