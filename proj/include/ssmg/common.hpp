#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmg {

using Shape = std::vector<std::int64_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline Shape row_major_strides(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Trailing-axis broadcast of two shapes; throws ShapeError naming both.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("broadcast mismatch between " + shape_str(a) + " and " + shape_str(b));
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `in` aligned to the (already broadcast-compatible) shape `out`,
// with 0 on broadcast axes.
inline Shape broadcast_strides(const Shape& in, const Shape& out) {
  const Shape st = row_major_strides(in);
  Shape r(out.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t o = out.size() - in.size() + i;
    r[o] = (in[i] == 1 && out[o] != 1) ? 0 : st[i];
  }
  return r;
}

}  // namespace ssmg
