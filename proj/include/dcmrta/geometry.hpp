#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>

namespace dcmrta {

/// Continuous 2-D vector, used for positions (units) and velocities (units/s).
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, const Vec2& v) { return v * s; }
constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
/// 2-D cross product (z-component of a x b).
constexpr double det(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
constexpr double abs_sq(const Vec2& v) { return dot(v, v); }
inline double norm(const Vec2& v) { return std::sqrt(abs_sq(v)); }
inline double distance(const Vec2& a, const Vec2& b) { return norm(a - b); }
inline Vec2 normalized(const Vec2& v) {
  const double n = norm(v);
  return n > 0.0 ? v / n : Vec2{};
}

/// Integer grid cell. Cell (x, y) covers [x, x+1) x [y, y+1).
struct Cell {
  int x = 0;
  int y = 0;

  constexpr auto operator<=>(const Cell&) const = default;
};

/// Continuous center of a grid cell.
constexpr Vec2 center(Cell c) { return {c.x + 0.5, c.y + 0.5}; }

inline Cell cell_of(const Vec2& p) {
  return {static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y))};
}

struct CellHash {
  std::size_t operator()(Cell c) const noexcept {
    return std::hash<long long>{}((static_cast<long long>(c.x) << 32) ^
                                  static_cast<unsigned int>(c.y));
  }
};

}  // namespace dcmrta
