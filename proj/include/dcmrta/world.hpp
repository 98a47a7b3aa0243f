#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcmrta/geometry.hpp"
#include "dcmrta/random.hpp"

namespace dcmrta {

/// Malformed layout text (bad character, ragged rows, bad header).
class LayoutParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed layout that violates a structural invariant.
class LayoutValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Static warehouse world: occupancy grid plus pickup and delivery regions.
///
/// Construction does not validate; load_layout, generate_layout and validate()
/// do. Immutable after construction, so one instance may be shared read-only
/// between concurrent runs.
class Layout {
 public:
  Layout(std::string name, int width, int height, std::vector<std::uint8_t> obstacle,
         std::vector<Cell> pickup, std::vector<Cell> delivery);

  const std::string& name() const { return name_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double diagonal() const { return std::hypot(width_, height_); }

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y) * width_ + c.x; }
  Cell cell_at(std::size_t idx) const {
    return {static_cast<int>(idx % width_), static_cast<int>(idx / width_)};
  }
  std::size_t cell_count() const { return obstacle_.size(); }

  bool is_obstacle(Cell c) const { return obstacle_[index(c)] != 0; }
  /// In bounds and not an obstacle.
  bool is_free(Cell c) const { return in_bounds(c) && !is_obstacle(c); }
  std::size_t free_count() const { return free_count_; }
  bool has_obstacles() const { return free_count_ != cell_count(); }

  std::span<const Cell> pickup_region() const { return pickup_; }
  std::span<const Cell> delivery_region() const { return delivery_; }
  bool is_pickup(Cell c) const;
  bool is_delivery(Cell c) const;

 private:
  std::string name_;
  int width_;
  int height_;
  std::vector<std::uint8_t> obstacle_;
  std::vector<Cell> pickup_;
  std::vector<Cell> delivery_;
  std::vector<std::uint8_t> region_mask_;  // bit 0 pickup, bit 1 delivery
  std::size_t free_count_ = 0;
};

/// Calls fn(neighbor, diagonal) for every 8-connected free neighbor of `c`.
/// A diagonal step is only offered when both orthogonal cells it passes are free.
template <typename Fn>
void for_each_neighbor(const Layout& layout, Cell c, Fn&& fn) {
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  for (int k = 0; k < 8; ++k) {
    const Cell n{c.x + kDx[k], c.y + kDy[k]};
    if (!layout.is_free(n)) continue;
    const bool diagonal = k >= 4;
    if (diagonal && (!layout.is_free({c.x + kDx[k], c.y}) || !layout.is_free({c.x, c.y + kDy[k]})))
      continue;
    fn(n, diagonal);
  }
}

/// Reachability flags (one per cell) of the free-cell graph from `start`.
std::vector<std::uint8_t> reachable_from(const Layout& layout, Cell start);

/// Checks every Layout invariant; throws LayoutValidationError on violation.
void validate(const Layout& layout);

/// Parses the ASCII layout format:
///   optional first line "layout <name>", then equal-length rows of
///   '.' free, '#' obstacle, 'P' pickup, 'D' delivery. Row i is y = i.
Layout load_layout(std::string_view text);
Layout load_layout_file(const std::filesystem::path& path);
/// Inverse of load_layout (always writes the header line).
std::string to_text(const Layout& layout);

/// Parameters of the shelf-block generator. Widths are in cells.
struct ShelfSpec {
  int shelf_width = 4;   // 0 means no shelves at all
  int shelf_length = 10;
  int aisle_width = 6;   // free columns between shelf blocks
  int cross_aisle = 6;   // free rows between shelf blocks
  int margin = 8;        // free border band; delivery stations live here
  double fill = 1.0;     // probability that each shelf block is placed
  int clearance = 2;     // Chebyshev distance kept between region cells and shelves
};

/// Compactness presets "A".."E" (the five warehouse analogues), "desk" for
/// small grids and "empty" for an obstacle-free grid.
ShelfSpec shelf_preset(std::string_view name);

/// Deterministic in `seed`; throws LayoutValidationError for infeasible specs.
Layout generate_layout(int width, int height, const ShelfSpec& spec, std::uint64_t seed,
                       std::string name = "generated");

/// Chebyshev distance (in cells) from every cell to the nearest obstacle cell.
/// Cells with no obstacle at all get width + height.
std::vector<int> obstacle_clearance(const Layout& layout);

/// Copy of `layout` where every free cell closer than `cells` (Chebyshev) to an
/// obstacle becomes blocked. Regions are kept as-is; the result is not validated.
Layout inflate_obstacles(const Layout& layout, int cells);

struct Task {
  int id = 0;
  Cell origin;
  Cell destination;
  double created_at = 0.0;
};

/// Uniform origin over the pickup region and destination over the delivery
/// region, redrawn until they differ. Throws std::invalid_argument on an empty
/// region or when the only possible pair coincides.
Task sample_task(const Layout& layout, Rng& rng, int id, double created_at);

/// Fixed-capacity task queue. Removal by index keeps the order of the rest.
class TaskQueue {
 public:
  explicit TaskQueue(std::size_t capacity = 10) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return tasks_.size(); }
  bool full() const { return tasks_.size() == capacity_; }
  std::span<const Task> tasks() const { return tasks_; }
  const Task& operator[](std::size_t i) const { return tasks_[i]; }

  void push(Task task);
  Task take(std::size_t index);

 private:
  std::size_t capacity_;
  std::vector<Task> tasks_;
};

}  // namespace dcmrta
