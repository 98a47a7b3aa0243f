#include "dcmrta/world.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

namespace dcmrta {

Layout::Layout(std::string name, int width, int height, std::vector<std::uint8_t> obstacle,
               std::vector<Cell> pickup, std::vector<Cell> delivery)
    : name_(std::move(name)),
      width_(width),
      height_(height),
      obstacle_(std::move(obstacle)),
      pickup_(std::move(pickup)),
      delivery_(std::move(delivery)) {
  if (width_ <= 0 || height_ <= 0 ||
      obstacle_.size() != static_cast<std::size_t>(width_) * height_)
    throw std::invalid_argument("layout dimensions do not match occupancy size");
  free_count_ = static_cast<std::size_t>(std::count(obstacle_.begin(), obstacle_.end(), 0));
  region_mask_.assign(obstacle_.size(), 0);
  for (Cell c : pickup_) {
    if (!in_bounds(c)) throw std::invalid_argument("pickup cell out of bounds");
    region_mask_[index(c)] |= 1;
  }
  for (Cell c : delivery_) {
    if (!in_bounds(c)) throw std::invalid_argument("delivery cell out of bounds");
    region_mask_[index(c)] |= 2;
  }
}

bool Layout::is_pickup(Cell c) const { return in_bounds(c) && (region_mask_[index(c)] & 1); }
bool Layout::is_delivery(Cell c) const { return in_bounds(c) && (region_mask_[index(c)] & 2); }

std::vector<std::uint8_t> reachable_from(const Layout& layout, Cell start) {
  std::vector<std::uint8_t> seen(layout.cell_count(), 0);
  if (!layout.is_free(start)) return seen;
  std::deque<Cell> frontier{start};
  seen[layout.index(start)] = 1;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    for_each_neighbor(layout, c, [&](Cell n, bool) {
      auto& flag = seen[layout.index(n)];
      if (!flag) {
        flag = 1;
        frontier.push_back(n);
      }
    });
  }
  return seen;
}

void validate(const Layout& layout) {
  if (layout.width() < 2 || layout.height() < 2)
    throw LayoutValidationError("layout must be at least 2x2");
  if (layout.pickup_region().empty()) throw LayoutValidationError("pickup region is empty");
  if (layout.delivery_region().empty()) throw LayoutValidationError("delivery region is empty");
  for (auto region : {layout.pickup_region(), layout.delivery_region()})
    for (Cell c : region)
      if (layout.is_obstacle(c))
        throw LayoutValidationError("region cell (" + std::to_string(c.x) + "," +
                                    std::to_string(c.y) + ") lies on an obstacle");
  const auto seen = reachable_from(layout, layout.pickup_region().front());
  for (auto region : {layout.pickup_region(), layout.delivery_region()})
    for (Cell c : region)
      if (!seen[layout.index(c)])
        throw LayoutValidationError("region cell (" + std::to_string(c.x) + "," +
                                    std::to_string(c.y) + ") is disconnected");
}

Layout load_layout(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(pos, end - pos));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  // A single trailing newline produces one empty final line.
  if (!lines.empty() && lines.back().empty()) lines.pop_back();

  std::string name = "unnamed";
  std::size_t first = 0;
  if (!lines.empty() && lines.front().starts_with("layout")) {
    const auto header = lines.front();
    if (header.size() < 8 || header[6] != ' ')
      throw LayoutParseError("malformed header line: expected 'layout <name>'");
    name = std::string(header.substr(7));
    first = 1;
  }
  if (lines.size() == first) throw LayoutParseError("layout has no grid rows");

  const int height = static_cast<int>(lines.size() - first);
  const int width = static_cast<int>(lines[first].size());
  std::vector<std::uint8_t> obstacle(static_cast<std::size_t>(width) * height, 0);
  std::vector<Cell> pickup;
  std::vector<Cell> delivery;
  for (int y = 0; y < height; ++y) {
    const auto row = lines[first + y];
    if (static_cast<int>(row.size()) != width)
      throw LayoutParseError("row " + std::to_string(y) + " has length " +
                             std::to_string(row.size()) + ", expected " + std::to_string(width));
    for (int x = 0; x < width; ++x) {
      switch (row[x]) {
        case '.':
          break;
        case '#':
          obstacle[static_cast<std::size_t>(y) * width + x] = 1;
          break;
        case 'P':
          pickup.push_back({x, y});
          break;
        case 'D':
          delivery.push_back({x, y});
          break;
        default:
          throw LayoutParseError("unexpected character '" + std::string(1, row[x]) +
                                 "' at row " + std::to_string(y) + ", column " +
                                 std::to_string(x));
      }
    }
  }
  Layout layout(std::move(name), width, height, std::move(obstacle), std::move(pickup),
                std::move(delivery));
  validate(layout);
  return layout;
}

Layout load_layout_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open layout file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_layout(buf.str());
}

std::string to_text(const Layout& layout) {
  std::string out = "layout " + layout.name() + "\n";
  out.reserve(out.size() + layout.cell_count() + layout.height());
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      const Cell c{x, y};
      if (layout.is_obstacle(c))
        out += '#';
      else if (layout.is_pickup(c))
        out += 'P';
      else if (layout.is_delivery(c))
        out += 'D';
      else
        out += '.';
    }
    out += '\n';
  }
  return out;
}

ShelfSpec shelf_preset(std::string_view name) {
  if (name == "A") return {4, 10, 8, 8, 8, 1.0, 2};
  if (name == "B") return {4, 12, 7, 6, 7, 1.0, 2};
  if (name == "C") return {4, 16, 6, 6, 6, 1.0, 2};
  if (name == "D") return {6, 12, 6, 6, 6, 1.0, 2};
  if (name == "E") return {4, 8, 6, 5, 6, 0.85, 2};
  if (name == "desk") return {2, 4, 5, 5, 4, 1.0, 2};
  if (name == "empty") return {0, 0, 0, 0, 0, 1.0, 0};
  throw std::invalid_argument("unknown layout preset '" + std::string(name) + "'");
}

std::vector<int> obstacle_clearance(const Layout& layout) {
  const int far = layout.width() + layout.height();
  std::vector<int> dist(layout.cell_count(), far);
  std::deque<Cell> frontier;
  for (std::size_t i = 0; i < layout.cell_count(); ++i) {
    const Cell c = layout.cell_at(i);
    if (layout.is_obstacle(c)) {
      dist[i] = 0;
      frontier.push_back(c);
    }
  }
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    const int d = dist[layout.index(c)] + 1;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const Cell n{c.x + dx, c.y + dy};
        if (!layout.in_bounds(n)) continue;
        int& nd = dist[layout.index(n)];
        if (d < nd) {
          nd = d;
          frontier.push_back(n);
        }
      }
  }
  return dist;
}

Layout inflate_obstacles(const Layout& layout, int cells) {
  const auto clearance = obstacle_clearance(layout);
  std::vector<std::uint8_t> obstacle(layout.cell_count(), 0);
  for (std::size_t i = 0; i < obstacle.size(); ++i) obstacle[i] = clearance[i] <= cells;
  const auto pickup = layout.pickup_region();
  const auto delivery = layout.delivery_region();
  return Layout(layout.name(), layout.width(), layout.height(), std::move(obstacle),
                {pickup.begin(), pickup.end()}, {delivery.begin(), delivery.end()});
}

namespace {

// Start offsets for `count` blocks of `block` cells separated by `gap`, centered
// in [lo, hi).
std::vector<int> block_starts(int lo, int hi, int block, int gap) {
  std::vector<int> starts;
  const int span = hi - lo;
  if (block <= 0 || span < block) return starts;
  const int count = (span + gap) / (block + gap);
  const int used = count * block + (count - 1) * gap;
  const int offset = lo + (span - used) / 2;
  for (int i = 0; i < count; ++i) starts.push_back(offset + i * (block + gap));
  return starts;
}

}  // namespace

Layout generate_layout(int width, int height, const ShelfSpec& spec, std::uint64_t seed,
                       std::string name) {
  if (width < 2 || height < 2) throw LayoutValidationError("layout must be at least 2x2");
  std::vector<std::uint8_t> obstacle(static_cast<std::size_t>(width) * height, 0);

  if (spec.shelf_width <= 0) {
    std::vector<Cell> all;
    all.reserve(obstacle.size());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) all.push_back({x, y});
    Layout layout(std::move(name), width, height, std::move(obstacle), all, all);
    validate(layout);
    return layout;
  }

  if (spec.aisle_width < 1 || spec.cross_aisle < 1)
    throw LayoutValidationError("shelf spec leaves no free corridor between shelf blocks");
  if (spec.shelf_length < 1) throw LayoutValidationError("shelf length must be positive");
  if (spec.margin < spec.clearance + 2)
    throw LayoutValidationError("margin too narrow for delivery stations");
  if (spec.aisle_width < 2 * spec.clearance + 1)
    throw LayoutValidationError("aisles too narrow to hold pickup cells at the requested clearance");

  Rng rng(seed);
  const auto xs = block_starts(spec.margin, width - spec.margin, spec.shelf_width, spec.aisle_width);
  const auto ys =
      block_starts(spec.margin, height - spec.margin, spec.shelf_length, spec.cross_aisle);
  std::size_t placed = 0;
  for (int y0 : ys)
    for (int x0 : xs) {
      if (spec.fill < 1.0 && rng.uniform() >= spec.fill) continue;
      ++placed;
      for (int y = y0; y < y0 + spec.shelf_length; ++y)
        for (int x = x0; x < x0 + spec.shelf_width; ++x)
          obstacle[static_cast<std::size_t>(y) * width + x] = 1;
    }
  if (placed == 0) throw LayoutValidationError("shelf spec places no shelf block on this grid");

  Layout bare("bare", width, height, obstacle, {}, {});
  const auto clearance = obstacle_clearance(bare);

  // Pickup cells line the shelf faces at exactly the requested clearance;
  // delivery stations are two columns inside the left and right margins.
  std::vector<Cell> pickup;
  std::vector<Cell> delivery;
  const int left = spec.margin / 2;
  const int right = width - 1 - spec.margin / 2;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Cell c{x, y};
      const int d = clearance[bare.index(c)];
      const bool inside = x >= spec.margin && x < width - spec.margin && y >= spec.margin &&
                          y < height - spec.margin;
      if (inside && d == spec.clearance) pickup.push_back(c);
      if ((x == left || x == right) && y >= spec.margin && y < height - spec.margin &&
          d > spec.clearance)
        delivery.push_back(c);
    }
  Layout layout(std::move(name), width, height, std::move(obstacle), std::move(pickup),
                std::move(delivery));
  validate(layout);
  return layout;
}

Task sample_task(const Layout& layout, Rng& rng, int id, double created_at) {
  const auto pickup = layout.pickup_region();
  const auto delivery = layout.delivery_region();
  if (pickup.empty() || delivery.empty())
    throw std::invalid_argument("cannot sample a task from an empty region");
  if (pickup.size() == 1 && delivery.size() == 1 && pickup[0] == delivery[0])
    throw std::invalid_argument("pickup and delivery regions only share a single cell");
  Task task{id, {}, {}, created_at};
  do {
    task.origin = pickup[rng.below(pickup.size())];
    task.destination = delivery[rng.below(delivery.size())];
  } while (task.origin == task.destination);
  return task;
}

void TaskQueue::push(Task task) {
  if (full()) throw std::logic_error("task queue is full");
  tasks_.push_back(task);
}

Task TaskQueue::take(std::size_t index) {
  if (index >= tasks_.size()) throw std::out_of_range("task index out of range");
  Task t = tasks_[index];
  tasks_.erase(tasks_.begin() + static_cast<std::ptrdiff_t>(index));
  return t;
}

}  // namespace dcmrta
