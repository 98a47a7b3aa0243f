#include "dcmrta/allocation.hpp"

#include <algorithm>
#include <stdexcept>

namespace dcmrta {

AllocationState build_state(std::span<const RobotFeature> robots, std::span<const Task> tasks,
                            std::size_t selected, NavDistance& distances) {
  if (selected >= robots.size()) throw std::logic_error("selected robot index out of range");
  if (robots[selected].remaining_time != 0.0)
    throw std::logic_error("selected robot is not idle");

  AllocationState state;
  state.robots.assign(robots.begin(), robots.end());
  state.selected = selected;
  state.tasks.reserve(tasks.size());
  const Vec2 here = robots[selected].position;
  for (const Task& task : tasks) {
    TaskFeature f;
    f.origin = center(task.origin);
    f.destination = center(task.destination);
    f.pickup_distance = distances.from_point(here, task.origin);
    f.task_length = distances.between(task.origin, task.destination);
    f.nearest_robot_distance = f.pickup_distance;
    for (std::size_t j = 0; j < robots.size(); ++j) {
      if (j == selected) continue;
      const double d = distances.from_point(robots[j].position, task.origin);
      f.nearest_other_robot_distance = std::min(f.nearest_other_robot_distance, d);
      f.nearest_robot_distance = std::min(f.nearest_robot_distance, d);
    }
    state.tasks.push_back(f);
  }
  return state;
}

std::size_t mpdm_select(const AllocationState& state) {
  if (state.tasks.empty()) throw std::logic_error("no tasks to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < state.tasks.size(); ++i)
    if (state.tasks[i].pickup_distance < state.tasks[best].pickup_distance) best = i;
  return best;
}

std::size_t rbts_select(const AllocationState& state, const RbtsOptions& options) {
  if (state.tasks.empty()) throw std::logic_error("no tasks to select from");
  auto regret = [&](const TaskFeature& t) {
    const double closest =
        options.exclude_selected ? t.nearest_other_robot_distance : t.nearest_robot_distance;
    return options.reverse_order ? t.pickup_distance - closest : closest - t.pickup_distance;
  };
  std::size_t best = 0;
  double best_regret = regret(state.tasks[0]);
  for (std::size_t i = 1; i < state.tasks.size(); ++i) {
    const double r = regret(state.tasks[i]);
    if (r > best_regret) {
      best = i;
      best_regret = r;
    }
  }
  return best;
}

}  // namespace dcmrta
