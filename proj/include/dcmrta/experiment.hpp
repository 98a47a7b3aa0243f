#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcmrta/policy.hpp"
#include "dcmrta/simulator.hpp"
#include "dcmrta/training.hpp"

namespace dcmrta::experiment {

/// Unknown key, malformed value or inconsistent settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "key = value" text. '#' starts a comment; blank lines are ignored.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  /// Applies "key=value".
  void set(std::string_view assignment);
  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::optional<std::string> get(const std::string& key) const;

  /// One "key = value" line per entry, sorted by key.
  std::string text() const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Every documented key with its default value.
const Config& default_config();

/// Defaults overlaid with `user`; throws ConfigError on an unknown key.
Config resolve(const Config& user);

struct LayoutSource {
  std::string label;  // preset name or file stem
  std::shared_ptr<const Layout> layout;
};

/// The sweep described by a resolved config: every (layout, robot count,
/// allocator, seed) combination is one cell.
struct ExperimentSpec {
  std::vector<LayoutSource> layouts;
  std::vector<int> robots;
  std::vector<std::string> allocators;
  std::vector<std::uint64_t> seeds;
  SimConfig sim;  // layout, n_robots and seed are set per cell
  RbtsOptions rbts;
  std::string checkpoint;
  bool record_wall_clock = false;
};

/// Builds (or loads) the layouts and validates every field.
ExperimentSpec make_spec(const Config& resolved);
rl::TrainConfig make_train_config(const Config& resolved);
/// "1,2,5..8" style list of distinct integers.
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct CellResult {
  std::string layout;
  int n_robots = 0;
  std::string allocator;
  NavMode nav_mode = NavMode::AStar;
  std::uint64_t seed = 0;
  Metrics metrics;
  double wall_clock_s = 0.0;
};

/// Runs every cell with up to `jobs` cells at a time; results come back in
/// cell order (layout, robots, allocator, seed). A stalled cell is reported
/// as a std::runtime_error naming the cell.
std::vector<CellResult> run_cells(const ExperimentSpec& spec,
                                  std::shared_ptr<const rl::PolicyParams> policy, int jobs);

struct SummaryRow {
  std::string layout;
  int n_robots = 0;
  std::string allocator;
  std::size_t runs = 0;
  double mean_ttd = 0.0;
  double mean_makespan = 0.0;
  double mean_collisions = 0.0;
  std::map<std::string, double> improvement;  // baseline allocator -> % TTD improvement
};

/// Baselines are the non-learned allocators present in the sweep.
std::vector<SummaryRow> summarize(std::span<const CellResult> cells,
                                  std::span<const std::string> allocators);

/// Shortest text that reads back as the same double.
std::string format_double(double x);

/// Lines starting with '#' carry the code version and the resolved config.
void write_provenance(std::ostream& out, const Config& resolved);
void write_results_csv(std::ostream& out, std::span<const CellResult> cells);
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows,
                       std::span<const std::string> allocators);

struct CommandOptions {
  std::filesystem::path out = "out";
  int jobs = 1;
};

/// Sweep: results.csv, summary.csv and meta.json in options.out.
void cmd_run(const Config& user, const CommandOptions& options, std::ostream& log);
/// Same as cmd_run with wall-clock timing always recorded.
void cmd_scale(const Config& user, const CommandOptions& options, std::ostream& log);
/// policy.json, training_log.csv and meta.json in options.out. The log is
/// written even when training diverges.
void cmd_train(const Config& user, const CommandOptions& options, std::ostream& log);
/// Loads or generates every configured layout (plus `files`), prints a line per
/// layout and, with `write`, stores each as text in options.out. Returns the
/// number of invalid layouts.
int cmd_validate_layout(const Config& user, std::span<const std::filesystem::path> files,
                        const CommandOptions& options, bool write, std::ostream& log);

}  // namespace dcmrta::experiment
