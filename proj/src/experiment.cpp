#include "dcmrta/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "dcmrta/checkpoint.hpp"
#include "dcmrta/parallel.hpp"
#include "dcmrta/version.hpp"
#include "json.hpp"

namespace dcmrta::experiment {

namespace {

using json = nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw ConfigError("key '" + key + "': cannot read '" + std::string(text) + "' as a number");
  return value;
}

class Reader {
 public:
  explicit Reader(const Config& resolved) : config_(&resolved) {}

  std::string text(const std::string& key) const {
    const auto v = config_->get(key);
    if (!v) throw ConfigError("missing key '" + key + "'");
    return *v;
  }
  int integer(const std::string& key) const { return parse_number<int>(key, text(key)); }
  long long_integer(const std::string& key) const { return parse_number<long>(key, text(key)); }
  std::uint64_t unsigned_integer(const std::string& key) const {
    return parse_number<std::uint64_t>(key, text(key));
  }
  double real(const std::string& key) const { return parse_number<double>(key, text(key)); }
  bool boolean(const std::string& key) const {
    const auto v = text(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& key) const { return split_list(text(key)); }

 private:
  const Config* config_;
};

bool is_preset(const std::string& name) {
  try {
    shelf_preset(name);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

// "preset", "preset@WxH" (own size) or a layout file path.
LayoutSource make_layout(const std::string& entry, int width, int height, std::uint64_t seed) {
  try {
    std::string preset = entry;
    if (const auto at = entry.find('@'); at != std::string::npos) {
      preset = entry.substr(0, at);
      const std::string size = entry.substr(at + 1);
      const auto x = size.find('x');
      if (x == std::string::npos || !is_preset(preset))
        throw ConfigError("layout '" + entry + "': expected preset@WIDTHxHEIGHT");
      width = parse_number<int>("layouts", size.substr(0, x));
      height = parse_number<int>("layouts", size.substr(x + 1));
    }
    if (is_preset(preset))
      return {entry, std::make_shared<const Layout>(
                         generate_layout(width, height, shelf_preset(preset), seed, entry))};
    const std::filesystem::path path(entry);
    return {path.stem().string(), std::make_shared<const Layout>(load_layout_file(path))};
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("layout '" + entry + "': " + e.what());
  }
}

std::vector<LayoutSource> make_layouts(const Reader& r) {
  std::vector<LayoutSource> out;
  for (const auto& entry : r.list("layouts"))
    out.push_back(make_layout(entry, r.integer("layout_width"), r.integer("layout_height"),
                              r.unsigned_integer("layout_seed")));
  if (out.empty()) throw ConfigError("key 'layouts' is empty");
  std::set<std::string> labels;
  for (const auto& l : out)
    if (!labels.insert(l.label).second) throw ConfigError("layout label '" + l.label + "' repeats");
  return out;
}

const std::set<std::string, std::less<>> kAllocators{"random", "mpdm", "rbts", "dcmrta"};

std::string cell_name(const CellResult& c) {
  return "cell layout=" + c.layout + " n_robots=" + std::to_string(c.n_robots) +
         " allocator=" + c.allocator + " seed=" + std::to_string(c.seed);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json config_json(const Config& resolved) {
  json out = json::object();
  for (const auto& [k, v] : resolved.entries()) out[k] = v;
  return out;
}

void write_meta(const std::filesystem::path& dir, std::string_view command,
                const Config& resolved, json extra) {
  json meta = {{"code_version", kCodeVersion}, {"command", command}, {"config", config_json(resolved)}};
  for (auto& [k, v] : extra.items()) meta[k] = v;
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

std::string padded(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void print_summary(std::ostream& log, std::span<const SummaryRow> rows) {
  for (const auto& row : rows) {
    std::ostringstream line;
    line << padded(row.layout, 8) << " M=" << padded(std::to_string(row.n_robots), 6)
         << padded(row.allocator, 8) << " ttd=" << format_double(row.mean_ttd)
         << " makespan=" << format_double(row.mean_makespan)
         << " collisions=" << format_double(row.mean_collisions);
    for (const auto& [b, imp] : row.improvement)
      if (b != row.allocator) line << " imp_vs_" << b << "=" << format_double(imp) << "%";
    log << line.str() << "\n";
  }
}

void sweep(const Config& resolved, std::string_view command, const CommandOptions& options,
           std::ostream& log) {
  const ExperimentSpec spec = make_spec(resolved);
  std::shared_ptr<const rl::PolicyParams> policy;
  if (std::ranges::find(spec.allocators, "dcmrta") != spec.allocators.end())
    policy = std::make_shared<const rl::PolicyParams>(rl::load_checkpoint(spec.checkpoint).params);
  const auto cells = run_cells(spec, policy, options.jobs);
  const auto rows = summarize(cells, spec.allocators);

  std::filesystem::create_directories(options.out);
  std::ostringstream results;
  write_provenance(results, resolved);
  write_results_csv(results, cells);
  write_file(options.out / "results.csv", results.str());
  std::ostringstream summary;
  write_provenance(summary, resolved);
  write_summary_csv(summary, rows, spec.allocators);
  write_file(options.out / "summary.csv", summary.str());
  write_meta(options.out, command, resolved,
             {{"cells", cells.size()}, {"files", {"results.csv", "summary.csv"}}});
  print_summary(log, rows);
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config config;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (config.entries_.contains(key)) throw ConfigError(where + ": key '" + key + "' repeats");
    config.entries_[key] = std::string(trim(line.substr(eq + 1)));
  }
  return config;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void Config::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty())
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Config::text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

const Config& default_config() {
  static const Config defaults = Config::parse(R"(
    layouts = desk
    layout_width = 20
    layout_height = 20
    layout_seed = 1
    robots = 10
    tasks = 500
    queue_len = 10
    allocators = random,mpdm,rbts
    nav_mode = astar
    seeds = 1
    checkpoint =
    record_wall_clock = false
    dt = 0.25
    radius = 1.5
    v_max = 2
    nominal_speed = 1
    arrival_threshold = 0.5
    orca_tau = 2
    orca_tau_obstacle = 1
    sensing_radius = 10
    max_neighbors = 10
    lookahead = 2
    stall_ticks = 100000
    plan_with_clearance = true
    rbts_exclude_selected = false
    rbts_reverse_order = false
    gamma = 0.99
    iterations = 100
    batch_episodes = 32
    parallel_envs = 5
    learning_rate = 0.001
    entropy_coef = 0.01
    value_coef = 0.5
    grad_clip = 1
    embed = 64
    train_seed = 1
    algorithm = reinforce
    ppo_epochs = 4
    ppo_clip = 0.2
    reward_mode = measured
    validate_every = 5
    validation_episodes = 8
    collapse_fraction = 0.95
  )");
  return defaults;
}

Config resolve(const Config& user) {
  Config out = default_config();
  for (const auto& [k, v] : user.entries()) {
    if (!out.get(k)) throw ConfigError("unknown config key '" + k + "'");
    out.set(k, v);
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      seeds.push_back(parse_number<std::uint64_t>("seeds", item));
      continue;
    }
    const auto lo = parse_number<std::uint64_t>("seeds", trim(std::string_view(item).substr(0, dots)));
    const auto hi = parse_number<std::uint64_t>("seeds", trim(std::string_view(item).substr(dots + 2)));
    if (hi < lo) throw ConfigError("key 'seeds': empty range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("key 'seeds' is empty");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw ConfigError("key 'seeds' lists a seed twice");
  return seeds;
}

ExperimentSpec make_spec(const Config& resolved) {
  const Reader r(resolved);
  ExperimentSpec spec;
  spec.layouts = make_layouts(r);
  for (const auto& m : r.list("robots")) spec.robots.push_back(parse_number<int>("robots", m));
  if (spec.robots.empty()) throw ConfigError("key 'robots' is empty");
  spec.allocators = r.list("allocators");
  if (spec.allocators.empty()) throw ConfigError("key 'allocators' is empty");
  for (const auto& a : spec.allocators) {
    if (!kAllocators.contains(a)) throw ConfigError("unknown allocator '" + a + "'");
    if (std::ranges::count(spec.allocators, a) > 1)
      throw ConfigError("allocator '" + a + "' listed twice");
  }
  spec.seeds = parse_seed_list(r.text("seeds"));
  spec.checkpoint = r.text("checkpoint");
  if (spec.checkpoint.empty() && std::ranges::count(spec.allocators, "dcmrta") > 0)
    throw ConfigError("allocator 'dcmrta' needs a checkpoint");
  spec.record_wall_clock = r.boolean("record_wall_clock");
  spec.rbts.exclude_selected = r.boolean("rbts_exclude_selected");
  spec.rbts.reverse_order = r.boolean("rbts_reverse_order");

  SimConfig& s = spec.sim;
  s.total_tasks = r.integer("tasks");
  s.queue_len = r.integer("queue_len");
  s.dt = r.real("dt");
  s.radius = r.real("radius");
  s.v_max = r.real("v_max");
  s.nominal_speed = r.real("nominal_speed");
  s.arrival_threshold = r.real("arrival_threshold");
  s.orca_tau = r.real("orca_tau");
  s.orca_tau_obstacle = r.real("orca_tau_obstacle");
  s.sensing_radius = r.real("sensing_radius");
  s.max_neighbors = r.integer("max_neighbors");
  s.lookahead = r.real("lookahead");
  s.stall_ticks = r.long_integer("stall_ticks");
  s.plan_with_clearance = r.boolean("plan_with_clearance");
  try {
    s.nav_mode = parse_nav_mode(r.text("nav_mode"));
    for (const auto& l : spec.layouts)
      for (int m : spec.robots) {
        SimConfig cell = s;
        cell.layout = l.layout;
        cell.n_robots = m;
        cell.validate();
      }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

rl::TrainConfig make_train_config(const Config& resolved) {
  const Reader r(resolved);
  rl::TrainConfig c;
  c.gamma = r.real("gamma");
  c.iterations = r.integer("iterations");
  c.batch_episodes = r.integer("batch_episodes");
  c.parallel_envs = r.integer("parallel_envs");
  c.learning_rate = r.real("learning_rate");
  c.entropy_coef = r.real("entropy_coef");
  c.value_coef = r.real("value_coef");
  c.grad_clip = r.real("grad_clip");
  c.embed = r.integer("embed");
  c.seed = r.unsigned_integer("train_seed");
  c.ppo_epochs = r.integer("ppo_epochs");
  c.ppo_clip = r.real("ppo_clip");
  c.validate_every = r.integer("validate_every");
  c.validation_episodes = r.integer("validation_episodes");
  c.collapse_fraction = r.real("collapse_fraction");
  try {
    c.algorithm = rl::parse_algorithm(r.text("algorithm"));
    c.reward_mode = rl::parse_reward_mode(r.text("reward_mode"));
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::vector<CellResult> run_cells(const ExperimentSpec& spec,
                                  std::shared_ptr<const rl::PolicyParams> policy, int jobs) {
  std::vector<CellResult> cells;
  std::vector<SimConfig> configs;
  for (const auto& l : spec.layouts)
    for (int m : spec.robots)
      for (const auto& a : spec.allocators)
        for (auto seed : spec.seeds) {
          SimConfig c = spec.sim;
          c.layout = l.layout;
          c.n_robots = m;
          c.seed = seed;
          configs.push_back(c);
          cells.push_back({l.label, m, a, c.nav_mode, seed, {}, 0.0});
        }
  parallel_for(jobs, static_cast<int>(cells.size()), [&](int, int i) {
    auto& cell = cells[static_cast<std::size_t>(i)];
    const auto& config = configs[static_cast<std::size_t>(i)];
    auto allocator = rl::make_allocator(cell.allocator, policy, config, spec.rbts);
    const auto start = std::chrono::steady_clock::now();
    try {
      cell.metrics = run(config, *allocator);
    } catch (const SimulationStalled& e) {
      throw std::runtime_error(cell_name(cell) + ": " + e.what());
    }
    if (spec.record_wall_clock)
      cell.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return cells;
}

std::vector<SummaryRow> summarize(std::span<const CellResult> cells,
                                  std::span<const std::string> allocators) {
  std::vector<SummaryRow> rows;
  auto find = [&](const std::string& layout, int m, const std::string& a) -> SummaryRow* {
    for (auto& row : rows)
      if (row.layout == layout && row.n_robots == m && row.allocator == a) return &row;
    return nullptr;
  };
  for (const auto& c : cells) {
    SummaryRow* row = find(c.layout, c.n_robots, c.allocator);
    if (!row) {
      rows.push_back({c.layout, c.n_robots, c.allocator, 0, 0.0, 0.0, 0.0, {}});
      row = &rows.back();
    }
    ++row->runs;
    row->mean_ttd += c.metrics.ttd_total;
    row->mean_makespan += c.metrics.makespan;
    row->mean_collisions += static_cast<double>(c.metrics.collisions);
  }
  for (auto& row : rows) {
    const auto n = static_cast<double>(row.runs);
    row.mean_ttd /= n;
    row.mean_makespan /= n;
    row.mean_collisions /= n;
  }
  for (auto& row : rows)
    for (const auto& b : allocators) {
      if (b == "dcmrta") continue;
      if (const SummaryRow* base = find(row.layout, row.n_robots, b))
        row.improvement[b] = rl::improvement_percent(base->mean_ttd, row.mean_ttd);
    }
  return rows;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

void write_provenance(std::ostream& out, const Config& resolved) {
  out << "# dcmrta " << kCodeVersion << "\n";
  for (const auto& [k, v] : resolved.entries()) out << "# " << k << " = " << v << "\n";
}

void write_results_csv(std::ostream& out, std::span<const CellResult> cells) {
  out << "layout,n_robots,allocator,nav_mode,seed,ttd_total,makespan,collisions,wall_clock_s\n";
  for (const auto& c : cells)
    out << c.layout << ',' << c.n_robots << ',' << c.allocator << ',' << to_string(c.nav_mode) << ','
        << c.seed << ',' << format_double(c.metrics.ttd_total) << ','
        << format_double(c.metrics.makespan) << ',' << c.metrics.collisions << ','
        << format_double(c.wall_clock_s) << '\n';
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows,
                       std::span<const std::string> allocators) {
  std::vector<std::string> baselines;
  for (const auto& a : allocators)
    if (a != "dcmrta") baselines.push_back(a);
  out << "layout,n_robots,allocator,runs,mean_ttd,mean_makespan,mean_collisions";
  for (const auto& b : baselines) out << ",imp_vs_" << b;
  out << '\n';
  for (const auto& r : rows) {
    out << r.layout << ',' << r.n_robots << ',' << r.allocator << ',' << r.runs << ','
        << format_double(r.mean_ttd) << ',' << format_double(r.mean_makespan) << ','
        << format_double(r.mean_collisions);
    for (const auto& b : baselines) {
      const auto it = r.improvement.find(b);
      out << ',' << (it == r.improvement.end() ? "" : format_double(it->second));
    }
    out << '\n';
  }
}

void cmd_run(const Config& user, const CommandOptions& options, std::ostream& log) {
  sweep(resolve(user), "run", options, log);
}

void cmd_scale(const Config& user, const CommandOptions& options, std::ostream& log) {
  Config resolved = resolve(user);
  resolved.set("record_wall_clock", "true");
  sweep(resolved, "scale", options, log);
}

void cmd_train(const Config& user, const CommandOptions& options, std::ostream& log) {
  const Config resolved = resolve(user);
  const ExperimentSpec spec = make_spec(resolved);
  const rl::TrainConfig config = make_train_config(resolved);
  std::vector<SimConfig> scenarios;
  for (const auto& l : spec.layouts)
    for (int m : spec.robots) {
      SimConfig c = spec.sim;
      c.layout = l.layout;
      c.n_robots = m;
      scenarios.push_back(c);
    }
  const rl::SimulatorEnv env(scenarios, config.reward_mode);

  std::filesystem::create_directories(options.out);
  std::vector<rl::TrainLogRow> rows;
  auto write_log = [&] {
    std::ostringstream text;
    write_provenance(text, resolved);
    rl::write_training_log(text, rows);
    write_file(options.out / "training_log.csv", text.str());
  };
  const auto progress = [&](const rl::TrainLogRow& row) {
    rows.push_back(row);
    log << "iteration " << row.iteration << " return " << format_double(row.mean_return)
        << " entropy " << format_double(row.mean_entropy);
    if (!std::isnan(row.validation_ttd)) log << " validation_ttd " << format_double(row.validation_ttd);
    log << "\n";
  };
  rl::TrainResult result;
  try {
    result = rl::train(config, env, progress);
  } catch (const rl::TrainingDiverged&) {
    write_log();
    throw;
  }
  write_log();
  rl::save_checkpoint(options.out / "policy.json", {result.best, config});
  rl::save_checkpoint(options.out / "policy_last.json", {result.last, config});
  write_meta(options.out, "train", resolved,
             {{"best_iteration", result.best_iteration},
              {"best_validation_ttd", result.best_validation_ttd},
              {"files", {"policy.json", "policy_last.json", "training_log.csv"}}});
  log << "best iteration " << result.best_iteration << " validation_ttd "
      << format_double(result.best_validation_ttd) << "\n";
}

int cmd_validate_layout(const Config& user, std::span<const std::filesystem::path> files,
                        const CommandOptions& options, bool write, std::ostream& log) {
  const Config resolved = resolve(user);
  const Reader r(resolved);
  std::vector<std::string> entries;
  if (files.empty() || user.get("layouts")) entries = r.list("layouts");
  for (const auto& f : files) entries.push_back(f.string());
  if (write) std::filesystem::create_directories(options.out);
  int invalid = 0;
  for (const auto& entry : entries) {
    try {
      const auto l = make_layout(entry, r.integer("layout_width"), r.integer("layout_height"),
                                 r.unsigned_integer("layout_seed"));
      log << "ok " << l.label << " " << l.layout->width() << "x" << l.layout->height()
          << " free=" << l.layout->free_count() << " pickup=" << l.layout->pickup_region().size()
          << " delivery=" << l.layout->delivery_region().size() << "\n";
      if (write) write_file(options.out / (l.label + ".txt"), to_text(*l.layout));
    } catch (const ConfigError& e) {
      ++invalid;
      log << "invalid " << e.what() << "\n";
    }
  }
  return invalid;
}

}  // namespace dcmrta::experiment
