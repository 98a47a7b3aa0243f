#include "dcmrta/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmrta/checkpoint.hpp"
#include "gtest/gtest.h"

namespace dcmrta::experiment {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Data lines of a CSV written with provenance comments.
std::vector<std::string> data_lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Config small_sweep() {
  return Config::parse(R"(
    layouts = desk@20x20, empty@16x16
    robots = 2, 4
    tasks = 15
    allocators = mpdm
    seeds = 3
  )");
}

TEST(Config, parses_flat_key_values) {
  const Config c = Config::parse("# header\n a = 1 \n\nb=x, y # note\n");
  EXPECT_EQ(c.get("a"), "1");
  EXPECT_EQ(c.get("b"), "x, y");
  EXPECT_FALSE(c.get("c"));
  EXPECT_EQ(c.text(), "a = 1\nb = x, y\n");
}

TEST(Config, rejects_malformed_text) {
  EXPECT_THROW(Config::parse("a 1"), ConfigError);
  EXPECT_THROW(Config::parse("= 1"), ConfigError);
  EXPECT_THROW(Config::parse("a = 1\na = 2"), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, resolution_fills_defaults_and_rejects_unknown_keys) {
  const Config r = resolve(Config::parse("tasks = 7"));
  EXPECT_EQ(r.get("tasks"), "7");
  EXPECT_EQ(r.get("gamma"), "0.99");
  EXPECT_EQ(r.entries().size(), default_config().entries().size());
  EXPECT_THROW(resolve(Config::parse("taks = 7")), ConfigError);
}

TEST(Config, seed_lists) {
  EXPECT_EQ(parse_seed_list("1, 2,5..8"), (std::vector<std::uint64_t>{1, 2, 5, 6, 7, 8}));
  EXPECT_THROW(parse_seed_list("1,1"), ConfigError);
  EXPECT_THROW(parse_seed_list("3..1"), ConfigError);
  EXPECT_THROW(parse_seed_list(""), ConfigError);
  EXPECT_THROW(parse_seed_list("x"), ConfigError);
}

TEST(Config, spec_validation) {
  auto spec_of = [](const std::string& text) { return make_spec(resolve(Config::parse(text))); };
  EXPECT_NO_THROW(spec_of("allocators = mpdm"));
  EXPECT_THROW(spec_of("allocators ="), ConfigError);
  EXPECT_THROW(spec_of("allocators = greedy"), ConfigError);
  EXPECT_THROW(spec_of("allocators = mpdm, mpdm"), ConfigError);
  EXPECT_THROW(spec_of("allocators = dcmrta"), ConfigError);  // no checkpoint
  EXPECT_THROW(spec_of("layouts = /nonexistent/map.txt"), ConfigError);
  EXPECT_THROW(spec_of("tasks = 0"), ConfigError);
  EXPECT_THROW(spec_of("nav_mode = teleport"), ConfigError);
  EXPECT_THROW(spec_of("plan_with_clearance = yes"), ConfigError);
  const auto spec = spec_of("layouts = A@60x40, desk");
  EXPECT_EQ(spec.layouts[0].label, "A@60x40");
  EXPECT_EQ(spec.layouts[0].layout->width(), 60);
  EXPECT_EQ(spec.layouts[0].layout->height(), 40);
  EXPECT_EQ(spec.layouts[1].layout->width(), 20);
}

TEST(Config, discount_outside_unit_interval_is_rejected) {
  EXPECT_THROW(make_train_config(resolve(Config::parse("gamma = 1.5"))), ConfigError);
  EXPECT_THROW(make_train_config(resolve(Config::parse("algorithm = sarsa"))), ConfigError);
  const auto c = make_train_config(resolve(Config::parse("gamma = 0.9\nalgorithm = ppo")));
  EXPECT_EQ(c.gamma, 0.9);
  EXPECT_EQ(c.algorithm, rl::Algorithm::Ppo);
}

TEST(Summary, improvement_columns_follow_baselines) {
  std::vector<CellResult> cells(2);
  cells[0].layout = cells[1].layout = "A";
  cells[0].n_robots = cells[1].n_robots = 10;
  cells[0].allocator = "mpdm";
  cells[0].metrics.ttd_total = 6332;
  cells[1].allocator = "dcmrta";
  cells[1].metrics.ttd_total = 6208;
  const std::vector<std::string> allocators{"mpdm", "dcmrta"};
  const auto rows = summarize(cells, allocators);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(std::trunc(rows[1].improvement.at("mpdm") * 100) / 100, 1.95);
  EXPECT_EQ(rows[0].improvement.at("mpdm"), 0.0);
  std::ostringstream out;
  write_summary_csv(out, rows, allocators);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "layout,n_robots,allocator,runs,mean_ttd,mean_makespan,mean_collisions,imp_vs_mpdm");
}

TEST(FormatDouble, round_trips) {
  for (double x : {0.1, 1.0 / 3.0, 6984.3, 1e-300, 0.0}) {
    const auto s = format_double(x);
    EXPECT_EQ(std::stod(s), x) << s;
  }
  EXPECT_EQ(format_double(14.0), "14");
}

TEST(CmdRun, one_record_per_cell) {
  TempDir dir("dcmrta_run_cardinality");
  std::ostringstream log;
  cmd_run(small_sweep(), {dir.path(), 1}, log);
  const auto results = data_lines(dir.path() / "results.csv");
  ASSERT_EQ(results.size(), 1u + 2 * 2);
  EXPECT_EQ(results[0],
            "layout,n_robots,allocator,nav_mode,seed,ttd_total,makespan,collisions,wall_clock_s");
  EXPECT_TRUE(results[1].starts_with("desk@20x20,2,mpdm,astar,3,")) << results[1];
  EXPECT_EQ(data_lines(dir.path() / "summary.csv").size(), 1u + 4);
  const std::string meta = slurp(dir.path() / "meta.json");
  EXPECT_NE(meta.find("\"code_version\""), std::string::npos);
  EXPECT_NE(meta.find("\"tasks\": \"15\""), std::string::npos);
  EXPECT_NE(slurp(dir.path() / "results.csv").find("# tasks = 15"), std::string::npos);
}

TEST(CmdRun, repeated_runs_are_byte_identical) {
  TempDir a("dcmrta_run_a");
  TempDir b("dcmrta_run_b");
  Config c = small_sweep();
  c.set("allocators", "random,mpdm,rbts");
  c.set("nav_mode", "astar_orca");
  std::ostringstream log;
  cmd_run(c, {a.path(), 1}, log);
  cmd_run(c, {b.path(), 3}, log);
  EXPECT_EQ(slurp(a.path() / "results.csv"), slurp(b.path() / "results.csv"));
  EXPECT_EQ(slurp(a.path() / "summary.csv"), slurp(b.path() / "summary.csv"));
}

TEST(CmdRun, stalled_cell_is_identified) {
  TempDir dir("dcmrta_run_stall");
  Config c = small_sweep();
  c.set("stall_ticks", "2");
  std::ostringstream log;
  try {
    cmd_run(c, {dir.path(), 1}, log);
    FAIL() << "expected a stall";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("cell layout=desk@20x20 n_robots=2 allocator=mpdm seed=3"),
              std::string::npos);
  }
}

TEST(CmdRun, missing_checkpoint_is_an_error) {
  TempDir dir("dcmrta_run_missing_checkpoint");
  Config c = small_sweep();
  c.set("allocators", "mpdm,dcmrta");
  c.set("checkpoint", "/nonexistent/policy.json");
  std::ostringstream log;
  EXPECT_THROW(cmd_run(c, {dir.path(), 1}, log), rl::CheckpointError);
}

TEST(CmdScale, subset_matches_standalone_run_and_records_time) {
  TempDir scale_dir("dcmrta_scale");
  TempDir run_dir("dcmrta_scale_run");
  Config c = Config::parse("layouts = empty@40x40\nnav_mode = direct\ntasks = 40\nallocators = mpdm");
  c.set("robots", "4,10");
  std::ostringstream log;
  cmd_scale(c, {scale_dir.path(), 1}, log);
  c.set("robots", "10");
  cmd_run(c, {run_dir.path(), 1}, log);
  const auto scaled = data_lines(scale_dir.path() / "results.csv");
  const auto single = data_lines(run_dir.path() / "results.csv");
  ASSERT_EQ(scaled.size(), 3u);
  ASSERT_EQ(single.size(), 2u);
  auto without_time = [](const std::string& row) { return row.substr(0, row.rfind(',')); };
  EXPECT_EQ(without_time(scaled[2]), without_time(single[1]));
  EXPECT_GT(std::stod(scaled[2].substr(scaled[2].rfind(',') + 1)), 0.0);
  EXPECT_EQ(single[1].substr(single[1].rfind(',') + 1), "0");
}

TEST(CmdTrain, writes_loadable_checkpoint_and_log) {
  TempDir dir("dcmrta_train_smoke");
  const Config c = Config::parse(R"(
    layouts = desk@20x20
    robots = 2
    tasks = 5
    iterations = 100
    batch_episodes = 2
    parallel_envs = 1
    embed = 8
    validate_every = 50
    validation_episodes = 2
  )");
  std::ostringstream log;
  cmd_train(c, {dir.path(), 1}, log);
  const auto text = slurp(dir.path() / "policy.json");
  const auto cp = rl::load_checkpoint(dir.path() / "policy.json");
  EXPECT_EQ(rl::checkpoint_to_json(cp) + "\n", text);
  ASSERT_TRUE(cp.train_config);
  EXPECT_EQ(cp.train_config->iterations, 100);
  EXPECT_EQ(data_lines(dir.path() / "training_log.csv").size(), 1u + 100);
  EXPECT_NE(slurp(dir.path() / "meta.json").find("best_iteration"), std::string::npos);

  // The trained policy runs as an allocator.
  TempDir run_dir("dcmrta_train_smoke_run");
  Config run = Config::parse("layouts = desk@20x20\nrobots = 2\ntasks = 5\nallocators = mpdm,dcmrta");
  run.set("checkpoint", (dir.path() / "policy.json").string());
  cmd_run(run, {run_dir.path(), 1}, log);
  EXPECT_EQ(data_lines(run_dir.path() / "results.csv").size(), 3u);
}

TEST(CmdTrain, invalid_discount_stops_before_training) {
  TempDir dir("dcmrta_train_bad_gamma");
  std::ostringstream log;
  EXPECT_THROW(cmd_train(Config::parse("gamma = 1.5"), {dir.path(), 1}, log), ConfigError);
  EXPECT_FALSE(fs::exists(dir.path() / "policy.json"));
}

TEST(CmdValidateLayout, reports_each_layout) {
  TempDir dir("dcmrta_validate");
  fs::create_directories(dir.path());
  const fs::path bad = dir.path() / "bad.txt";
  std::ofstream(bad) << "P#D\n.#.\n";
  std::ostringstream log;
  const std::vector<fs::path> files{bad};
  const int invalid = cmd_validate_layout(Config::parse("layouts = desk, empty@8x8"), files,
                                          {dir.path(), 1}, true, log);
  EXPECT_EQ(invalid, 1);
  EXPECT_NE(log.str().find("ok desk 20x20"), std::string::npos);
  EXPECT_NE(log.str().find("ok empty@8x8 8x8 free=64"), std::string::npos);
  EXPECT_NE(log.str().find("invalid layout '" + bad.string() + "'"), std::string::npos);
  const Layout back = load_layout_file(dir.path() / "desk.txt");
  EXPECT_EQ(back.width(), 20);
}

}  // namespace
}  // namespace dcmrta::experiment
