#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcmrta/experiment.hpp"
#include "dcmrta/version.hpp"

namespace ex = dcmrta::experiment;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int jobs = 1;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Overrides the seed list (train: the training seed)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--jobs", c.jobs, "Upper bound on cells run in parallel")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--set", c.set, "key=value override, repeatable");
}

ex::Config user_config(const Common& c, const char* seed_key) {
  ex::Config config = c.config.empty() ? ex::Config{} : ex::Config::load(c.config);
  for (const auto& s : c.set) config.set(std::string_view(s));
  if (c.seed) config.set(seed_key, std::to_string(*c.seed));
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Decentralized multi-robot task allocation experiments");
  app.set_version_flag("--version", std::string(dcmrta::kCodeVersion));
  app.require_subcommand(1);

  Common run_opts, scale_opts, train_opts, layout_opts;
  auto* run = app.add_subcommand("run", "Run every (layout, robots, allocator, seed) cell");
  add_common(run, run_opts);
  auto* scale = app.add_subcommand("scale", "Like run, recording wall-clock time per cell");
  add_common(scale, scale_opts);
  auto* train = app.add_subcommand("train", "Train the allocation policy");
  add_common(train, train_opts);
  auto* validate = app.add_subcommand("validate-layout", "Check layout files or generator settings");
  add_common(validate, layout_opts);
  std::vector<std::string> files;
  bool write = false;
  validate->add_option("files", files, "Layout files")->check(CLI::ExistingFile);
  validate->add_flag("--write", write, "Store each layout as text in the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ex::cmd_run(user_config(run_opts, "seeds"), {run_opts.out, run_opts.jobs}, std::cout);
    } else if (scale->parsed()) {
      ex::cmd_scale(user_config(scale_opts, "seeds"), {scale_opts.out, scale_opts.jobs}, std::cout);
    } else if (train->parsed()) {
      ex::cmd_train(user_config(train_opts, "train_seed"), {train_opts.out, train_opts.jobs},
                    std::cout);
    } else {
      const std::vector<std::filesystem::path> paths(files.begin(), files.end());
      return ex::cmd_validate_layout(user_config(layout_opts, "layout_seed"), paths,
                                     {layout_opts.out, layout_opts.jobs}, write, std::cout) == 0
                 ? 0
                 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
