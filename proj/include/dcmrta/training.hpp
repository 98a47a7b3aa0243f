#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcmrta/policy.hpp"
#include "dcmrta/simulator.hpp"

namespace dcmrta::rl {

/// Measured: each decision is rewarded with the delay the robot actually took
/// to reach the pickup. Estimated: with the planner's distance estimate at
/// decision time, which needs no simulation of the outcome.
enum class RewardMode { Measured, Estimated };
RewardMode parse_reward_mode(std::string_view text);
std::string_view to_string(RewardMode mode);

/// Reinforce: policy gradient with a learned value baseline and entropy bonus.
/// Ppo: the same objective under a clipped probability ratio, several epochs per batch.
enum class Algorithm { Reinforce, Ppo };
Algorithm parse_algorithm(std::string_view text);
std::string_view to_string(Algorithm algorithm);

struct TrainConfig {
  double gamma = 0.99;
  int iterations = 100;       // parameter updates
  int batch_episodes = 32;    // episodes per update
  int parallel_envs = 5;      // worker threads, each with its own environment
  double learning_rate = 1e-3;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double grad_clip = 1.0;     // global norm; 0 disables
  int embed = 64;
  std::uint64_t seed = 1;
  Algorithm algorithm = Algorithm::Reinforce;
  int ppo_epochs = 4;
  double ppo_clip = 0.2;
  RewardMode reward_mode = RewardMode::Measured;
  int validate_every = 5;       // iterations between validation passes
  int validation_episodes = 8;  // held-out seeds, greedy policy
  double collapse_fraction = 0.95;

  /// Throws std::invalid_argument on an invalid field.
  void validate() const;
};

/// Layout facts a policy needs to normalize one decision.
struct DecisionContext {
  double layout_diagonal = 1.0;
  double travel_speed = 1.0;
};

struct Step {
  AllocationState state;
  DecisionContext context;
  std::size_t action = 0;
  double log_prob = 0.0;
  double reward = 0.0;  // raw: minus the delay in seconds
};

struct Episode {
  std::vector<Step> steps;  // decisions whose reward is known, in decision order
  double reward_scale = 1.0;
  double ttd_total = 0.0;
};

using Chooser = std::function<ActionChoice(const AllocationState&, const DecisionContext&)>;

/// Source of allocation episodes for training.
class AllocationEnv {
 public:
  virtual ~AllocationEnv() = default;
  virtual std::unique_ptr<AllocationEnv> clone() const = 0;
  /// Deterministic in `seed` for a deterministic chooser.
  virtual Episode rollout(std::uint64_t seed, const Chooser& choose) = 0;
};

/// Episodes are simulator runs of one of the scenarios (picked by seed), each
/// ending after the scenario's total_tasks completions.
class SimulatorEnv final : public AllocationEnv {
 public:
  SimulatorEnv(std::vector<SimConfig> scenarios, RewardMode mode);

  std::unique_ptr<AllocationEnv> clone() const override;
  Episode rollout(std::uint64_t seed, const Chooser& choose) override;

 private:
  std::vector<SimConfig> scenarios_;
  RewardMode mode_;
};

/// Thrown when training diverges: non-finite parameters, or a greedy policy
/// that keeps picking the same queue position.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainLogRow {
  int iteration = 0;
  std::size_t decisions = 0;
  double mean_return = 0.0;  // undiscounted raw reward per episode
  double mean_entropy = 0.0;
  double value_loss = 0.0;
  double validation_ttd = 0.0;  // NaN when not validated this iteration
};

struct TrainResult {
  PolicyParams best;  // lowest validation travel delay
  PolicyParams last;
  double best_validation_ttd = 0.0;
  int best_iteration = 0;
  std::vector<TrainLogRow> log;
};

TrainResult train(const TrainConfig& config, const AllocationEnv& env,
                  const std::function<void(const TrainLogRow&)>& progress = {});

/// Mean travel delay of the greedy policy over `seeds`.
double validation_ttd(const PolicyParams& params, const AllocationEnv& env,
                      std::span<const std::uint64_t> seeds);

void write_training_log(std::ostream& out, std::span<const TrainLogRow> rows);

/// Allocator by table name: "random", "mpdm", "rbts" or "dcmrta" (needs params).
std::unique_ptr<Allocator> make_allocator(std::string_view name,
                                          std::shared_ptr<const PolicyParams> params,
                                          const SimConfig& config, RbtsOptions rbts = {});

struct EvaluationRow {
  std::string allocator;
  std::vector<Metrics> runs;  // one per seed

  double mean_ttd() const;
  double mean_makespan() const;
  double mean_collisions() const;
};

/// Runs every allocator on the same seeds of `base`.
std::vector<EvaluationRow> evaluate(std::shared_ptr<const PolicyParams> params,
                                    const SimConfig& base, std::span<const std::uint64_t> seeds,
                                    std::span<const std::string> allocators);

/// (baseline - ours) / baseline in percent.
double improvement_percent(double baseline, double ours);

}  // namespace dcmrta::rl
