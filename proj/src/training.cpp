#include "dcmrta/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>
#include <unordered_map>

#include "dcmrta/parallel.hpp"

namespace dcmrta::rl {

namespace {

constexpr std::uint64_t kTrainSalt = 0x7EA1;
constexpr std::uint64_t kValidationSalt = 0x7A1D;
constexpr std::size_t kMinCollapseSample = 50;

std::vector<Eigen::MatrixXd*> tensors(PolicyParams& p) {
  std::vector<Eigen::MatrixXd*> out;
  p.for_each([&](std::string_view, Eigen::MatrixXd& m) { out.push_back(&m); });
  return out;
}

class Adam {
 public:
  Adam(const PolicyParams& like, double lr) : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr) {}

  void step(PolicyParams& params, PolicyParams& grads) {
    ++t_;
    auto p = tensors(params);
    auto g = tensors(grads);
    auto m = tensors(m_);
    auto v = tensors(v_);
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      *m[i] = kBeta1 * *m[i] + (1.0 - kBeta1) * *g[i];
      *v[i] = kBeta2 * *v[i] + (1.0 - kBeta2) * g[i]->cwiseAbs2();
      p[i]->array() -= lr_ * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  PolicyParams m_;
  PolicyParams v_;
  double lr_;
  int t_ = 0;
};

struct ValidationStats {
  double mean_ttd = 0.0;
  std::size_t decisions = 0;  // decisions with more than one queued task
  std::size_t top_count = 0;
  std::size_t top_index = 0;
};

ValidationStats run_validation(const PolicyParams& params,
                               std::vector<std::unique_ptr<AllocationEnv>>& envs,
                               std::span<const std::uint64_t> seeds) {
  const int n = static_cast<int>(seeds.size());
  std::vector<double> ttd(seeds.size());
  std::vector<std::map<std::size_t, std::size_t>> picks(seeds.size());
  parallel_for(static_cast<int>(envs.size()), n, [&](int w, int i) {
    Rng unused(0);
    auto& counts = picks[static_cast<std::size_t>(i)];
    const Chooser greedy = [&](const AllocationState& s, const DecisionContext& c) {
      const auto choice = select_action(
          params, s, params.normalization.resolve(c.layout_diagonal, c.travel_speed),
          SelectMode::Argmax, unused);
      if (s.tasks.size() > 1) ++counts[choice.index];
      return choice;
    };
    ttd[static_cast<std::size_t>(i)] =
        envs[static_cast<std::size_t>(w)]->rollout(seeds[static_cast<std::size_t>(i)], greedy).ttd_total;
  });
  ValidationStats stats;
  stats.mean_ttd = std::accumulate(ttd.begin(), ttd.end(), 0.0) / std::max(1, n);
  std::map<std::size_t, std::size_t> total;
  for (const auto& m : picks)
    for (const auto& [index, count] : m) {
      total[index] += count;
      stats.decisions += count;
    }
  for (const auto& [index, count] : total)
    if (count > stats.top_count) {
      stats.top_count = count;
      stats.top_index = index;
    }
  return stats;
}

std::vector<std::uint64_t> validation_seeds(const TrainConfig& config) {
  std::vector<std::uint64_t> seeds;
  const std::uint64_t base = Rng::mix(config.seed, kValidationSalt);
  for (int i = 0; i < config.validation_episodes; ++i)
    seeds.push_back(Rng::mix(base, static_cast<std::uint64_t>(i)));
  return seeds;
}

double global_norm(PolicyParams& grads) {
  double sq = 0.0;
  for (auto* t : tensors(grads)) sq += t->squaredNorm();
  return std::sqrt(sq);
}

struct UpdateStats {
  std::size_t decisions = 0;
  double entropy = 0.0;
  double value_loss = 0.0;
};

UpdateStats update(const TrainConfig& config, PolicyParams& params, Adam& adam,
                   const std::vector<Episode>& batch) {
  std::vector<const Step*> steps;
  std::vector<double> returns;
  for (const auto& ep : batch) {
    std::vector<double> g(ep.steps.size());
    double acc = 0.0;
    for (std::size_t t = ep.steps.size(); t-- > 0;) {
      acc = ep.steps[t].reward * ep.reward_scale + config.gamma * acc;
      g[t] = acc;
    }
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      steps.push_back(&ep.steps[t]);
      returns.push_back(g[t]);
    }
  }
  UpdateStats stats;
  stats.decisions = steps.size();
  if (steps.empty()) return stats;
  const double inv_b = 1.0 / static_cast<double>(steps.size());

  const auto scales_of = [&](const Step& s) {
    return params.normalization.resolve(s.context.layout_diagonal, s.context.travel_speed);
  };
  std::vector<PolicyForward> fwd(steps.size());
  std::vector<double> adv(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    fwd[i] = forward(params, steps[i]->state, scales_of(*steps[i]));
    adv[i] = returns[i] - fwd[i].value;
  }
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) * inv_b;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var * inv_b);
  for (double& a : adv) a = sd > 1e-8 ? (a - mean) / sd : a - mean;

  const int epochs = config.algorithm == Algorithm::Ppo ? config.ppo_epochs : 1;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    PolicyParams grads = params.zeros_like();
    double entropy = 0.0;
    double value_loss = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (epoch > 0) fwd[i] = forward(params, steps[i]->state, scales_of(*steps[i]));
      const auto& f = fwd[i];
      const auto a = static_cast<Eigen::Index>(steps[i]->action);
      const Eigen::VectorXd log_p = (f.probs.array().max(1e-300)).log();
      const double h = -(f.probs.array() * log_p.array()).sum();
      entropy += h;

      double coef = adv[i];
      if (config.algorithm == Algorithm::Ppo) {
        const double ratio = std::exp(log_p[a] - steps[i]->log_prob);
        const bool clipped = (adv[i] >= 0.0 && ratio > 1.0 + config.ppo_clip) ||
                             (adv[i] < 0.0 && ratio < 1.0 - config.ppo_clip);
        coef = clipped ? 0.0 : adv[i] * ratio;
      }
      Eigen::VectorXd d_logits = coef * f.probs;
      d_logits[a] -= coef;
      d_logits += config.entropy_coef * (f.probs.array() * (log_p.array() + h)).matrix();
      d_logits *= inv_b;

      const double err = f.value - returns[i];
      value_loss += 0.5 * err * err;
      backward(params, f, d_logits, config.value_coef * err * inv_b, grads);
    }
    if (config.grad_clip > 0.0) {
      const double norm = global_norm(grads);
      if (!std::isfinite(norm)) throw TrainingDiverged("non-finite gradient");
      if (norm > config.grad_clip)
        for (auto* t : tensors(grads)) *t *= config.grad_clip / norm;
    }
    adam.step(params, grads);
    if (!params.all_finite()) throw TrainingDiverged("parameters became non-finite");
    if (epoch == 0) {
      stats.entropy = entropy * inv_b;
      stats.value_loss = value_loss * inv_b;
    }
  }
  return stats;
}

}  // namespace

RewardMode parse_reward_mode(std::string_view text) {
  if (text == "measured") return RewardMode::Measured;
  if (text == "estimated") return RewardMode::Estimated;
  throw std::invalid_argument("unknown reward mode '" + std::string(text) + "'");
}

std::string_view to_string(RewardMode mode) {
  return mode == RewardMode::Measured ? "measured" : "estimated";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "reinforce") return Algorithm::Reinforce;
  if (text == "ppo") return Algorithm::Ppo;
  throw std::invalid_argument("unknown training algorithm '" + std::string(text) + "'");
}

std::string_view to_string(Algorithm algorithm) {
  return algorithm == Algorithm::Reinforce ? "reinforce" : "ppo";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid training config: " + what);
  };
  if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0, 1)");
  if (iterations < 0) fail("iterations must be nonnegative");
  if (batch_episodes < 1) fail("batch_episodes must be positive");
  if (parallel_envs < 1) fail("parallel_envs must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (entropy_coef < 0.0 || value_coef < 0.0) fail("loss coefficients must be nonnegative");
  if (grad_clip < 0.0) fail("grad_clip must be nonnegative");
  if (embed < 8) fail("embed must be at least 8");
  if (ppo_epochs < 1) fail("ppo_epochs must be positive");
  if (!(ppo_clip > 0.0)) fail("ppo_clip must be positive");
  if (validate_every < 1) fail("validate_every must be positive");
  if (validation_episodes < 1) fail("validation_episodes must be positive");
  if (!(collapse_fraction > 0.0 && collapse_fraction <= 1.0))
    fail("collapse_fraction must lie in (0, 1]");
}

SimulatorEnv::SimulatorEnv(std::vector<SimConfig> scenarios, RewardMode mode)
    : scenarios_(std::move(scenarios)), mode_(mode) {
  if (scenarios_.empty()) throw std::invalid_argument("simulator environment needs a scenario");
  for (const auto& s : scenarios_) s.validate();
}

std::unique_ptr<AllocationEnv> SimulatorEnv::clone() const {
  return std::make_unique<SimulatorEnv>(*this);
}

Episode SimulatorEnv::rollout(std::uint64_t seed, const Chooser& choose) {
  Rng pick(Rng::mix(seed, 0x5CE7));
  SimConfig config = scenarios_[pick.below(scenarios_.size())];
  config.seed = seed;
  const DecisionContext context{config.layout->diagonal(), config.travel_speed()};

  class Hook final : public Allocator {
   public:
    Hook(const Chooser& choose, const DecisionContext& context) : choose_(choose), context_(context) {}
    std::string name() const override { return "training"; }
    std::size_t select(const AllocationState& state) override {
      last = choose_(state, context_);
      return last.index;
    }
    ActionChoice last;

   private:
    const Chooser& choose_;
    const DecisionContext& context_;
  } hook(choose, context);

  std::vector<Step> steps;
  std::vector<double> allocated_at;
  std::vector<std::uint8_t> known;
  std::unordered_map<int, std::size_t> by_task;
  Simulator sim(config, hook, [&](const AllocationRecord& rec) {
    Step step{*rec.state, context, rec.action, hook.last.log_prob, 0.0};
    const bool estimated = mode_ == RewardMode::Estimated;
    if (estimated)
      step.reward = compute_reward(rec.state->tasks[rec.action].pickup_distance / context.travel_speed);
    by_task[rec.task_id] = steps.size();
    steps.push_back(std::move(step));
    allocated_at.push_back(rec.time);
    known.push_back(estimated);
  });
  auto observe = [&](std::span<const SimEvent> events) {
    if (mode_ != RewardMode::Measured) return;
    for (const auto& ev : events) {
      if (ev.kind != SimEvent::Kind::PickupReached) continue;
      const std::size_t i = by_task.at(ev.task);
      steps[i].reward = compute_reward(ev.time - allocated_at[i]);
      known[i] = 1;
    }
  };
  observe(sim.initial_events());
  while (!sim.finished()) observe(sim.tick());

  Episode episode;
  episode.reward_scale = context.travel_speed / context.layout_diagonal;
  episode.ttd_total = sim.metrics().ttd_total;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (known[i]) episode.steps.push_back(std::move(steps[i]));
  return episode;
}

double validation_ttd(const PolicyParams& params, const AllocationEnv& env,
                      std::span<const std::uint64_t> seeds) {
  std::vector<std::unique_ptr<AllocationEnv>> envs;
  envs.push_back(env.clone());
  return run_validation(params, envs, seeds).mean_ttd;
}

TrainResult train(const TrainConfig& config, const AllocationEnv& env,
                  const std::function<void(const TrainLogRow&)>& progress) {
  config.validate();
  PolicyParams params = PolicyParams::initialize(config.embed, config.seed);
  Adam adam(params, config.learning_rate);
  const auto held_out = validation_seeds(config);
  std::vector<std::unique_ptr<AllocationEnv>> envs;
  for (int w = 0; w < std::min(config.parallel_envs, config.batch_episodes); ++w)
    envs.push_back(env.clone());

  TrainResult result;
  result.best = params;
  result.best_validation_ttd = run_validation(params, envs, held_out).mean_ttd;
  result.best_iteration = 0;

  const std::uint64_t train_base = Rng::mix(config.seed, kTrainSalt);
  for (int it = 1; it <= config.iterations; ++it) {
    std::vector<Episode> batch(static_cast<std::size_t>(config.batch_episodes));
    parallel_for(static_cast<int>(envs.size()), config.batch_episodes, [&](int w, int e) {
      const std::uint64_t seed = Rng::mix(
          train_base, static_cast<std::uint64_t>(it - 1) * config.batch_episodes + e);
      Rng rng(Rng::mix(seed, 0xAC7));
      const Chooser sample = [&](const AllocationState& s, const DecisionContext& c) {
        return select_action(params, s,
                             params.normalization.resolve(c.layout_diagonal, c.travel_speed),
                             SelectMode::Sample, rng);
      };
      batch[static_cast<std::size_t>(e)] = envs[static_cast<std::size_t>(w)]->rollout(seed, sample);
    });

    TrainLogRow row;
    row.iteration = it;
    for (const auto& ep : batch) {
      double total = 0.0;
      for (const auto& s : ep.steps) total += s.reward;
      row.mean_return += total / static_cast<double>(batch.size());
    }
    const auto stats = update(config, params, adam, batch);
    row.decisions = stats.decisions;
    row.mean_entropy = stats.entropy;
    row.value_loss = stats.value_loss;
    row.validation_ttd = std::numeric_limits<double>::quiet_NaN();

    if (it % config.validate_every == 0 || it == config.iterations) {
      const auto v = run_validation(params, envs, held_out);
      row.validation_ttd = v.mean_ttd;
      if (v.decisions >= kMinCollapseSample &&
          static_cast<double>(v.top_count) > config.collapse_fraction * static_cast<double>(v.decisions))
        throw TrainingDiverged("greedy policy collapsed onto queue position " +
                               std::to_string(v.top_index) + " (" + std::to_string(v.top_count) +
                               " of " + std::to_string(v.decisions) + " decisions) at iteration " +
                               std::to_string(it) + ", entropy " + std::to_string(row.mean_entropy));
      if (v.mean_ttd < result.best_validation_ttd) {
        result.best_validation_ttd = v.mean_ttd;
        result.best_iteration = it;
        result.best = params;
      }
    }
    result.log.push_back(row);
    if (progress) progress(row);
  }
  result.last = params;
  return result;
}

void write_training_log(std::ostream& out, std::span<const TrainLogRow> rows) {
  const auto old = out.precision(12);
  out << "iteration,decisions,mean_return,mean_entropy,value_loss,validation_ttd\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << r.decisions << ',' << r.mean_return << ',' << r.mean_entropy << ','
        << r.value_loss << ',' << r.validation_ttd << '\n';
  out.precision(old);
}

std::unique_ptr<Allocator> make_allocator(std::string_view name,
                                          std::shared_ptr<const PolicyParams> params,
                                          const SimConfig& config, RbtsOptions rbts) {
  if (name == "random") return std::make_unique<RandomAllocator>();
  if (name == "mpdm") return std::make_unique<MpdmAllocator>();
  if (name == "rbts") return std::make_unique<RbtsAllocator>(rbts);
  if (name == "dcmrta") {
    if (!params) throw std::invalid_argument("allocator 'dcmrta' needs a trained policy");
    const double diag = config.layout->diagonal();
    const double speed = config.travel_speed();
    const auto& norm = params->normalization;
    if (norm.kind == Normalization::Kind::Fixed) {
      const auto own = Normalization{}.resolve(diag, speed);
      const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::abs(b); };
      if (!close(norm.fixed.position, own.position) || !close(norm.fixed.distance, own.distance) ||
          !close(norm.fixed.time, own.time))
        throw std::invalid_argument("policy normalization does not match the layout and speed");
    }
    return std::make_unique<PolicyAllocator>(params, norm.resolve(diag, speed));
  }
  throw std::invalid_argument("unknown allocator '" + std::string(name) + "'");
}

namespace {

double mean_of(const std::vector<Metrics>& runs, double (*field)(const Metrics&)) {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& m : runs) total += field(m);
  return total / static_cast<double>(runs.size());
}

}  // namespace

double EvaluationRow::mean_ttd() const {
  return mean_of(runs, [](const Metrics& m) { return m.ttd_total; });
}
double EvaluationRow::mean_makespan() const {
  return mean_of(runs, [](const Metrics& m) { return m.makespan; });
}
double EvaluationRow::mean_collisions() const {
  return mean_of(runs, [](const Metrics& m) { return static_cast<double>(m.collisions); });
}

std::vector<EvaluationRow> evaluate(std::shared_ptr<const PolicyParams> params,
                                    const SimConfig& base, std::span<const std::uint64_t> seeds,
                                    std::span<const std::string> allocators) {
  std::vector<EvaluationRow> rows;
  for (const auto& name : allocators) {
    EvaluationRow row{name, {}};
    for (std::uint64_t seed : seeds) {
      SimConfig config = base;
      config.seed = seed;
      auto allocator = make_allocator(name, params, config);
      row.runs.push_back(run(config, *allocator));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double improvement_percent(double baseline, double ours) {
  if (!(baseline > 0.0)) throw std::invalid_argument("baseline must be positive");
  return (baseline - ours) / baseline * 100.0;
}

}  // namespace dcmrta::rl
