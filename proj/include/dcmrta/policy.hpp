#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcmrta/allocation.hpp"
#include "dcmrta/random.hpp"

namespace dcmrta::rl {

/// Divisors applied to raw features before they enter the network.
struct FeatureScales {
  double position = 1.0;  // units
  double distance = 1.0;  // units
  double time = 1.0;      // seconds
};

/// How feature scales are obtained. PerLayout divides positions and distances
/// by the current layout's diagonal and times by diagonal / travel speed, which
/// lets one policy run on grids of any size. Fixed uses the stored scales as-is.
struct Normalization {
  enum class Kind { PerLayout, Fixed };
  Kind kind = Kind::PerLayout;
  FeatureScales fixed;

  FeatureScales resolve(double layout_diagonal, double travel_speed) const;
};

inline constexpr int kTaskFeatures = 6;   // origin, destination, k, l
inline constexpr int kRobotFeatures = 3;  // position, remaining time

/// Weights of the attention allocation policy plus its value baseline.
///
/// Tasks and robots are embedded by two-layer tanh encoders, pooled into global
/// embeddings by single-query scaled dot-product attention, and every task is
/// scored from [task | global tasks | global robots | selected robot]. The value
/// head reads [global tasks | global robots | selected robot] and does not
/// back-propagate into them.
struct PolicyParams {
  static constexpr std::string_view kFormat = "dcmrta-policy-v1";

  int embed = 64;
  Normalization normalization;

  Eigen::MatrixXd task_w1, task_b1, task_w2, task_b2;
  Eigen::MatrixXd robot_w1, robot_b1, robot_w2, robot_b2;
  Eigen::MatrixXd task_query, robot_query;
  Eigen::MatrixXd head_w1, head_b1, head_w2;
  Eigen::MatrixXd value_w1, value_b1, value_w2, value_b2;

  /// Xavier-uniform weights, zero biases.
  static PolicyParams initialize(int embed, std::uint64_t seed);
  /// Same shapes, all zeros (gradient accumulator).
  PolicyParams zeros_like() const;

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("task_w1", task_w1), fn("task_b1", task_b1), fn("task_w2", task_w2), fn("task_b2", task_b2);
    fn("robot_w1", robot_w1), fn("robot_b1", robot_b1), fn("robot_w2", robot_w2);
    fn("robot_b2", robot_b2);
    fn("task_query", task_query), fn("robot_query", robot_query);
    fn("head_w1", head_w1), fn("head_b1", head_b1), fn("head_w2", head_w2);
    fn("value_w1", value_w1), fn("value_b1", value_b1), fn("value_w2", value_w2);
    fn("value_b2", value_b2);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<PolicyParams*>(this)->for_each(
        [&](std::string_view name, Eigen::MatrixXd& m) { fn(name, std::as_const(m)); });
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Non-finite logits or values: the parameters are corrupted.
class CorruptedPolicy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Activations kept for the backward pass.
struct PolicyForward {
  Eigen::MatrixXd task_in, task_hidden, task_embed;     // columns are tasks
  Eigen::MatrixXd robot_in, robot_hidden, robot_embed;  // columns are robots
  Eigen::VectorXd task_attention, robot_attention;
  Eigen::VectorXd task_global, robot_global;
  std::size_t selected = 0;
  Eigen::MatrixXd head_in, head_hidden;
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  Eigen::VectorXd value_in, value_hidden;
  double value = 0.0;
};

PolicyForward forward(const PolicyParams& params, const AllocationState& state,
                      const FeatureScales& scales);

/// Accumulates into `grads` the gradient of a loss whose partials with respect
/// to the logits and the value output are `d_logits` and `d_value`.
void backward(const PolicyParams& params, const PolicyForward& fwd, const Eigen::VectorXd& d_logits,
              double d_value, PolicyParams& grads);

/// One finite logit per queued task.
std::vector<double> policy_logits(const PolicyParams& params, const AllocationState& state,
                                  const FeatureScales& scales);

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

enum class SelectMode { Sample, Argmax };

struct ActionChoice {
  std::size_t index = 0;
  double log_prob = 0.0;
};

/// Argmax ties resolve to the lowest index.
ActionChoice select_action(const Eigen::VectorXd& logits, SelectMode mode, Rng& rng);
ActionChoice select_action(const PolicyParams& params, const AllocationState& state,
                           const FeatureScales& scales, SelectMode mode, Rng& rng);

/// Coupled reward: the negated travel delay, times an optional scale.
/// Throws std::invalid_argument for a negative delay.
double compute_reward(double ttd, double scale = 1.0);

/// Allocator backed by a policy; "dcmrta" in result tables.
class PolicyAllocator final : public Allocator {
 public:
  PolicyAllocator(std::shared_ptr<const PolicyParams> params, FeatureScales scales,
                  SelectMode mode = SelectMode::Argmax);

  std::string name() const override { return "dcmrta"; }
  void reset(std::uint64_t run_seed) override { rng_ = Rng(Rng::mix(run_seed, 0x9011C7)); }
  std::size_t select(const AllocationState& state) override;

 private:
  std::shared_ptr<const PolicyParams> params_;
  FeatureScales scales_;
  SelectMode mode_;
  Rng rng_;
};

}  // namespace dcmrta::rl
