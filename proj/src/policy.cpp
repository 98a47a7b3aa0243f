#include "dcmrta/policy.hpp"

#include <cmath>

namespace dcmrta::rl {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd xavier(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite feature: ") + what);
  return v;
}

MatrixXd task_inputs(const AllocationState& state, const FeatureScales& s) {
  MatrixXd x(kTaskFeatures, static_cast<Eigen::Index>(state.tasks.size()));
  for (std::size_t i = 0; i < state.tasks.size(); ++i) {
    const auto& t = state.tasks[i];
    const auto c = static_cast<Eigen::Index>(i);
    x(0, c) = t.origin.x / s.position;
    x(1, c) = t.origin.y / s.position;
    x(2, c) = t.destination.x / s.position;
    x(3, c) = t.destination.y / s.position;
    x(4, c) = finite_or_throw(t.pickup_distance, "pickup distance") / s.distance;
    x(5, c) = finite_or_throw(t.task_length, "task length") / s.distance;
  }
  return x;
}

MatrixXd robot_inputs(const AllocationState& state, const FeatureScales& s) {
  MatrixXd y(kRobotFeatures, static_cast<Eigen::Index>(state.robots.size()));
  for (std::size_t j = 0; j < state.robots.size(); ++j) {
    const auto& r = state.robots[j];
    const auto c = static_cast<Eigen::Index>(j);
    y(0, c) = r.position.x / s.position;
    y(1, c) = r.position.y / s.position;
    y(2, c) = finite_or_throw(r.remaining_time, "remaining time") / s.time;
  }
  return y;
}

// Two-layer encoder: tanh hidden layer, linear output. Columns are items.
void encode(const MatrixXd& in, const MatrixXd& w1, const MatrixXd& b1, const MatrixXd& w2,
            const MatrixXd& b2, MatrixXd& hidden, MatrixXd& out) {
  hidden = ((w1 * in).colwise() + b1.col(0)).array().tanh().matrix();
  out = (w2 * hidden).colwise() + b2.col(0);
}

void encode_backward(const MatrixXd& in, const MatrixXd& hidden, const MatrixXd& d_out,
                     const MatrixXd& w2, MatrixXd& gw1, MatrixXd& gb1, MatrixXd& gw2,
                     MatrixXd& gb2) {
  gw2 += d_out * hidden.transpose();
  gb2 += d_out.rowwise().sum();
  const MatrixXd d_pre = ((w2.transpose() * d_out).array() * (1.0 - hidden.array().square())).matrix();
  gw1 += d_pre * in.transpose();
  gb1 += d_pre.rowwise().sum();
}

// Single-query attention pooling over the columns of `items`.
VectorXd attention_weights(const MatrixXd& items, const MatrixXd& query) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(items.rows()));
  return softmax((items.transpose() * query.col(0)) * scale);
}

// Gradient of pooled = items * weights with respect to items and query.
void attention_backward(const MatrixXd& items, const MatrixXd& query, const VectorXd& weights,
                        const VectorXd& d_pooled, MatrixXd& d_items, MatrixXd& g_query) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(items.rows()));
  d_items += d_pooled * weights.transpose();
  const VectorXd d_w = items.transpose() * d_pooled;
  const VectorXd d_score = weights.array() * (d_w.array() - weights.dot(d_w));
  d_items += (query.col(0) * d_score.transpose()) * scale;
  g_query.col(0) += items * d_score * scale;
}

}  // namespace

FeatureScales Normalization::resolve(double layout_diagonal, double travel_speed) const {
  if (kind == Kind::Fixed) return fixed;
  if (!(layout_diagonal > 0.0) || !(travel_speed > 0.0))
    throw std::invalid_argument("normalization needs a positive diagonal and speed");
  return {layout_diagonal, layout_diagonal, layout_diagonal / travel_speed};
}

PolicyParams PolicyParams::initialize(int embed, std::uint64_t seed) {
  if (embed < 8) throw std::invalid_argument("embedding size must be at least 8");
  Rng rng(Rng::mix(seed, 0x1417));
  const int e = embed;
  PolicyParams p;
  p.embed = e;
  p.task_w1 = xavier(e, kTaskFeatures, rng);
  p.task_b1 = MatrixXd::Zero(e, 1);
  p.task_w2 = xavier(e, e, rng);
  p.task_b2 = MatrixXd::Zero(e, 1);
  p.robot_w1 = xavier(e, kRobotFeatures, rng);
  p.robot_b1 = MatrixXd::Zero(e, 1);
  p.robot_w2 = xavier(e, e, rng);
  p.robot_b2 = MatrixXd::Zero(e, 1);
  p.task_query = xavier(e, 1, rng);
  p.robot_query = xavier(e, 1, rng);
  p.head_w1 = xavier(e, 4 * e, rng);
  p.head_b1 = MatrixXd::Zero(e, 1);
  p.head_w2 = xavier(1, e, rng);
  p.value_w1 = xavier(e, 3 * e, rng);
  p.value_b1 = MatrixXd::Zero(e, 1);
  p.value_w2 = xavier(1, e, rng);
  p.value_b2 = MatrixXd::Zero(1, 1);
  return p;
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams z = *this;
  z.for_each([](std::string_view, MatrixXd& m) { m.setZero(); });
  return z;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool PolicyParams::all_finite() const {
  bool ok = true;
  for_each([&](std::string_view, const MatrixXd& m) { ok = ok && m.allFinite(); });
  return ok;
}

VectorXd softmax(const VectorXd& logits) {
  if (logits.size() == 0) return logits;
  const VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

PolicyForward forward(const PolicyParams& params, const AllocationState& state,
                      const FeatureScales& scales) {
  if (state.tasks.empty()) throw std::invalid_argument("policy needs at least one task");
  if (state.selected >= state.robots.size())
    throw std::invalid_argument("selected robot index out of range");
  const Eigen::Index e = params.embed;
  const auto n = static_cast<Eigen::Index>(state.tasks.size());

  PolicyForward f;
  f.selected = state.selected;
  f.task_in = task_inputs(state, scales);
  f.robot_in = robot_inputs(state, scales);
  encode(f.task_in, params.task_w1, params.task_b1, params.task_w2, params.task_b2, f.task_hidden,
         f.task_embed);
  encode(f.robot_in, params.robot_w1, params.robot_b1, params.robot_w2, params.robot_b2,
         f.robot_hidden, f.robot_embed);
  f.task_attention = attention_weights(f.task_embed, params.task_query);
  f.robot_attention = attention_weights(f.robot_embed, params.robot_query);
  f.task_global = f.task_embed * f.task_attention;
  f.robot_global = f.robot_embed * f.robot_attention;
  const VectorXd sel = f.robot_embed.col(static_cast<Eigen::Index>(state.selected));

  f.head_in.resize(4 * e, n);
  f.head_in.topRows(e) = f.task_embed;
  f.head_in.middleRows(e, e) = f.task_global.replicate(1, n);
  f.head_in.middleRows(2 * e, e) = f.robot_global.replicate(1, n);
  f.head_in.bottomRows(e) = sel.replicate(1, n);
  f.head_hidden =
      ((params.head_w1 * f.head_in).colwise() + params.head_b1.col(0)).array().tanh().matrix();
  f.logits = (params.head_w2 * f.head_hidden).transpose();
  if (!f.logits.allFinite()) throw CorruptedPolicy("policy produced non-finite logits");
  f.probs = softmax(f.logits);

  f.value_in.resize(3 * e);
  f.value_in << f.task_global, f.robot_global, sel;
  f.value_hidden = (params.value_w1 * f.value_in + params.value_b1.col(0)).array().tanh().matrix();
  f.value = (params.value_w2 * f.value_hidden)(0, 0) + params.value_b2(0, 0);
  if (!std::isfinite(f.value)) throw CorruptedPolicy("value head produced a non-finite output");
  return f;
}

void backward(const PolicyParams& params, const PolicyForward& f, const VectorXd& d_logits,
              double d_value, PolicyParams& g) {
  const Eigen::Index e = params.embed;
  if (d_logits.size() != f.logits.size())
    throw std::invalid_argument("logit gradient has the wrong length");

  // Value head; its input is treated as a constant.
  if (d_value != 0.0) {
    g.value_w2 += d_value * f.value_hidden.transpose();
    g.value_b2(0, 0) += d_value;
    const VectorXd d_pre = (params.value_w2.transpose() * d_value).array() *
                           (1.0 - f.value_hidden.array().square());
    g.value_w1 += d_pre * f.value_in.transpose();
    g.value_b1.col(0) += d_pre;
  }

  // Scoring head.
  g.head_w2 += (f.head_hidden * d_logits).transpose();
  const MatrixXd d_pre = ((params.head_w2.transpose() * d_logits.transpose()).array() *
                          (1.0 - f.head_hidden.array().square()))
                             .matrix();
  g.head_w1 += d_pre * f.head_in.transpose();
  g.head_b1 += d_pre.rowwise().sum();
  const MatrixXd d_in = params.head_w1.transpose() * d_pre;

  MatrixXd d_task = d_in.topRows(e);
  const VectorXd d_task_global = d_in.middleRows(e, e).rowwise().sum();
  const VectorXd d_robot_global = d_in.middleRows(2 * e, e).rowwise().sum();
  const VectorXd d_sel = d_in.bottomRows(e).rowwise().sum();

  MatrixXd d_robot = MatrixXd::Zero(e, f.robot_embed.cols());
  attention_backward(f.task_embed, params.task_query, f.task_attention, d_task_global, d_task,
                     g.task_query);
  attention_backward(f.robot_embed, params.robot_query, f.robot_attention, d_robot_global, d_robot,
                     g.robot_query);
  d_robot.col(static_cast<Eigen::Index>(f.selected)) += d_sel;

  encode_backward(f.task_in, f.task_hidden, d_task, params.task_w2, g.task_w1, g.task_b1, g.task_w2,
                  g.task_b2);
  encode_backward(f.robot_in, f.robot_hidden, d_robot, params.robot_w2, g.robot_w1, g.robot_b1,
                  g.robot_w2, g.robot_b2);
}

std::vector<double> policy_logits(const PolicyParams& params, const AllocationState& state,
                                  const FeatureScales& scales) {
  const auto f = forward(params, state, scales);
  return {f.logits.data(), f.logits.data() + f.logits.size()};
}

ActionChoice select_action(const VectorXd& logits, SelectMode mode, Rng& rng) {
  if (logits.size() == 0) throw std::invalid_argument("cannot select from an empty queue");
  if (!logits.allFinite()) throw CorruptedPolicy("non-finite logits");
  const double m = logits.maxCoeff();
  const double log_z = m + std::log((logits.array() - m).exp().sum());
  Eigen::Index pick = 0;
  if (mode == SelectMode::Argmax) {
    logits.maxCoeff(&pick);  // first maximum
  } else {
    const VectorXd p = softmax(logits);
    double u = rng.uniform();
    pick = p.size() - 1;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (u < p[i]) {
        pick = i;
        break;
      }
      u -= p[i];
    }
  }
  return {static_cast<std::size_t>(pick), logits[pick] - log_z};
}

ActionChoice select_action(const PolicyParams& params, const AllocationState& state,
                           const FeatureScales& scales, SelectMode mode, Rng& rng) {
  return select_action(forward(params, state, scales).logits, mode, rng);
}

double compute_reward(double ttd, double scale) {
  if (!(ttd >= 0.0)) throw std::invalid_argument("travel delay must be nonnegative");
  return -ttd * scale;
}

PolicyAllocator::PolicyAllocator(std::shared_ptr<const PolicyParams> params, FeatureScales scales,
                                 SelectMode mode)
    : params_(std::move(params)), scales_(scales), mode_(mode) {
  if (!params_) throw std::invalid_argument("policy allocator needs parameters");
}

std::size_t PolicyAllocator::select(const AllocationState& state) {
  return select_action(*params_, state, scales_, mode_, rng_).index;
}

}  // namespace dcmrta::rl
