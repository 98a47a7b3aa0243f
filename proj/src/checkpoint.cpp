#include "dcmrta/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "dcmrta/version.hpp"
#include "json.hpp"

namespace dcmrta::rl {

namespace {

using nlohmann::json;

json config_to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"iterations", c.iterations},
          {"batch_episodes", c.batch_episodes},
          {"parallel_envs", c.parallel_envs},
          {"learning_rate", c.learning_rate},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"grad_clip", c.grad_clip},
          {"embed", c.embed},
          {"seed", c.seed},
          {"algorithm", to_string(c.algorithm)},
          {"ppo_epochs", c.ppo_epochs},
          {"ppo_clip", c.ppo_clip},
          {"reward_mode", to_string(c.reward_mode)},
          {"validate_every", c.validate_every},
          {"validation_episodes", c.validation_episodes},
          {"collapse_fraction", c.collapse_fraction}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.iterations = j.at("iterations").get<int>();
  c.batch_episodes = j.at("batch_episodes").get<int>();
  c.parallel_envs = j.at("parallel_envs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.entropy_coef = j.at("entropy_coef").get<double>();
  c.value_coef = j.at("value_coef").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.embed = j.at("embed").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  c.ppo_epochs = j.at("ppo_epochs").get<int>();
  c.ppo_clip = j.at("ppo_clip").get<double>();
  c.reward_mode = parse_reward_mode(j.at("reward_mode").get<std::string>());
  c.validate_every = j.at("validate_every").get<int>();
  c.validation_episodes = j.at("validation_episodes").get<int>();
  c.collapse_fraction = j.at("collapse_fraction").get<double>();
  return c;
}

// Expected shape of every tensor for a given embedding size.
std::pair<int, int> tensor_shape(std::string_view name, int e) {
  static const std::map<std::string_view, std::pair<int, int>> kShapes = {
      {"task_w1", {1, kTaskFeatures}}, {"robot_w1", {1, kRobotFeatures}},
      {"task_w2", {1, -1}},            {"robot_w2", {1, -1}},
      {"head_w1", {1, -4}},            {"value_w1", {1, -3}},
      {"head_w2", {0, -1}},            {"value_w2", {0, -1}},
      {"value_b2", {0, 1}}};
  const auto it = kShapes.find(name);
  if (it == kShapes.end()) return {e, 1};  // biases and queries
  const auto [r, c] = it->second;
  return {r == 0 ? 1 : e, c < 0 ? -c * e : c};
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& cp) {
  const auto& p = cp.params;
  json doc;
  doc["format"] = PolicyParams::kFormat;
  doc["code_version"] = kCodeVersion;
  doc["embed"] = p.embed;
  const bool fixed = p.normalization.kind == Normalization::Kind::Fixed;
  doc["normalization"] = {{"kind", fixed ? "fixed" : "per_layout"},
                          {"position", p.normalization.fixed.position},
                          {"distance", p.normalization.fixed.distance},
                          {"time", p.normalization.fixed.time}};
  doc["reward_scale"] = "travel_speed / layout_diagonal";
  doc["train_config"] = cp.train_config ? config_to_json(*cp.train_config) : json(nullptr);
  json tensors = json::array();
  p.for_each([&](std::string_view name, const Eigen::MatrixXd& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  });
  doc["tensors"] = std::move(tensors);
  return doc.dump(1);
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const auto format = doc.at("format").get<std::string>();
    if (format != PolicyParams::kFormat)
      throw CheckpointError("unsupported checkpoint format '" + format + "'");
    Checkpoint cp;
    auto& p = cp.params;
    p.embed = doc.at("embed").get<int>();
    if (p.embed < 8) throw CheckpointError("embedding size must be at least 8");
    const auto& n = doc.at("normalization");
    const auto kind = n.at("kind").get<std::string>();
    if (kind == "fixed")
      p.normalization.kind = Normalization::Kind::Fixed;
    else if (kind == "per_layout")
      p.normalization.kind = Normalization::Kind::PerLayout;
    else
      throw CheckpointError("unknown normalization kind '" + kind + "'");
    p.normalization.fixed = {n.at("position").get<double>(), n.at("distance").get<double>(),
                             n.at("time").get<double>()};
    if (!doc.at("train_config").is_null()) cp.train_config = config_from_json(doc.at("train_config"));

    std::map<std::string, const json*> by_name;
    for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    std::size_t expected = 0;
    p.for_each([&](std::string_view name, Eigen::MatrixXd& m) {
      ++expected;
      const auto it = by_name.find(std::string(name));
      if (it == by_name.end()) throw CheckpointError("missing tensor '" + std::string(name) + "'");
      const json& t = *it->second;
      const auto [rows, cols] = tensor_shape(name, p.embed);
      if (t.at("rows").get<int>() != rows || t.at("cols").get<int>() != cols)
        throw CheckpointError("tensor '" + std::string(name) + "' has the wrong shape");
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(rows) * cols)
        throw CheckpointError("tensor '" + std::string(name) + "' has the wrong element count");
      m.resize(rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r) * cols + c];
    });
    if (by_name.size() != expected) throw CheckpointError("checkpoint holds unexpected tensors");
    return cp;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(checkpoint) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace dcmrta::rl
