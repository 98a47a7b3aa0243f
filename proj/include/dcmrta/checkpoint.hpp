#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dcmrta/policy.hpp"
#include "dcmrta/training.hpp"

namespace dcmrta::rl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  PolicyParams params;
  std::optional<TrainConfig> train_config;
};

/// JSON text; see docs/checkpoint-format.md. Doubles round-trip exactly.
std::string checkpoint_to_json(const Checkpoint& checkpoint);
/// Throws CheckpointError on a malformed or incompatible document.
Checkpoint checkpoint_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcmrta::rl
