#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedev/federation.hpp"

namespace fedev {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk image of a training run. Parameter tensors use the standard
/// payload format; the manifest carries the run configuration text.
struct AgentSnapshot {
  ParamVector policy, q1, q2, v1, v2, v1_target, v2_target;
  double log_alpha = 0.0;
  AgentOptimizers optimizers;
  std::size_t buffer_capacity = 0;
  std::size_t buffer_cursor = 0;
  std::vector<Transition> buffer;
  std::string agent_rng;
  std::string env_rng;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  double price_scale = 1.0;
  std::size_t episodes_done = 0;
  bool broadcast_pending = false;
  GlobalModels globals;
  std::vector<AgentSnapshot> agents;
  std::vector<RoundLog> logs;
};

Checkpoint snapshot(const FederatedTrainer& trainer, const std::string& config_text);
/// Copies a snapshot into a trainer built from the same setup. Throws
/// LayoutMismatch if the networks differ in shape.
void restore(FederatedTrainer& trainer, const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedev
