#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedev/ev_env.hpp"
#include "fedev/federation.hpp"
#include "fedev/price_data.hpp"
#include "fedev/sac_agent.hpp"

namespace fedev {

struct PriceSource {
  std::string csv_path;
  bool synthetic = false;
  SynthParams synth;
};

/// Every tunable of a run. Text form: one `key = value` per line, `#`
/// starts a comment, unknown keys are rejected.
struct RunConfig {
  PriceSource prices;
  std::size_t price_window_n = 24;
  double price_scale = 0.0;  // 0 = mean training price
  BatteryConfig battery;
  RewardConfig reward;
  std::vector<UserProfile> profiles{default_profile(0), default_profile(1), default_profile(2)};
  SacConfig sac;
  FedConfig fed;
  std::string eval_start;  // YYYY-MM-DD; empty = first evaluation day
  std::uint64_t eval_seed = 1;
  std::size_t drive_hours = 1;
  std::string out_dir = "out";

  void validate() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

/// Applies one `key=value` override; throws ConfigError for unknown keys or
/// unparseable values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys(const RunConfig& config);

PriceSeries load_prices(const RunConfig& config);
/// Environment and trainer settings. `price_scale` is the resolved scale.
TrainingSetup build_setup(const RunConfig& config, double price_scale);

}  // namespace fedev
