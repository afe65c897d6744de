#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedev/ev_env.hpp"
#include "fedev/neural.hpp"
#include "fedev/price_data.hpp"
#include "fedev/sac_agent.hpp"

namespace fedev {

struct FedConfig {
  std::size_t n_agents = 3;
  std::size_t episodes = 250;
  std::uint64_t seed = 1;
  bool aggregate_value_nets = false;
  bool aggregate_alpha = false;
  std::size_t sync_every = 1;
  std::size_t workers = 1;

  void validate() const;
};

/// Server-side models. Value nets and temperature are only populated when the
/// corresponding aggregation flag is set.
struct GlobalModels {
  ParamVector policy;
  ParamVector q1;
  ParamVector q2;
  ParamVector v1;
  ParamVector v2;
  double log_alpha = 0.0;

  bool operator==(const GlobalModels&) const = default;
};

struct RoundLog {
  std::size_t episode = 0;  // 1-based
  std::size_t agent = 0;
  double reward = 0.0;  // exactly price + anxiety + departure components
  double price_reward = 0.0;
  double anxiety_reward = 0.0;
  double departure_reward = 0.0;
  double critic_loss = 0.0;
  double value_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  std::size_t steps = 0;
  std::size_t updates = 0;
  double duration_s = 0.0;  // wall clock; excluded from trajectory comparisons

  bool same_trajectory(const RoundLog& other) const noexcept;
};

/// Uniform elementwise mean, accumulated in input order. Computed as
/// x0 + sum(xi - x0) / N so identical inputs reproduce themselves exactly.
ParamVector aggregate(std::span<const ParamVector> params);

struct TrainingSetup {
  EnvConfig env;
  std::vector<UserProfile> profiles;  // agent i uses profiles[i % size]
  SacConfig sac;
  FedConfig fed;
};

/// Midnight positions that leave room for a full session: (segment, index).
struct TrainingDay {
  std::size_t segment = 0;
  std::size_t day_start = 0;
};

std::vector<TrainingDay> training_days(const std::vector<std::shared_ptr<const PriceSeries>>& segments,
                                       std::size_t hours_needed);

/// Everything one agent owns. Raw transitions stay inside this object.
struct AgentWorker {
  std::size_t index = 0;
  UserProfile profile;
  SacAgent agent;
  EvEnv env;
  Rng env_rng;
};

std::uint64_t agent_seed(std::uint64_t global_seed, std::size_t agent_index);

/// Runs Algorithm-style federated SAC: local rollouts, local updates,
/// uniform aggregation of policy and twin critics, broadcast.
class FederatedTrainer {
 public:
  using EpisodeCallback = std::function<void(std::size_t episode, std::span<const RoundLog>)>;

  FederatedTrainer(TrainingSetup setup, std::vector<std::shared_ptr<const PriceSeries>> train_segments);

  /// Runs until `fed.episodes` episodes have completed (or `max_episodes`, if
  /// smaller and nonzero). Resumable: continues from episodes_done().
  void run(std::size_t max_episodes = 0, const EpisodeCallback& on_episode = {});
  /// Runs exactly one episode (phases I-III).
  std::vector<RoundLog> run_episode();

  std::size_t episodes_done() const noexcept { return episodes_done_; }
  const GlobalModels& globals() const noexcept { return globals_; }
  bool broadcast_pending() const noexcept { return broadcast_pending_; }
  const std::vector<RoundLog>& logs() const noexcept { return logs_; }
  const TrainingSetup& setup() const noexcept { return setup_; }
  std::vector<AgentWorker>& workers() noexcept { return workers_; }
  const std::vector<AgentWorker>& workers() const noexcept { return workers_; }

  /// Used by checkpoint restore.
  void restore_progress(std::size_t episodes_done, GlobalModels globals, bool broadcast_pending,
                        std::vector<RoundLog> logs);

  /// Everything aggregation sees from one agent: parameter payloads only.
  struct Upload {
    ParamVector policy, q1, q2, v1, v2;
    double log_alpha = 0.0;
  };
  static Upload upload(const AgentWorker& worker);

 private:
  TrainingSetup setup_;
  std::vector<std::shared_ptr<const PriceSeries>> segments_;
  std::vector<TrainingDay> days_;
  std::vector<AgentWorker> workers_;
  GlobalModels globals_;
  bool broadcast_pending_ = false;
  std::size_t episodes_done_ = 0;
  std::vector<RoundLog> logs_;

  void apply_broadcast(AgentWorker& worker) const;
  RoundLog local_round(AgentWorker& worker, std::size_t episode) const;
  void aggregate_round();
};

/// One worker's Phase I + Phase II: rollout of a freshly sampled session and
/// the local update schedule. Shared by federated and plain SAC training.
RoundLog run_local_round(AgentWorker& worker, std::size_t episode,
                         std::span<const std::shared_ptr<const PriceSeries>> segments,
                         std::span<const TrainingDay> days);

AgentWorker make_worker(const TrainingSetup& setup, std::size_t index,
                        std::shared_ptr<const PriceSeries> initial_prices);

/// Plain single-agent SAC (no server) with the same seeding as agent 0 of a
/// federated run.
struct LocalRun {
  std::vector<RoundLog> logs;
  ParamVector policy;
  ParamVector q1;
  ParamVector q2;
};
LocalRun run_local_sac(const TrainingSetup& setup,
                       std::vector<std::shared_ptr<const PriceSeries>> train_segments);

std::vector<std::shared_ptr<const PriceSeries>> share_segments(const std::vector<PriceSeries>& segments);

void write_round_logs_csv(const std::vector<RoundLog>& logs, std::ostream& out);
void write_round_logs_csv(const std::vector<RoundLog>& logs, const std::string& path);

}  // namespace fedev
