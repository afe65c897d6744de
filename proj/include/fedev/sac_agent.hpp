#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedev/neural.hpp"

namespace fedev {

struct Transition {
  std::vector<double> state;
  double action = 0.0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

/// Column-per-sample view of a minibatch.
struct Batch {
  Matrix states;
  RowVector actions;
  RowVector rewards;
  Matrix next_states;
  RowVector done;  // 1.0 for terminal transitions

  Eigen::Index size() const noexcept { return actions.size(); }
};

Batch make_batch(std::span<const Transition* const> items);

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  /// i = 0 is the oldest surviving transition.
  const Transition& at(std::size_t i) const;
  /// Uniform with replacement. Throws InsufficientData if size < batch_size.
  std::vector<std::size_t> sample_indices(Rng& rng, std::size_t batch_size) const;
  Batch sample_minibatch(Rng& rng, std::size_t batch_size) const;

  const std::vector<Transition>& storage() const noexcept { return items_; }
  std::size_t cursor() const noexcept { return cursor_; }
  /// Rebuilds a buffer from checkpointed storage.
  static ReplayBuffer restore(std::size_t capacity, std::vector<Transition> storage, std::size_t cursor);

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t cursor_ = 0;  // next slot to overwrite once full
};

struct SacConfig {
  double gamma = 0.99;
  std::size_t batch_size = 128;
  double lr_actor = 1e-3;
  double lr_critic = 1e-2;
  double lr_value = 1e-2;
  double lr_alpha = 1e-2;
  double zeta = 0.005;
  double target_entropy = -1.0;
  double init_alpha = 1.0;
  /// 0 means one gradient step per environment step of the episode.
  std::size_t updates_per_episode = 0;
  std::size_t buffer_capacity = 100000;
  std::vector<std::size_t> policy_hidden{128, 128, 128, 128};
  std::vector<std::size_t> critic_hidden{128, 128, 128};
  Squash squash = Squash::Clip;
  ActionBounds bounds{-0.2, 0.2};

  void validate() const;
};

/// Policy, twin critics, twin value nets with Polyak-tracked targets, and the
/// log-temperature of one agent.
struct AgentModels {
  GaussianPolicy policy;
  Mlp q1, q2;
  Mlp v1, v2;
  Mlp v1_target, v2_target;
  double log_alpha = 0.0;

  static AgentModels create(std::size_t state_dim, const SacConfig& config, Rng& rng);
  double alpha() const { return std::exp(log_alpha); }
};

struct AgentOptimizers {
  AdamState policy, q1, q2, v1, v2, alpha;

  static AgentOptimizers create(const AgentModels& models);
  bool operator==(const AgentOptimizers&) const = default;
};

/// Stacks states over actions as critic input.
Matrix critic_input(const Matrix& states, const RowVector& actions);

/// r + gamma * (1 - done) * min(v1, v2), elementwise.
RowVector q_target(const RowVector& rewards, const RowVector& done, const RowVector& v1,
                   const RowVector& v2, double gamma);
/// min(q1, q2) - alpha * log_prob, elementwise.
RowVector value_target(const RowVector& q1, const RowVector& q2, double alpha,
                       const RowVector& log_prob);

RowVector compute_q_target(const Batch& batch, const AgentModels& models, const SacConfig& config);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean of 0.5 * (net(input) - target)^2 and its parameter gradient.
LossGrad regression_loss_grad(const Mlp& net, const Matrix& input, const RowVector& target);

/// Mean over the batch of alpha * log pi(a~|s) - min_k Q_k(s, a~), with
/// a~ = f(kappa; s). Gradient w.r.t. the policy parameters only.
LossGrad actor_loss_grad(const AgentModels& models, const Batch& batch, const RowVector& kappa,
                         const SacConfig& config);
double actor_loss(const AgentModels& models, const Batch& batch, const RowVector& kappa,
                  const SacConfig& config);

/// Mean of -alpha * (log pi + target_entropy) and its derivative w.r.t. log_alpha.
std::pair<double, double> alpha_loss_grad(double log_alpha, const RowVector& log_prob,
                                          double target_entropy);

RowVector policy_log_probs(const AgentModels& models, const Matrix& states, const RowVector& kappa,
                           const SacConfig& config, RowVector* actions = nullptr);

struct UpdateStats {
  double critic_loss = 0.0;
  double value_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
};

/// One agent's learner: models, optimizer state, replay buffer and the RNG
/// stream driving exploration, minibatch draws and reparameterization noise.
class SacAgent {
 public:
  SacAgent(std::size_t state_dim, SacConfig config, std::uint64_t seed);
  SacAgent(AgentModels models, SacConfig config, std::uint64_t seed);

  ActionDraw act(std::span<const double> state, bool deterministic);
  void remember(Transition t) { buffer_.push(std::move(t)); }

  std::pair<double, double> critic_update(const Batch& batch);
  std::pair<double, double> value_update(const Batch& batch);
  double actor_update(const Batch& batch);
  double alpha_update(const Batch& batch);

  bool ready() const noexcept { return buffer_.size() >= config_.batch_size; }
  /// Samples a minibatch and runs alpha, actor, critic and value updates in
  /// that order. Throws NonFiniteParameter if anything diverges.
  UpdateStats update_step();

  RowVector draw_kappa(Eigen::Index n);

  std::size_t state_dim() const noexcept { return state_dim_; }
  const SacConfig& config() const noexcept { return config_; }
  AgentModels& models() noexcept { return models_; }
  const AgentModels& models() const noexcept { return models_; }
  AgentOptimizers& optimizers() noexcept { return optimizers_; }
  const AgentOptimizers& optimizers() const noexcept { return optimizers_; }
  ReplayBuffer& buffer() noexcept { return buffer_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  Rng& rng() noexcept { return rng_; }
  const Rng& rng() const noexcept { return rng_; }

  bool all_finite() const;

 private:
  std::size_t state_dim_;
  SacConfig config_;
  Rng rng_;
  AgentModels models_;
  AgentOptimizers optimizers_;
  ReplayBuffer buffer_;
};

}  // namespace fedev
