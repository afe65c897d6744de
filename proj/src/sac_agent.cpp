#include "fedev/sac_agent.hpp"

#include <algorithm>
#include <cmath>

#include "fedev/error.hpp"

namespace fedev {

// ---------------------------------------------------------------------------
// Replay buffer

Batch make_batch(std::span<const Transition* const> items) {
  if (items.empty()) throw Error(ErrorKind::EmptyInput, "empty minibatch");
  const auto n = static_cast<Eigen::Index>(items.size());
  const auto dim = static_cast<Eigen::Index>(items.front()->state.size());
  Batch b;
  b.states.resize(dim, n);
  b.next_states.resize(dim, n);
  b.actions.resize(n);
  b.rewards.resize(n);
  b.done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = *items[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(t.state.size()) != dim ||
        static_cast<Eigen::Index>(t.next_state.size()) != dim) {
      throw Error(ErrorKind::ShapeMismatch, "transition state length");
    }
    b.states.col(i) = Eigen::Map<const Vector>(t.state.data(), dim);
    b.next_states.col(i) = Eigen::Map<const Vector>(t.next_state.data(), dim);
    b.actions(i) = t.action;
    b.rewards(i) = t.reward;
    b.done(i) = t.done ? 1.0 : 0.0;
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorKind::InvalidParam, "replay capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[cursor_] = std::move(t);
  cursor_ = (cursor_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw Error(ErrorKind::IndexOutOfRange, "replay index");
  return items_[(cursor_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(Rng& rng, std::size_t batch_size) const {
  if (batch_size == 0 || items_.size() < batch_size) {
    throw Error(ErrorKind::InsufficientData, "buffer holds " + std::to_string(items_.size()) +
                                                 " transitions, batch needs " +
                                                 std::to_string(batch_size));
  }
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

Batch ReplayBuffer::sample_minibatch(Rng& rng, std::size_t batch_size) const {
  const auto idx = sample_indices(rng, batch_size);
  std::vector<const Transition*> items;
  items.reserve(idx.size());
  for (auto i : idx) items.push_back(&items_[i]);
  return make_batch(items);
}

ReplayBuffer ReplayBuffer::restore(std::size_t capacity, std::vector<Transition> storage,
                                   std::size_t cursor) {
  ReplayBuffer b(capacity);
  if (storage.size() > capacity || (cursor != 0 && cursor >= storage.size())) {
    throw Error(ErrorKind::CorruptPayload, "replay buffer state inconsistent");
  }
  b.items_ = std::move(storage);
  b.cursor_ = cursor;
  return b;
}

// ---------------------------------------------------------------------------
// Models

void SacConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::InvalidParam, "sac.gamma must be in [0,1]");
  if (batch_size < 1) throw Error(ErrorKind::InvalidParam, "sac.batch_size must be >= 1");
  if (!(zeta > 0.0 && zeta < 1.0)) throw Error(ErrorKind::InvalidParam, "sac.zeta must be in (0,1)");
  if (!(init_alpha > 0.0)) throw Error(ErrorKind::InvalidParam, "sac.init_alpha must be > 0");
  if (buffer_capacity < 1) throw Error(ErrorKind::InvalidParam, "sac.buffer_capacity must be >= 1");
  if (policy_hidden.empty()) throw Error(ErrorKind::InvalidParam, "sac.policy_hidden must be nonempty");
  if (!(bounds.lo < bounds.hi)) throw Error(ErrorKind::InvalidParam, "action bounds must satisfy lo < hi");
  for (double lr : {lr_actor, lr_critic, lr_value, lr_alpha}) {
    if (!(lr > 0.0)) throw Error(ErrorKind::InvalidParam, "learning rates must be > 0");
  }
}

namespace {

std::vector<std::size_t> scalar_net_sizes(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return sizes;
}

RowVector row(const Matrix& m) { return m.row(0); }

}  // namespace

AgentModels AgentModels::create(std::size_t state_dim, const SacConfig& config, Rng& rng) {
  AgentModels m;
  m.policy = GaussianPolicy(state_dim, config.policy_hidden, rng);
  const auto q_sizes = scalar_net_sizes(state_dim + 1, config.critic_hidden);
  const auto v_sizes = scalar_net_sizes(state_dim, config.critic_hidden);
  m.q1 = Mlp(q_sizes, Activation::Identity, rng);
  m.q2 = Mlp(q_sizes, Activation::Identity, rng);
  m.v1 = Mlp(v_sizes, Activation::Identity, rng);
  m.v2 = Mlp(v_sizes, Activation::Identity, rng);
  m.v1_target = m.v1;
  m.v2_target = m.v2;
  m.log_alpha = std::log(config.init_alpha);
  return m;
}

AgentOptimizers AgentOptimizers::create(const AgentModels& models) {
  return {AdamState(models.policy.parameter_count()), AdamState(models.q1.parameter_count()),
          AdamState(models.q2.parameter_count()),     AdamState(models.v1.parameter_count()),
          AdamState(models.v2.parameter_count()),     AdamState(1)};
}

// ---------------------------------------------------------------------------
// Losses

Matrix critic_input(const Matrix& states, const RowVector& actions) {
  Matrix sa(states.rows() + 1, states.cols());
  sa.topRows(states.rows()) = states;
  sa.bottomRows(1) = actions;
  return sa;
}

RowVector q_target(const RowVector& rewards, const RowVector& done, const RowVector& v1,
                   const RowVector& v2, double gamma) {
  RowVector out(rewards.size());
  for (Eigen::Index i = 0; i < rewards.size(); ++i) {
    out(i) = done(i) != 0.0 ? rewards(i) : rewards(i) + gamma * std::min(v1(i), v2(i));
  }
  return out;
}

RowVector value_target(const RowVector& q1, const RowVector& q2, double alpha,
                       const RowVector& log_prob) {
  return q1.cwiseMin(q2) - alpha * log_prob;
}

RowVector compute_q_target(const Batch& batch, const AgentModels& models, const SacConfig& config) {
  return q_target(batch.rewards, batch.done, row(models.v1_target.forward(batch.next_states)),
                  row(models.v2_target.forward(batch.next_states)), config.gamma);
}

LossGrad regression_loss_grad(const Mlp& net, const Matrix& input, const RowVector& target) {
  MlpCache cache;
  const RowVector out = row(net.forward(input, cache));
  const RowVector diff = out - target;
  const double n = static_cast<double>(target.size());
  LossGrad lg;
  lg.loss = 0.5 * diff.squaredNorm() / n;
  lg.grad.assign(net.parameter_count(), 0.0);
  net.backward(cache, Matrix(diff / n), lg.grad);
  return lg;
}

RowVector policy_log_probs(const AgentModels& models, const Matrix& states, const RowVector& kappa,
                           const SacConfig& config, RowVector* actions) {
  const PolicyForward fwd = models.policy.forward(states);
  RowVector logp(kappa.size());
  if (actions) actions->resize(kappa.size());
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    const PolicySample s = evaluate_sample(fwd.mu(i), fwd.log_sigma(i), kappa(i), config.bounds, config.squash);
    logp(i) = s.log_prob;
    if (actions) (*actions)(i) = s.action;
  }
  return logp;
}

namespace {

struct ActorPass {
  PolicyForward fwd;
  std::vector<PolicySample> samples;
  MlpCache c1, c2;
  RowVector q1, q2;
  double loss = 0.0;
};

ActorPass actor_forward(const AgentModels& models, const Batch& batch, const RowVector& kappa,
                        const SacConfig& config) {
  ActorPass p;
  p.fwd = models.policy.forward(batch.states);
  const Eigen::Index n = batch.size();
  RowVector actions(n);
  p.samples.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    p.samples[static_cast<std::size_t>(i)] =
        evaluate_sample(p.fwd.mu(i), p.fwd.log_sigma(i), kappa(i), config.bounds, config.squash);
    actions(i) = p.samples[static_cast<std::size_t>(i)].action;
  }
  const Matrix sa = critic_input(batch.states, actions);
  p.q1 = row(models.q1.forward(sa, p.c1));
  p.q2 = row(models.q2.forward(sa, p.c2));
  const double alpha = models.alpha();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sum += alpha * p.samples[static_cast<std::size_t>(i)].log_prob - std::min(p.q1(i), p.q2(i));
  }
  p.loss = sum / static_cast<double>(n);
  return p;
}

}  // namespace

double actor_loss(const AgentModels& models, const Batch& batch, const RowVector& kappa,
                  const SacConfig& config) {
  return actor_forward(models, batch, kappa, config).loss;
}

LossGrad actor_loss_grad(const AgentModels& models, const Batch& batch, const RowVector& kappa,
                         const SacConfig& config) {
  ActorPass p = actor_forward(models, batch, kappa, config);
  const Eigen::Index n = batch.size();
  const double alpha = models.alpha();

  // d(-min_k Q_k)/da per sample, routed through whichever critic is smaller.
  Matrix up1 = Matrix::Zero(1, n);
  Matrix up2 = Matrix::Zero(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    (p.q1(i) <= p.q2(i) ? up1 : up2)(0, i) = -1.0;
  }
  std::vector<double> scratch1(models.q1.parameter_count(), 0.0);
  std::vector<double> scratch2(models.q2.parameter_count(), 0.0);
  const Matrix g1 = models.q1.backward(p.c1, up1, scratch1);
  const Matrix g2 = models.q2.backward(p.c2, up2, scratch2);
  const Eigen::Index a_row = batch.states.rows();

  RowVector d_mu(n);
  RowVector d_log_sigma(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PolicySample& s = p.samples[static_cast<std::size_t>(i)];
    const double d_action = g1(a_row, i) + g2(a_row, i);
    const double d_raw = d_action * s.daction_draw + alpha * s.dlogp_draw;
    const double sigma = std::exp(p.fwd.log_sigma(i));
    d_mu(i) = d_raw * inv_n;
    d_log_sigma(i) = (d_raw * kappa(i) * sigma - alpha) * inv_n;
  }
  LossGrad lg;
  lg.loss = p.loss;
  lg.grad.assign(models.policy.parameter_count(), 0.0);
  models.policy.backward(p.fwd, d_mu, d_log_sigma, lg.grad);
  return lg;
}

std::pair<double, double> alpha_loss_grad(double log_alpha, const RowVector& log_prob,
                                          double target_entropy) {
  const double alpha = std::exp(log_alpha);
  const double mean_gap = (log_prob.array() + target_entropy).mean();
  const double loss = -alpha * mean_gap;
  return {loss, loss};  // d/dlog_alpha of -e^x * c is -e^x * c
}

// ---------------------------------------------------------------------------
// Agent

SacAgent::SacAgent(std::size_t state_dim, SacConfig config, std::uint64_t seed)
    : state_dim_(state_dim),
      config_(std::move(config)),
      rng_(seed),
      models_(AgentModels::create(state_dim_, config_, rng_)),
      optimizers_(AgentOptimizers::create(models_)),
      buffer_(config_.buffer_capacity) {
  config_.validate();
}

SacAgent::SacAgent(AgentModels models, SacConfig config, std::uint64_t seed)
    : state_dim_(models.policy.state_dim()),
      config_(std::move(config)),
      rng_(seed),
      models_(std::move(models)),
      optimizers_(AgentOptimizers::create(models_)),
      buffer_(config_.buffer_capacity) {
  config_.validate();
}

ActionDraw SacAgent::act(std::span<const double> state, bool deterministic) {
  return sample_action(models_.policy, state, rng_, config_.bounds, config_.squash, deterministic);
}

RowVector SacAgent::draw_kappa(Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector k(n);
  for (auto& x : k) x = normal(rng_);
  return k;
}

std::pair<double, double> SacAgent::critic_update(const Batch& batch) {
  const RowVector target = compute_q_target(batch, models_, config_);
  const Matrix sa = critic_input(batch.states, batch.actions);
  auto step = [&](Mlp& net, AdamState& opt) {
    LossGrad lg = regression_loss_grad(net, sa, target);
    std::vector<double> p = net.flat();
    adam_step(p, lg.grad, opt, config_.lr_critic);
    net.set_flat(p);
    return lg.loss;
  };
  const double l1 = step(models_.q1, optimizers_.q1);
  const double l2 = step(models_.q2, optimizers_.q2);
  return {l1, l2};
}

std::pair<double, double> SacAgent::value_update(const Batch& batch) {
  const RowVector kappa = draw_kappa(batch.size());
  RowVector actions;
  const RowVector logp = policy_log_probs(models_, batch.states, kappa, config_, &actions);
  const Matrix sa = critic_input(batch.states, actions);
  const RowVector target = value_target(row(models_.q1.forward(sa)), row(models_.q2.forward(sa)),
                                        models_.alpha(), logp);
  auto step = [&](Mlp& net, AdamState& opt, Mlp& tracked) {
    LossGrad lg = regression_loss_grad(net, batch.states, target);
    std::vector<double> p = net.flat();
    adam_step(p, lg.grad, opt, config_.lr_value);
    net.set_flat(p);
    std::vector<double> t = tracked.flat();
    polyak_update(std::span<double>(t), std::span<const double>(p), config_.zeta);
    tracked.set_flat(t);
    return lg.loss;
  };
  const double l1 = step(models_.v1, optimizers_.v1, models_.v1_target);
  const double l2 = step(models_.v2, optimizers_.v2, models_.v2_target);
  return {l1, l2};
}

double SacAgent::actor_update(const Batch& batch) {
  const RowVector kappa = draw_kappa(batch.size());
  LossGrad lg = actor_loss_grad(models_, batch, kappa, config_);
  std::vector<double> p = models_.policy.flat();
  adam_step(p, lg.grad, optimizers_.policy, config_.lr_actor);
  models_.policy.set_flat(p);
  return lg.loss;
}

double SacAgent::alpha_update(const Batch& batch) {
  const RowVector kappa = draw_kappa(batch.size());
  const RowVector logp = policy_log_probs(models_, batch.states, kappa, config_);
  const auto [loss, grad] = alpha_loss_grad(models_.log_alpha, logp, config_.target_entropy);
  double p[1] = {models_.log_alpha};
  const double g[1] = {grad};
  adam_step(std::span<double>(p), std::span<const double>(g), optimizers_.alpha, config_.lr_alpha);
  models_.log_alpha = p[0];
  return loss;
}

UpdateStats SacAgent::update_step() {
  const Batch batch = buffer_.sample_minibatch(rng_, config_.batch_size);
  UpdateStats s;
  s.alpha_loss = alpha_update(batch);
  s.actor_loss = actor_update(batch);
  const auto [c1, c2] = critic_update(batch);
  const auto [v1, v2] = value_update(batch);
  s.critic_loss = 0.5 * (c1 + c2);
  s.value_loss = 0.5 * (v1 + v2);
  s.alpha = models_.alpha();
  if (!all_finite()) throw Error(ErrorKind::NonFiniteParameter, "SAC update produced a non-finite parameter");
  return s;
}

bool SacAgent::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return std::isfinite(models_.log_alpha) && finite(models_.policy.flat()) &&
         finite(models_.q1.flat()) && finite(models_.q2.flat()) && finite(models_.v1.flat()) &&
         finite(models_.v2.flat()) && finite(models_.v1_target.flat()) &&
         finite(models_.v2_target.flat());
}

}  // namespace fedev
