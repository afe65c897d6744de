#include "fedev/federation.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "fedev/error.hpp"

namespace fedev {

void FedConfig::validate() const {
  if (n_agents < 1) throw Error(ErrorKind::InvalidParam, "fed.n_agents must be >= 1");
  if (episodes < 1) throw Error(ErrorKind::InvalidParam, "fed.episodes must be >= 1");
  if (sync_every < 1) throw Error(ErrorKind::InvalidParam, "fed.sync_every must be >= 1");
  if (workers < 1) throw Error(ErrorKind::InvalidParam, "fed.workers must be >= 1");
}

bool RoundLog::same_trajectory(const RoundLog& o) const noexcept {
  return episode == o.episode && agent == o.agent && reward == o.reward &&
         price_reward == o.price_reward && anxiety_reward == o.anxiety_reward &&
         departure_reward == o.departure_reward && critic_loss == o.critic_loss &&
         value_loss == o.value_loss && actor_loss == o.actor_loss && alpha == o.alpha &&
         steps == o.steps && updates == o.updates;
}

ParamVector aggregate(std::span<const ParamVector> params) {
  if (params.empty()) throw Error(ErrorKind::EmptyInput, "aggregate needs at least one model");
  const ParamVector& first = params.front();
  for (const auto& p : params) {
    if (!p.same_layout(first)) throw Error(ErrorKind::LayoutMismatch, "aggregate: model layouts differ");
  }
  ParamVector out = first;
  if (params.size() == 1) return out;
  const double n = static_cast<double>(params.size());
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    const double base = first.values[j];
    double acc = 0.0;
    for (std::size_t i = 1; i < params.size(); ++i) acc += params[i].values[j] - base;
    out.values[j] = base + acc / n;
  }
  return out;
}

std::vector<TrainingDay> training_days(const std::vector<std::shared_ptr<const PriceSeries>>& segments,
                                       std::size_t hours_needed) {
  std::vector<TrainingDay> days;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const PriceSeries& seg = *segments[s];
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (hour_of_day(seg.timestamp(i)) == 0 && i + hours_needed <= seg.size()) days.push_back({s, i});
    }
  }
  return days;
}

std::uint64_t agent_seed(std::uint64_t global_seed, std::size_t agent_index) {
  return global_seed * 1000000ULL + agent_index;
}

std::vector<std::shared_ptr<const PriceSeries>> share_segments(const std::vector<PriceSeries>& segments) {
  std::vector<std::shared_ptr<const PriceSeries>> out;
  for (const auto& s : segments) out.push_back(std::make_shared<const PriceSeries>(s));
  return out;
}

namespace {

constexpr std::uint64_t kEnvStreamSalt = 0x9E3779B97F4A7C15ULL;

std::size_t hours_needed(const std::vector<UserProfile>& profiles) {
  std::size_t need = 48;
  for (const auto& p : profiles) {
    if (p.idle_session_hours > 0.0) {
      need = std::max(need, static_cast<std::size_t>(std::ceil(p.idle_session_hours)) + 1);
    }
  }
  return need;
}

// Runs fn(i) for every i in [0, n) on up to `workers` threads; rethrows the
// first failure after all threads joined.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

AgentWorker make_worker(const TrainingSetup& setup, std::size_t index,
                        std::shared_ptr<const PriceSeries> initial_prices) {
  if (setup.profiles.empty()) throw Error(ErrorKind::InvalidParam, "at least one user profile is required");
  const std::uint64_t seed = agent_seed(setup.fed.seed, index);
  const UserProfile& profile = setup.profiles[index % setup.profiles.size()];
  profile.validate();
  return AgentWorker{index, profile, SacAgent(setup.env.state_dim(), setup.sac, seed),
                     EvEnv(setup.env, std::move(initial_prices)), Rng(seed ^ kEnvStreamSalt)};
}

RoundLog run_local_round(AgentWorker& worker, std::size_t episode,
                         std::span<const std::shared_ptr<const PriceSeries>> segments,
                         std::span<const TrainingDay> days) {
  const auto started = std::chrono::steady_clock::now();
  if (days.empty()) throw Error(ErrorKind::InsufficientData, "no training day can hold a full session");
  std::uniform_int_distribution<std::size_t> pick_day(0, days.size() - 1);
  const TrainingDay day = days[pick_day(worker.env_rng)];
  const auto& prices = segments[day.segment];
  const DayType day_type = is_weekend(prices->timestamp(day.day_start)) ? DayType::Weekend : DayType::Weekday;
  const ChargingSession session = sample_session(worker.profile, worker.env_rng, day_type, *prices, day.day_start);

  worker.env.set_prices(prices);
  std::vector<double> state = worker.env.reset(session);
  RoundLog log;
  log.episode = episode;
  log.agent = worker.index;
  bool done = false;
  while (!done) {
    const ActionDraw draw = worker.agent.act(state, false);
    StepResult step = worker.env.step(draw.action);
    log.price_reward += step.parts.price;
    log.anxiety_reward += step.parts.anxiety;
    log.departure_reward += step.parts.departure;
    ++log.steps;
    done = step.done;
    worker.agent.remember({std::move(state), draw.action, step.reward, step.state, step.done});
    state = std::move(step.state);
  }
  log.reward = log.price_reward + log.anxiety_reward + log.departure_reward;

  const std::size_t n_updates =
      worker.agent.config().updates_per_episode > 0 ? worker.agent.config().updates_per_episode : log.steps;
  if (worker.agent.ready()) {
    for (std::size_t u = 0; u < n_updates; ++u) {
      UpdateStats s;
      try {
        s = worker.agent.update_step();
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteParameter) throw;
        throw Error(ErrorKind::NonFiniteParameter,
                    "agent " + std::to_string(worker.index) + ", episode " + std::to_string(episode) +
                        ", update " + std::to_string(u) + ": non-finite parameter after SAC update");
      }
      log.critic_loss += s.critic_loss;
      log.value_loss += s.value_loss;
      log.actor_loss += s.actor_loss;
      ++log.updates;
    }
    const double n = static_cast<double>(log.updates);
    log.critic_loss /= n;
    log.value_loss /= n;
    log.actor_loss /= n;
  }
  log.alpha = worker.agent.models().alpha();
  log.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

FederatedTrainer::FederatedTrainer(TrainingSetup setup, std::vector<std::shared_ptr<const PriceSeries>> train_segments)
    : setup_(std::move(setup)), segments_(std::move(train_segments)) {
  setup_.fed.validate();
  setup_.sac.validate();
  setup_.env.validate();
  if (segments_.empty()) throw Error(ErrorKind::InsufficientData, "training price split is empty");
  days_ = training_days(segments_, hours_needed(setup_.profiles));
  if (days_.empty()) throw Error(ErrorKind::InsufficientData, "no training day can hold a full session");
  workers_.reserve(setup_.fed.n_agents);
  for (std::size_t i = 0; i < setup_.fed.n_agents; ++i) workers_.push_back(make_worker(setup_, i, segments_.front()));
}

FederatedTrainer::Upload FederatedTrainer::upload(const AgentWorker& worker) {
  const AgentModels& m = worker.agent.models();
  return {m.policy.params(), m.q1.params("q."), m.q2.params("q."), m.v1.params("v."), m.v2.params("v."),
          m.log_alpha};
}

void FederatedTrainer::apply_broadcast(AgentWorker& worker) const {
  AgentModels& m = worker.agent.models();
  m.policy.set_params(globals_.policy);
  m.q1.set_params(globals_.q1, "q.");
  m.q2.set_params(globals_.q2, "q.");
  if (setup_.fed.aggregate_value_nets) {
    m.v1.set_params(globals_.v1, "v.");
    m.v2.set_params(globals_.v2, "v.");
  }
  if (setup_.fed.aggregate_alpha) m.log_alpha = globals_.log_alpha;
}

RoundLog FederatedTrainer::local_round(AgentWorker& worker, std::size_t episode) const {
  return run_local_round(worker, episode, segments_, days_);
}

void FederatedTrainer::aggregate_round() {
  std::vector<Upload> uploads;
  uploads.reserve(workers_.size());
  for (const auto& w : workers_) uploads.push_back(upload(w));
  auto collect = [&](auto member) {
    std::vector<ParamVector> items;
    items.reserve(uploads.size());
    for (const auto& u : uploads) items.push_back(u.*member);
    return aggregate(items);
  };
  globals_.policy = collect(&Upload::policy);
  globals_.q1 = collect(&Upload::q1);
  globals_.q2 = collect(&Upload::q2);
  if (setup_.fed.aggregate_value_nets) {
    globals_.v1 = collect(&Upload::v1);
    globals_.v2 = collect(&Upload::v2);
  }
  if (setup_.fed.aggregate_alpha) {
    const double base = uploads.front().log_alpha;
    double acc = 0.0;
    for (std::size_t i = 1; i < uploads.size(); ++i) acc += uploads[i].log_alpha - base;
    globals_.log_alpha = base + acc / static_cast<double>(uploads.size());
  }
  broadcast_pending_ = true;
}

std::vector<RoundLog> FederatedTrainer::run_episode() {
  const std::size_t episode = episodes_done_ + 1;
  std::vector<RoundLog> round(workers_.size());
  parallel_for(workers_.size(), setup_.fed.workers, [&](std::size_t i) {
    if (broadcast_pending_) apply_broadcast(workers_[i]);
    round[i] = local_round(workers_[i], episode);
  });
  broadcast_pending_ = false;
  if (episode % setup_.fed.sync_every == 0) aggregate_round();
  episodes_done_ = episode;
  logs_.insert(logs_.end(), round.begin(), round.end());
  return round;
}

void FederatedTrainer::run(std::size_t max_episodes, const EpisodeCallback& on_episode) {
  std::size_t target = setup_.fed.episodes;
  if (max_episodes > 0) target = std::min(target, episodes_done_ + max_episodes);
  while (episodes_done_ < target) {
    const auto round = run_episode();
    if (on_episode) on_episode(episodes_done_, round);
  }
}

void FederatedTrainer::restore_progress(std::size_t episodes_done, GlobalModels globals,
                                        bool broadcast_pending, std::vector<RoundLog> logs) {
  episodes_done_ = episodes_done;
  globals_ = std::move(globals);
  broadcast_pending_ = broadcast_pending;
  logs_ = std::move(logs);
}

LocalRun run_local_sac(const TrainingSetup& setup, std::vector<std::shared_ptr<const PriceSeries>> train_segments) {
  setup.fed.validate();
  if (train_segments.empty()) throw Error(ErrorKind::InsufficientData, "training price split is empty");
  const auto days = training_days(train_segments, hours_needed(setup.profiles));
  AgentWorker worker = make_worker(setup, 0, train_segments.front());
  LocalRun out;
  for (std::size_t e = 1; e <= setup.fed.episodes; ++e) {
    out.logs.push_back(run_local_round(worker, e, train_segments, days));
  }
  const auto u = FederatedTrainer::upload(worker);
  out.policy = u.policy;
  out.q1 = u.q1;
  out.q2 = u.q2;
  return out;
}

void write_round_logs_csv(const std::vector<RoundLog>& logs, std::ostream& out) {
  out << "episode,agent,reward,price_reward,anxiety_reward,departure_reward,critic_loss,value_loss,actor_loss,alpha\n";
  char buf[64];
  auto num = [&](double v) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
  };
  for (const auto& l : logs) {
    out << l.episode << ',' << l.agent << ',' << num(l.reward) << ',' << num(l.price_reward) << ','
        << num(l.anxiety_reward) << ',' << num(l.departure_reward) << ',' << num(l.critic_loss) << ','
        << num(l.value_loss) << ',' << num(l.actor_loss) << ',' << num(l.alpha) << '\n';
  }
}

void write_round_logs_csv(const std::vector<RoundLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  write_round_logs_csv(logs, out);
}

}  // namespace fedev
