// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedev/checkpoint.hpp"
#include "fedev/error.hpp"
#include "fedev/eval_sim.hpp"
#include "fedev/federation.hpp"
#include "fedev/gradcheck.hpp"
#include "fedev/run_config.hpp"

using namespace fedev;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct TrendData {
  PriceSeries prices;
  PriceSplit split;
  double scale;
};

TrendData trend_data() {
  SynthParams p;  // base 30, amplitude 15, noise 2
  PriceSeries prices = synthesize_prices(p);
  PriceSplit split = split_train_eval(prices);
  const double scale = split.train_mean_price();
  return {std::move(prices), std::move(split), scale};
}

TrainingSetup default_setup(double scale, std::size_t agents, std::size_t episodes, std::uint64_t seed) {
  RunConfig config;
  config.fed.n_agents = agents;
  config.fed.episodes = episodes;
  config.fed.seed = seed;
  return build_setup(config, scale);
}

bool same_logs(const std::vector<RoundLog>& a, const std::vector<RoundLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_trajectory(b[i])) return false;
  }
  return true;
}

// --------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto reports = gradient_suite(1, 10, NetworkShapes{});
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  std::string worst_name;
  bool all = true;
  for (const auto& r : reports) {
    all = all && r.passed;
    checked += r.checked;
    kinks += r.kinks;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.network;
    }
  }
  return {all && worst < 1e-4 && elapsed < 30.0,
          fmt("%zu networks x 10 seeds, %zu coordinates (%zu skipped at kinks), max rel err %.2e (%s), %.1f s",
              reports.size() / 10, checked, kinks, worst, worst_name.c_str(), elapsed)};
}

Outcome reward_oracle() {
  ChargingSession s;
  s.t_a = 18;
  s.t_x = 29;
  s.t_d = 31;
  s.d1 = 0.9;
  s.d2 = 9.0;
  const double at_a = anxiety_target(s.t_a, s);
  const double at_d = anxiety_target(s.t_d, s);
  const RewardConfig cfg;
  const double r1 = reward(s, 20, 0.5, 0.5, 0.2, cfg).total();
  const double r2 = reward(s, 20, 0.5, 0.5, -0.1, cfg).total();
  const double r3 = reward(s, 31, 0.5, 0.8, 0.0, cfg).total();
  const double r4 = reward(s, 31, 0.5, 0.95, 0.0, cfg).total();
  const bool pass = std::abs(at_a) <= 1e-12 && std::abs(at_d - 0.9) <= 1e-12 && r1 == -0.8 && r2 == 0.4 &&
                    std::abs(r3 + 3.5) <= 1e-12 && r4 == 0.0;
  return {pass, fmt("target(t_a)=%.3g target(t_d)=%.17g rewards %.17g %.17g %.17g %.17g", at_a, at_d, r1, r2, r3,
                    r4)};
}

Outcome aggregation_oracle(const TrendData& data) {
  Rng rng(5);
  const GaussianPolicy p(30, {128, 128, 128, 128}, rng);
  bool identical = true;
  for (std::size_t n : {1u, 2u, 3u, 10u}) {
    const std::vector<ParamVector> same(n, p.params());
    identical = identical && aggregate(same) == p.params();
  }
  const std::vector<ParamVector> hand{ParamVector({{"w", {2}}}, {1, 2}), ParamVector({{"w", {2}}}, {3, 4})};
  const bool mean_ok = aggregate(hand).values == std::vector<double>{2, 3};

  const auto setup = default_setup(data.scale, 1, 20, 11);
  const auto segments = share_segments(data.split.train);
  FederatedTrainer fed(setup, segments);
  fed.run();
  const LocalRun local = run_local_sac(setup, segments);
  const bool n1 = same_logs(fed.logs(), local.logs) && fed.globals().policy == local.policy &&
                  fed.globals().q1 == local.q1 && fed.globals().q2 == local.q2;
  std::size_t updates = 0;
  for (const auto& l : fed.logs()) updates += l.updates;
  return {identical && mean_ok && n1, fmt("identical-input mean %s, hand mean %s, N=1 vs plain SAC %s (%zu updates)",
                                          identical ? "exact" : "WRONG", mean_ok ? "exact" : "WRONG",
                                          n1 ? "bitwise equal" : "DIFFERENT", updates)};
}

struct TrendResult {
  Outcome outcome;
  GlobalModels globals;
};

TrendResult learning_trend(const TrendData& data) {
  const std::size_t agents = 3, episodes = 250, window = 25;
  const auto setup = default_setup(data.scale, agents, episodes, 1);
  FederatedTrainer trainer(setup, share_segments(data.split.train));
  const auto t0 = Clock::now();
  trainer.run();
  const double per_agent = seconds_since(t0) / static_cast<double>(agents);

  auto mean = [&](std::size_t first, auto field) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& l : trainer.logs()) {
      if (l.episode > first && l.episode <= first + window) {
        s += l.*field;
        ++n;
      }
    }
    return s / static_cast<double>(n);
  };
  const std::size_t late = episodes - window;
  struct Part {
    const char* name;
    double RoundLog::*field;
  };
  const Part parts[] = {{"total", &RoundLog::reward},
                        {"price", &RoundLog::price_reward},
                        {"anxiety", &RoundLog::anxiety_reward},
                        {"departure", &RoundLog::departure_reward}};
  std::ostringstream detail;
  bool pass = per_agent < 15 * 60;
  for (const auto& p : parts) {
    const double a = mean(0, p.field), b = mean(late, p.field);
    const bool required = std::string(p.name) != "departure";
    if (required) pass = pass && b > a;
    detail << p.name << ' ' << fmt("%.3f -> %.3f", a, b) << (required ? (b > a ? " up" : " NOT up") : "") << "; ";
  }
  detail << fmt("%.0f s per agent", per_agent);
  return {{pass, detail.str()}, trainer.globals()};
}

// Deterministic-policy actions against price on held-out days, one idle
// session per evaluation midnight.
double heldout_correlation(const GaussianPolicy& policy, const TrainingSetup& setup, const PriceSplit& split,
                           std::size_t idle_hours, std::uint64_t seed) {
  HourlyTrace trace;
  Rng rng(seed);
  std::uniform_real_distribution<double> soc_dist(0.0, 0.95);
  for (const auto& seg : split.eval) {
    auto prices = std::make_shared<const PriceSeries>(seg);
    EvEnv env(setup.env, prices);
    for (std::size_t start = 0; start + idle_hours <= seg.size(); start += 24) {
      if (hour_of_day(seg.timestamp(start)) != 0) continue;
      ChargingSession s;
      s.t_a = start;
      s.t_d = start + idle_hours;
      s.t_x = s.t_d - 1;
      s.soc_init = soc_dist(rng);
      auto state = env.reset(s);
      while (!env.done()) {
        const double price = seg.price(env.t());
        const ActionDraw a = sample_action(policy, state, rng, setup.sac.bounds, setup.sac.squash, true);
        trace.rows.push_back({env.t(), 0, Location::Home, price, env.soc(), a.action, 0.0});
        state = env.step(a.action).state;
      }
    }
  }
  return price_responsiveness(trace);
}

Outcome price_responsiveness_check(const TrendData& data) {
  const std::size_t idle_hours = 24;
  std::size_t good = 0;
  std::ostringstream detail;
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RunConfig config;
    config.fed.seed = seed;
    config.reward.sigma_x = 0.0;
    config.reward.sigma_d = 0.0;
    // A clipped mean past the bounds gets no action gradient and the policy stays saturated.
    config.sac.squash = Squash::Tanh;
    for (auto& p : config.profiles) p.idle_session_hours = static_cast<double>(idle_hours);
    const TrainingSetup setup = build_setup(config, data.scale);
    FederatedTrainer trainer(setup, share_segments(data.split.train));
    trainer.run();
    Rng init(0);
    GaussianPolicy policy(setup.env.state_dim(), setup.sac.policy_hidden, init);
    policy.set_params(trainer.globals().policy);
    double c = std::nan("");
    detail << "seed " << seed << ' ';
    try {
      c = heldout_correlation(policy, setup, data.split, idle_hours, 100 + seed);
      detail << fmt("%.3f", c);
    } catch (const Error& e) {
      detail << e.what();
    }
    if (c <= -0.3) ++good;
    detail << "; ";
  }
  detail << good << "/3 seeds <= -0.3 (tanh squash), " << fmt("%.0f s", seconds_since(t0));
  return {good >= 2, detail.str()};
}

Outcome safety(const TrendData& data, const GlobalModels& trained) {
  auto prices = std::make_shared<const PriceSeries>(data.prices);
  EnvConfig env_cfg;
  env_cfg.price_scale = data.scale;
  EvEnv env(env_cfg, prices);
  Rng rng(2024);
  std::uniform_real_distribution<double> act(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> day(0, data.prices.size() / 24 - 3);
  std::size_t steps = 0, violations = 0;
  std::size_t profile = 0;
  while (steps < 10000) {
    const std::size_t start = day(rng) * 24;
    const auto type = is_weekend(data.prices.timestamp(start)) ? DayType::Weekend : DayType::Weekday;
    const auto session = sample_session(default_profile(profile++ % 3), rng, type, data.prices, start);
    env.reset(session);
    while (!env.done() && steps < 10000) {
      env.step(act(rng));
      ++steps;
      if (!(env.soc() >= 0.0 && env.soc() <= 1.0)) ++violations;
    }
  }

  RunConfig config;
  const TrainingSetup setup = build_setup(config, data.scale);
  Rng init(0);
  GaussianPolicy policy(setup.env.state_dim(), setup.sac.policy_hidden, init);
  policy.set_params(trained.policy);
  std::size_t drive_hours = 0, drive_nonzero = 0, sim_violations = 0, weeks = 0;
  for (const auto& seg : data.split.eval) {
    if (seg.size() < 168) continue;
    auto series = std::make_shared<const PriceSeries>(seg);
    for (std::uint64_t seed : {1u, 2u}) {
      Rng plan_rng(seed);
      SimulationInputs in;
      in.policy = &policy;
      in.profiles = setup.profiles;
      in.plans = build_week_plan(in.profiles, plan_rng, seg.timestamp(0));
      in.prices = series;
      in.env = setup.env;
      in.bounds = setup.sac.bounds;
      in.seed = seed;
      for (const auto& row : simulate_week(in).trace.rows) {
        if (row.location == Location::Driving) {
          ++drive_hours;
          if (row.action != 0.0) ++drive_nonzero;
        }
        if (!(row.soc >= 0.0 && row.soc <= 1.0)) ++sim_violations;
      }
      ++weeks;
    }
  }
  return {violations == 0 && drive_nonzero == 0 && sim_violations == 0 && drive_hours > 0,
          fmt("%zu random steps, %zu SoC violations; %zu simulated weeks, %zu driving hours, %zu nonzero actions, "
              "%zu SoC violations",
              steps, violations, weeks, drive_hours, drive_nonzero, sim_violations)};
}

Outcome determinism(const TrendData& data) {
  const auto setup = default_setup(data.scale, 3, 14, 7);
  const auto segments = share_segments(data.split.train);
  FederatedTrainer a(setup, segments), b(setup, segments);
  a.run();
  b.run();
  const std::string text = "acceptance";
  const auto bytes_a = encode_checkpoint(snapshot(a, text));
  const bool runs_equal = same_logs(a.logs(), b.logs()) && bytes_a == encode_checkpoint(snapshot(b, text));

  FederatedTrainer first(setup, segments);
  first.run(5);
  const auto mid = encode_checkpoint(snapshot(first, text));
  FederatedTrainer resumed(setup, segments);
  restore(resumed, decode_checkpoint(mid));
  resumed.run();
  const bool resume_equal = same_logs(resumed.logs(), a.logs()) &&
                            encode_checkpoint(snapshot(resumed, text)) == bytes_a;
  std::size_t updates = 0;
  for (const auto& l : a.logs()) updates += l.updates;
  return {runs_equal && resume_equal,
          fmt("repeat run %s, resume at episode 5 %s (%zu-byte checkpoint, %zu updates)",
              runs_equal ? "bitwise equal" : "DIFFERENT", resume_equal ? "bitwise equal" : "DIFFERENT",
              bytes_a.size(), updates)};
}

Outcome buffer_semantics() {
  const std::size_t cap = 1000;
  ReplayBuffer buf(cap);
  auto item = [](std::size_t i) {
    Transition t;
    t.state = {static_cast<double>(i)};
    t.next_state = {static_cast<double>(i) + 0.5};
    t.action = 0.0;
    return t;
  };
  for (std::size_t i = 0; i <= cap; ++i) buf.push(item(i));
  bool ok = buf.size() == cap && buf.at(0).state[0] == 1.0;
  for (std::size_t i = 0; i < cap; ++i) ok = ok && buf.at(i).state[0] == static_cast<double>(i + 1);
  for (std::size_t i = cap + 1; i < 3 * cap + 17; ++i) buf.push(item(i));
  for (std::size_t i = 0; i < cap; ++i) ok = ok && buf.at(i).state[0] == static_cast<double>(2 * cap + 17 + i);
  return {ok, fmt("capacity %zu: size after overflow %zu, oldest surviving item %.0f", cap, buf.size(),
                  buf.at(0).state[0])};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const Outcome& o) {
    std::printf("%s  %-26s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [&](const char* name, const std::function<Outcome()>& fn) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, std::string("exception: ") + e.what()});
    }
  };

  const TrendData data = trend_data();
  guarded("gradient-correctness", gradient_correctness);
  guarded("reward-anxiety-oracle", reward_oracle);
  guarded("aggregation-oracle", [&] { return aggregation_oracle(data); });
  guarded("buffer-semantics", buffer_semantics);
  guarded("determinism-persistence", [&] { return determinism(data); });
  GlobalModels trained;
  guarded("learning-trend", [&] {
    TrendResult r = learning_trend(data);
    trained = std::move(r.globals);
    return r.outcome;
  });
  guarded("safety-invariants", [&] { return safety(data, trained); });
  guarded("price-responsiveness", [&] { return price_responsiveness_check(data); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
