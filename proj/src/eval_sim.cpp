#include "fedev/eval_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedev/error.hpp"

namespace fedev {

namespace {

constexpr int kMaxPlanAttempts = 64;

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void append_leg(std::vector<Leg>& legs, Location loc, std::size_t start, std::size_t end) {
  if (end <= start) return;
  if (!legs.empty() && legs.back().location == loc && legs.back().end == start) {
    legs.back().end = end;
    return;
  }
  legs.push_back({loc, start, end});
}

long hour_draw(const TimeDist& d, Rng& rng) { return std::lround(draw_time(d, rng)); }

}  // namespace

std::string_view to_string(Location loc) {
  switch (loc) {
    case Location::Home: return "home";
    case Location::Office: return "office";
    case Location::Public: return "public";
    case Location::Driving: return "driving";
  }
  return "home";
}

Location parse_location(std::string_view text) {
  for (Location l : {Location::Home, Location::Office, Location::Public, Location::Driving}) {
    if (text == to_string(l)) return l;
  }
  throw Error(ErrorKind::MalformedRow, "unknown location '" + std::string(text) + "'");
}

void WeekPlan::validate() const {
  if (legs.empty()) throw Error(ErrorKind::ScheduleInfeasible, "empty week plan");
  std::size_t expected = 0;
  for (const auto& leg : legs) {
    if (leg.start != expected || leg.end <= leg.start) {
      throw Error(ErrorKind::ScheduleInfeasible, "week plan legs do not tile the horizon at hour " +
                                                     std::to_string(expected));
    }
    expected = leg.end;
  }
}

std::vector<WeekPlan> build_week_plan(const std::vector<UserProfile>& profiles, Rng& rng,
                                      HourStamp week_start, const WeekOptions& options) {
  if (options.hours % 24 != 0 || options.hours == 0) {
    throw Error(ErrorKind::InvalidParam, "week horizon must be a positive multiple of 24 hours");
  }
  const long drive = static_cast<long>(options.drive_hours);
  const std::size_t days = options.hours / 24;
  std::vector<WeekPlan> plans;
  for (const auto& profile : profiles) {
    profile.validate();
    const Schedule& s = profile.schedule;
    WeekPlan plan;
    std::size_t cursor = 0;  // end of the last non-home leg
    for (std::size_t day = 0; day < days; ++day) {
      const long base = static_cast<long>(day * 24);
      const bool weekend = is_weekend(week_start + std::chrono::hours{base});
      bool placed = false;
      for (int attempt = 0; attempt < kMaxPlanAttempts && !placed; ++attempt) {
        long out = 0, arrive = 0, leave = 0;
        Location away = Location::Office;
        if (weekend) {
          away = Location::Public;
          arrive = base + hour_draw(s.public_arrival, rng);
          leave = base + hour_draw(s.public_departure, rng);
          out = arrive - drive;
        } else {
          out = base + hour_draw(s.home_departure, rng);
          leave = base + hour_draw(s.office_departure, rng);
          arrive = out + drive;
        }
        const long back = leave + drive;
        if (out < static_cast<long>(cursor) || out < base || arrive >= leave ||
            back > base + 24 || back > static_cast<long>(options.hours)) {
          continue;
        }
        append_leg(plan.legs, Location::Home, cursor, static_cast<std::size_t>(out));
        append_leg(plan.legs, Location::Driving, static_cast<std::size_t>(out), static_cast<std::size_t>(arrive));
        append_leg(plan.legs, away, static_cast<std::size_t>(arrive), static_cast<std::size_t>(leave));
        plan.legs.push_back({Location::Driving, static_cast<std::size_t>(leave), static_cast<std::size_t>(back)});
        cursor = static_cast<std::size_t>(back);
        placed = true;
      }
      if (!placed) {
        throw Error(ErrorKind::ScheduleInfeasible, "could not place day " + std::to_string(day) + " trips");
      }
    }
    append_leg(plan.legs, Location::Home, cursor, options.hours);
    plan.validate();
    plans.push_back(std::move(plan));
  }
  return plans;
}

SimulationResult simulate_week(const SimulationInputs& in) {
  if (!in.policy) throw Error(ErrorKind::InvalidParam, "simulate_week needs a policy");
  if (!in.prices) throw Error(ErrorKind::InvalidParam, "simulate_week needs prices");
  if (in.profiles.empty()) throw Error(ErrorKind::InvalidParam, "simulate_week needs profiles");
  if (in.policy->state_dim() != in.env.state_dim()) {
    throw Error(ErrorKind::LayoutMismatch, "policy input size differs from the environment state size");
  }
  SimulationResult result;
  EvalMetrics& m = result.metrics;
  m.evs = in.plans.size();
  Rng rng(in.seed);
  EvEnv env(in.env, in.prices);
  double reward_sum = 0.0;

  for (std::size_t ev = 0; ev < in.plans.size(); ++ev) {
    const WeekPlan& plan = in.plans[ev];
    plan.validate();
    if (in.start_index + plan.hours() > in.prices->size()) {
      throw Error(ErrorKind::IndexOutOfRange, "evaluation prices do not cover the week");
    }
    const UserProfile& profile = in.profiles[ev % in.profiles.size()];
    std::uniform_real_distribution<double> soc_dist(0.0, 0.95);
    double soc = soc_dist(rng);
    double cost = 0.0;

    for (const Leg& leg : plan.legs) {
      if (leg.location == Location::Driving) {
        for (std::size_t h = leg.start; h < leg.end; ++h) {
          soc = apply_driving_drain(soc, 1.0, in.drain_per_hour);
          result.trace.rows.push_back(
              {h, ev, leg.location, in.prices->price(in.start_index + h), soc, 0.0, cost});
        }
        continue;
      }
      ChargingSession session;
      session.t_a = in.start_index + leg.start;
      session.t_d = in.start_index + leg.end;
      std::uniform_real_distribution<double> duration_dist(profile.anxious_duration.lo,
                                                           profile.anxious_duration.hi);
      const auto duration = static_cast<std::size_t>(std::max(1L, std::lround(duration_dist(rng))));
      session.t_x = session.t_d > session.t_a + duration ? session.t_d - duration : session.t_a;
      std::uniform_real_distribution<double> d1_dist(profile.d1_range.lo, profile.d1_range.hi);
      session.d1 = d1_dist(rng);
      std::normal_distribution<double> normal(0.0, 1.0);
      session.d2 = std::clamp(profile.d2_mean + profile.d2_sd * normal(rng), profile.d2_bounds.lo,
                              profile.d2_bounds.hi);
      session.soc_init = soc;

      std::vector<double> state = env.reset(session);
      for (std::size_t h = leg.start; h < leg.end; ++h) {
        const ActionDraw draw = sample_action(*in.policy, state, rng, in.bounds, in.squash, true);
        const double psi = env.normalized_price(env.t());
        StepResult step = env.step(draw.action);
        cost += in.env.reward.sigma_p * psi * step.applied_action;
        m.total_energy_cost += in.env.reward.sigma_p * psi * step.applied_action;
        m.total_anxiety_penalty -= step.parts.anxiety;
        m.total_departure_penalty -= step.parts.departure;
        reward_sum += step.reward;
        ++m.plugged_hours;
        soc = env.soc();
        result.trace.rows.push_back(
            {h, ev, leg.location, in.prices->price(in.start_index + h), soc, step.applied_action, cost});
        state = std::move(step.state);
      }
      m.departure_shortfalls.push_back(std::max(session.d1 - soc, 0.0));
    }
  }
  m.mean_reward = m.evs > 0 ? reward_sum / static_cast<double>(m.evs) : 0.0;
  return result;
}

void export_plot_data(const HourlyTrace& trace, const std::filesystem::path& path) {
  if (trace.rows.empty()) throw Error(ErrorKind::IoError, "refusing to write an empty trace");
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "hour,ev,location,price,soc,action,cumulative_cost\n";
  for (const auto& r : trace.rows) {
    out << r.hour << ',' << r.ev << ',' << to_string(r.location) << ',' << num(r.price) << ','
        << num(r.soc) << ',' << num(r.action) << ',' << num(r.cumulative_cost) << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

HourlyTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "hour,ev,location,price,soc,action,cumulative_cost") {
    throw Error(ErrorKind::MalformedRow, path.string() + ": unexpected header");
  }
  HourlyTrace trace;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error(ErrorKind::MalformedRow, path.string() + ":" + std::to_string(line_no));
    auto parse = [&](const std::string& s, auto& out) {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorKind::MalformedRow, path.string() + ":" + std::to_string(line_no));
      }
    };
    TraceRow r;
    parse(f[0], r.hour);
    parse(f[1], r.ev);
    r.location = parse_location(f[2]);
    parse(f[3], r.price);
    parse(f[4], r.soc);
    parse(f[5], r.action);
    parse(f[6], r.cumulative_cost);
    trace.rows.push_back(r);
  }
  return trace;
}

void export_training_curves(const std::vector<RoundLog>& logs, const std::filesystem::path& path) {
  if (logs.empty()) throw Error(ErrorKind::IoError, "no training logs to export");
  struct Acc {
    double reward = 0, price = 0, anxiety = 0, departure = 0;
    std::size_t n = 0;
  };
  std::map<std::size_t, Acc> by_episode;
  for (const auto& l : logs) {
    Acc& a = by_episode[l.episode];
    a.reward += l.reward;
    a.price += l.price_reward;
    a.anxiety += l.anxiety_reward;
    a.departure += l.departure_reward;
    ++a.n;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "episode,mean_reward,mean_price_reward,mean_anxiety_reward,mean_departure_reward\n";
  for (const auto& [episode, a] : by_episode) {
    const double n = static_cast<double>(a.n);
    out << episode << ',' << num(a.reward / n) << ',' << num(a.price / n) << ',' << num(a.anxiety / n)
        << ',' << num(a.departure / n) << '\n';
  }
}

double price_responsiveness(const HourlyTrace& trace) {
  std::vector<double> actions, prices;
  for (const auto& r : trace.rows) {
    if (r.location == Location::Driving) continue;
    actions.push_back(r.action);
    prices.push_back(r.price);
  }
  const std::size_t n = actions.size();
  if (n < 2) throw Error(ErrorKind::DegenerateVariance, "fewer than two plugged hours");
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(actions) || constant(prices)) {
    throw Error(ErrorKind::DegenerateVariance, "action or price is constant");
  }
  double ma = 0, mp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += actions[i];
    mp += prices[i];
  }
  ma /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  double sap = 0, saa = 0, spp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = actions[i] - ma;
    const double dp = prices[i] - mp;
    sap += da * dp;
    saa += da * da;
    spp += dp * dp;
  }
  if (saa <= 0.0 || spp <= 0.0) throw Error(ErrorKind::DegenerateVariance, "action or price is constant");
  return std::clamp(sap / std::sqrt(saa * spp), -1.0, 1.0);
}

}  // namespace fedev
