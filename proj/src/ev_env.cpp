#include "fedev/ev_env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedev/error.hpp"

namespace fedev {

namespace {

constexpr int kMaxScheduleAttempts = 64;

void shift(TimeDist& d, double hours) { d.mean += hours; }

}  // namespace

void BatteryConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw Error(ErrorKind::InvalidParam, "battery.eta must be in (0,1]");
  if (!(a_min <= 0.0 && a_max >= 0.0)) {
    throw Error(ErrorKind::InvalidParam, "battery rates need a_min <= 0 <= a_max");
  }
}

void RewardConfig::validate() const {
  if (!(sigma_p >= 0.0 && sigma_x >= 0.0 && sigma_d >= 0.0)) {
    throw Error(ErrorKind::InvalidParam, "reward sensitivities must be >= 0");
  }
}

void UserProfile::validate() const {
  if (!(0.0 <= d1_range.lo && d1_range.lo <= d1_range.hi && d1_range.hi <= 1.0)) {
    throw Error(ErrorKind::InvalidParam, "d1_range must lie in [0,1]");
  }
  if (!(d2_bounds.lo <= d2_bounds.hi) || (d2_bounds.lo <= 0.0 && d2_bounds.hi >= 0.0)) {
    throw Error(ErrorKind::InvalidParam, "d2_bounds must exclude 0");
  }
  if (!(d2_sd >= 0.0)) throw Error(ErrorKind::InvalidParam, "d2_sd must be >= 0");
  if (!(0.0 < anxious_duration.lo && anxious_duration.lo <= anxious_duration.hi &&
        anxious_duration.hi < 24.0)) {
    throw Error(ErrorKind::InvalidParam, "anxious_duration must lie in (0,24)");
  }
  const TimeDist* all[] = {&schedule.home_departure,   &schedule.office_arrival,
                           &schedule.office_departure, &schedule.home_arrival,
                           &schedule.public_arrival,   &schedule.public_departure};
  for (const auto* d : all) {
    if (!(d->sd >= 0.0) || !std::isfinite(d->mean)) {
      throw Error(ErrorKind::InvalidParam, "schedule distributions need finite mean and sd >= 0");
    }
  }
  if (idle_session_hours < 0.0) throw Error(ErrorKind::InvalidParam, "idle_session_hours must be >= 0");
}

UserProfile default_profile(std::size_t user) {
  UserProfile p;
  switch (user % 3) {
    case 0:
      p.d1_range = {0.85, 0.95};
      p.anxious_duration = {1.0, 4.0};
      break;
    case 1: {
      p.d1_range = {0.85, 0.90};
      p.anxious_duration = {1.0, 2.0};
      auto& s = p.schedule;
      for (TimeDist* d : {&s.home_departure, &s.office_arrival, &s.office_departure,
                          &s.home_arrival, &s.public_arrival, &s.public_departure}) {
        shift(*d, -1.5);
      }
      break;
    }
    case 2:
      p.d1_range = {0.90, 0.95};
      p.anxious_duration = {2.0, 4.0};
      shift(p.schedule.office_departure, 3.0);
      shift(p.schedule.home_arrival, 3.0);
      break;
  }
  return p;
}

void EnvConfig::validate() const {
  battery.validate();
  reward.validate();
  if (!(price_scale > 0.0) || !std::isfinite(price_scale)) {
    throw Error(ErrorKind::InvalidParam, "price_scale must be positive");
  }
}

double draw_time(const TimeDist& dist, Rng& rng) {
  if (dist.sd == 0.0) return dist.mean;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z = std::clamp(normal(rng), -3.0, 3.0);
  return dist.mean + z * dist.sd;
}

ChargingSession sample_session(const UserProfile& profile, Rng& rng, DayType day_type,
                               const PriceSeries& prices, std::size_t day_start) {
  auto to_index = [&](double hour) -> long {
    return static_cast<long>(day_start) + std::lround(hour);
  };
  const long horizon = static_cast<long>(prices.size()) - 1;

  long t_a = 0;
  long t_d = 0;
  bool feasible = false;
  if (profile.idle_session_hours > 0.0) {
    t_a = static_cast<long>(day_start);
    t_d = to_index(profile.idle_session_hours);
    feasible = t_a < t_d && t_d <= horizon;
  } else {
    const auto& s = profile.schedule;
    for (int attempt = 0; attempt < kMaxScheduleAttempts && !feasible; ++attempt) {
      if (day_type == DayType::Weekday) {
        t_a = to_index(draw_time(s.home_arrival, rng));
        t_d = to_index(24.0 + draw_time(s.home_departure, rng));
      } else {
        t_a = to_index(draw_time(s.public_arrival, rng));
        t_d = to_index(draw_time(s.public_departure, rng));
      }
      feasible = t_a >= 0 && t_a < t_d && t_d <= horizon;
    }
  }
  if (!feasible) {
    throw Error(ErrorKind::ScheduleInfeasible,
                "no arrival < departure within " + std::to_string(prices.size()) +
                    " hours from day start " + std::to_string(day_start));
  }

  ChargingSession session;
  session.t_a = static_cast<std::size_t>(t_a);
  session.t_d = static_cast<std::size_t>(t_d);

  std::uniform_real_distribution<double> duration_dist(profile.anxious_duration.lo,
                                                       profile.anxious_duration.hi);
  const long duration = std::max(1L, std::lround(duration_dist(rng)));
  session.t_x = static_cast<std::size_t>(std::max(t_a, t_d - duration));

  std::uniform_real_distribution<double> d1_dist(profile.d1_range.lo, profile.d1_range.hi);
  session.d1 = d1_dist(rng);
  std::normal_distribution<double> d2_dist(0.0, 1.0);
  session.d2 = std::clamp(profile.d2_mean + profile.d2_sd * d2_dist(rng), profile.d2_bounds.lo,
                          profile.d2_bounds.hi);
  std::uniform_real_distribution<double> soc_dist(0.0, 0.95);
  session.soc_init = soc_dist(rng);
  return session;
}

double anxiety_target(std::size_t t, const ChargingSession& session) {
  if (t < session.t_a || t > session.t_d) {
    throw Error(ErrorKind::DomainError, "t=" + std::to_string(t) + " outside session [" +
                                            std::to_string(session.t_a) + ", " +
                                            std::to_string(session.t_d) + "]");
  }
  if (session.d2 == 0.0) throw Error(ErrorKind::DomainError, "d2 must be nonzero");
  if (session.t_d == session.t_a) return std::clamp(session.d1, 0.0, 1.0);
  const double progress =
      static_cast<double>(t - session.t_a) / static_cast<double>(session.t_d - session.t_a);
  const double value = session.d1 * std::expm1(-session.d2 * progress) / std::expm1(-session.d2);
  return std::clamp(value, 0.0, 1.0);
}

RewardParts reward(const ChargingSession& session, std::size_t t, double psi, double soc,
                   double action, const RewardConfig& config) {
  if (t < session.t_a || t > session.t_d) {
    throw Error(ErrorKind::DomainError, "reward requested outside the session");
  }
  RewardParts parts;
  if (t == session.t_d) {
    parts.departure = -config.sigma_d * std::max(session.soc_d() - soc, 0.0);
    return parts;
  }
  parts.price = -config.sigma_p * psi * action;
  if (t >= session.t_x) {
    parts.anxiety = -config.sigma_x * std::max(anxiety_target(t, session) - soc, 0.0);
  }
  return parts;
}

double apply_driving_drain(double soc, double hours, double rate_per_hour) {
  return std::max(soc - rate_per_hour * hours, 0.0);
}

EvEnv::EvEnv(EnvConfig config, std::shared_ptr<const PriceSeries> prices)
    : config_(config), prices_(std::move(prices)) {
  config_.validate();
  if (!prices_) throw Error(ErrorKind::InvalidParam, "environment needs a price series");
}

void EvEnv::set_prices(std::shared_ptr<const PriceSeries> prices) {
  if (!prices) throw Error(ErrorKind::InvalidParam, "environment needs a price series");
  prices_ = std::move(prices);
  active_ = false;
}

double EvEnv::normalized_price(std::size_t t) const {
  return prices_->price(t) / config_.price_scale;
}

std::vector<double> EvEnv::reset(const ChargingSession& session) {
  // t_d may equal the series length: the terminal state reuses the last price.
  if (!(session.t_a <= session.t_x && session.t_x < session.t_d) ||
      session.t_d > prices_->size()) {
    throw Error(ErrorKind::ScheduleInfeasible, "session does not fit the price horizon");
  }
  session_ = session;
  t_ = session.t_a;
  soc_ = session.soc_init;
  active_ = true;
  done_ = false;
  return state();
}

std::vector<double> EvEnv::state() const {
  const std::size_t n = config_.price_window_n;
  std::vector<double> s = window(*prices_, std::min(t_, prices_->size() - 1), n);
  for (double& p : s) p /= config_.price_scale;
  s.reserve(n + 6);
  s.push_back(static_cast<double>(session_.t_d - t_));
  s.push_back(t_ < session_.t_x ? static_cast<double>(session_.t_x - t_) : 0.0);
  s.push_back(soc_);
  s.push_back(anxiety_target(t_, session_));
  s.push_back(session_.soc_d());
  return s;
}

StepResult EvEnv::step(double action) {
  if (!active_) throw Error(ErrorKind::EpisodeFinished, "no active session");
  if (done_) throw Error(ErrorKind::EpisodeFinished, "session already reached departure");
  if (!std::isfinite(action)) throw Error(ErrorKind::InvalidParam, "action must be finite");

  const auto& bat = config_.battery;
  double a = std::clamp(action, bat.a_min, bat.a_max);
  a = std::clamp(a, -soc_ / bat.eta, (1.0 - soc_) / bat.eta);
  const double psi = normalized_price(t_);
  const std::size_t t_now = t_;

  soc_ = std::clamp(soc_ + bat.eta * a, 0.0, 1.0);
  ++t_;
  done_ = t_ == session_.t_d;

  StepResult out;
  out.applied_action = a;
  out.parts = fedev::reward(session_, t_now, psi, soc_, a, config_.reward);
  if (done_) {
    out.parts.departure =
        fedev::reward(session_, t_, 0.0, soc_, 0.0, config_.reward).departure;
  }
  out.reward = out.parts.total();
  out.done = done_;
  out.state = state();
  return out;
}

}  // namespace fedev
