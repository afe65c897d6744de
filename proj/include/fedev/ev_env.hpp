#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <vector>

#include "fedev/price_data.hpp"

namespace fedev {

using Rng = std::mt19937_64;

/// Rates are SoC fractions per hour; a_min <= 0 <= a_max.
struct BatteryConfig {
  double eta = 0.98;
  double a_min = -0.2;
  double a_max = 0.2;

  void validate() const;
};

struct RewardConfig {
  double sigma_p = 8.0;
  double sigma_x = 15.0;
  double sigma_d = 35.0;

  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Normal hour-of-day distribution, truncated to mean +/- 3 sd.
struct TimeDist {
  double mean = 0.0;
  double sd = 0.0;
};

struct Schedule {
  TimeDist home_departure{7.5, 1.0};
  TimeDist office_arrival{8.5, 1.0};
  TimeDist office_departure{17.0, 1.0};
  TimeDist home_arrival{18.0, 1.5};
  TimeDist public_arrival{10.0, 1.5};
  TimeDist public_departure{16.0, 2.0};
};

struct UserProfile {
  Interval d1_range{0.85, 0.95};
  double d2_mean = 9.0;
  double d2_sd = 1.0;
  Interval d2_bounds{6.0, 12.0};
  Interval anxious_duration{1.0, 4.0};  // hours
  Schedule schedule;
  /// When positive, every session starts at midnight and stays plugged this
  /// many hours instead of following the commute schedule.
  double idle_session_hours = 0.0;

  void validate() const;
};

/// Profiles of the three reference users (index 0..2); other indices wrap.
UserProfile default_profile(std::size_t user);

enum class DayType { Weekday, Weekend };

/// Hour indices are absolute positions in the price series the session runs on.
struct ChargingSession {
  std::size_t t_a = 0;
  std::size_t t_x = 0;
  std::size_t t_d = 0;
  double soc_init = 0.0;
  double d1 = 0.9;
  double d2 = 9.0;

  double soc_d() const noexcept { return d1; }
  std::size_t length() const noexcept { return t_d - t_a; }
};

double draw_time(const TimeDist& dist, Rng& rng);

/// Weekdays: home arrival on `day_start`'s day until home departure next
/// morning. Weekends: the public-area visit of that day.
ChargingSession sample_session(const UserProfile& profile, Rng& rng, DayType day_type,
                               const PriceSeries& prices, std::size_t day_start);

double anxiety_target(std::size_t t, const ChargingSession& session);

struct RewardParts {
  double price = 0.0;
  double anxiety = 0.0;
  double departure = 0.0;

  double total() const noexcept { return price + anxiety + departure; }
};

/// Piecewise settlement at hour t. `psi` is the normalized price at t. At t_d
/// only the departure gap counts and `action` is ignored.
RewardParts reward(const ChargingSession& session, std::size_t t, double psi, double soc,
                   double action, const RewardConfig& config);

double apply_driving_drain(double soc, double hours, double rate_per_hour = 0.05);

struct EnvConfig {
  BatteryConfig battery;
  RewardConfig reward;
  std::size_t price_window_n = 24;
  double price_scale = 1.0;

  std::size_t state_dim() const noexcept { return price_window_n + 6; }
  void validate() const;
};

struct StepResult {
  std::vector<double> state;
  RewardParts parts;
  double reward = 0.0;
  bool done = false;
  double applied_action = 0.0;  // after bound and SoC feasibility clipping
};

class EvEnv {
 public:
  EvEnv(EnvConfig config, std::shared_ptr<const PriceSeries> prices);

  void set_prices(std::shared_ptr<const PriceSeries> prices);
  const PriceSeries& prices() const { return *prices_; }
  const EnvConfig& config() const noexcept { return config_; }

  std::vector<double> reset(const ChargingSession& session);
  StepResult step(double action);

  std::vector<double> state() const;
  std::size_t t() const noexcept { return t_; }
  double soc() const noexcept { return soc_; }
  bool done() const noexcept { return done_; }
  bool active() const noexcept { return active_; }
  const ChargingSession& session() const noexcept { return session_; }
  double normalized_price(std::size_t t) const;

 private:
  EnvConfig config_;
  std::shared_ptr<const PriceSeries> prices_;
  ChargingSession session_;
  std::size_t t_ = 0;
  double soc_ = 0.0;
  bool active_ = false;
  bool done_ = false;
};

}  // namespace fedev
