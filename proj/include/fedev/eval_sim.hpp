#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedev/ev_env.hpp"
#include "fedev/federation.hpp"
#include "fedev/neural.hpp"

namespace fedev {

enum class Location { Home, Office, Public, Driving };

std::string_view to_string(Location loc);
Location parse_location(std::string_view text);

struct Leg {
  Location location = Location::Home;
  std::size_t start = 0;  // hour offset from the start of the week
  std::size_t end = 0;    // exclusive
};

struct WeekPlan {
  std::vector<Leg> legs;

  std::size_t hours() const noexcept { return legs.empty() ? 0 : legs.back().end; }
  /// Legs must tile [0, hours) without overlap and have positive length.
  void validate() const;
};

struct WeekOptions {
  std::size_t hours = 168;
  std::size_t drive_hours = 1;
};

/// One plan per profile. Weekdays: home, drive, office, drive, home.
/// Weekends: home, drive, public area, drive, home.
std::vector<WeekPlan> build_week_plan(const std::vector<UserProfile>& profiles, Rng& rng,
                                      HourStamp week_start, const WeekOptions& options = {});

struct TraceRow {
  std::size_t hour = 0;
  std::size_t ev = 0;
  Location location = Location::Home;
  double price = 0.0;  // raw currency/MWh
  double soc = 0.0;    // at the end of the hour
  double action = 0.0; // applied rate; 0 while driving
  double cumulative_cost = 0.0;
};

struct HourlyTrace {
  std::vector<TraceRow> rows;
};

struct EvalMetrics {
  double total_energy_cost = 0.0;       // sum of sigma_p * psi * a over plugged hours
  double total_anxiety_penalty = 0.0;   // >= 0
  double total_departure_penalty = 0.0; // >= 0
  std::vector<double> departure_shortfalls;
  double mean_reward = 0.0;  // per EV over the week
  std::size_t evs = 0;
  std::size_t plugged_hours = 0;
};

struct SimulationResult {
  HourlyTrace trace;
  EvalMetrics metrics;
};

struct SimulationInputs {
  const GaussianPolicy* policy = nullptr;
  std::vector<WeekPlan> plans;
  std::vector<UserProfile> profiles;  // session parameters for plan i use profiles[i % size]
  std::shared_ptr<const PriceSeries> prices;
  std::size_t start_index = 0;  // series index of hour 0 of the week
  EnvConfig env;
  ActionBounds bounds;
  Squash squash = Squash::Clip;
  std::uint64_t seed = 1;
  double drain_per_hour = 0.05;
};

/// Plugged hours follow the deterministic policy through EvEnv; each parked
/// leg is one session ending at the next departure. Driving hours drain the
/// battery and apply no action.
SimulationResult simulate_week(const SimulationInputs& inputs);

void export_plot_data(const HourlyTrace& trace, const std::filesystem::path& path);
HourlyTrace read_trace_csv(const std::filesystem::path& path);
/// Per-episode means across agents of every logged reward component.
void export_training_curves(const std::vector<RoundLog>& logs, const std::filesystem::path& path);

/// Pearson correlation of applied action against price over plugged hours.
double price_responsiveness(const HourlyTrace& trace);

}  // namespace fedev
