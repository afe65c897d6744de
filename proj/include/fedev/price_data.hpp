#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fedev {

using HourStamp = std::chrono::sys_time<std::chrono::hours>;

/// Parses `YYYY-MM-DDTHH:00`. Returns false on any deviation from that form.
bool parse_timestamp(std::string_view text, HourStamp& out);
std::string format_timestamp(HourStamp stamp);

unsigned day_of_month(HourStamp stamp);
unsigned hour_of_day(HourStamp stamp);
bool is_weekend(HourStamp stamp);

struct PricePoint {
  HourStamp timestamp;
  double price = 0.0;  // currency per MWh
};

/// Gap-free hourly price series. Immutable once built; the constructor
/// enforces finiteness, strict ordering and the one-hour spacing.
class PriceSeries {
 public:
  explicit PriceSeries(std::vector<PricePoint> points);

  std::size_t size() const noexcept { return points_.size(); }
  const PricePoint& operator[](std::size_t i) const { return points_[i]; }
  double price(std::size_t i) const { return points_.at(i).price; }
  HourStamp timestamp(std::size_t i) const { return points_.at(i).timestamp; }
  const std::vector<PricePoint>& points() const noexcept { return points_; }

  /// Index of `stamp` in the series, or size() if absent.
  std::size_t index_of(HourStamp stamp) const noexcept;
  double mean_price() const noexcept;

 private:
  std::vector<PricePoint> points_;
};

/// Days 1-20 of every month go to training, the rest to evaluation. Each part
/// is kept as a list of contiguous segments because removing days 21+ from a
/// multi-month series leaves holes that a single PriceSeries cannot hold.
struct PriceSplit {
  std::vector<PriceSeries> train;
  std::vector<PriceSeries> eval;

  std::size_t train_hours() const noexcept;
  std::size_t eval_hours() const noexcept;
  double train_mean_price() const;
};

PriceSeries parse_csv(std::istream& in, const std::string& source_name = "<stream>");
PriceSeries load_csv(const std::filesystem::path& path);
void write_csv(const PriceSeries& series, std::ostream& out);
void write_csv(const PriceSeries& series, const std::filesystem::path& path);

PriceSplit split_train_eval(const PriceSeries& series);

struct SynthParams {
  std::uint64_t seed = 1;
  std::size_t days = 60;
  double base = 30.0;
  double amplitude = 15.0;
  double noise_sd = 2.0;
  HourStamp start = HourStamp{std::chrono::sys_days{std::chrono::year{2017} / 1 / 1}};
};

/// Daily sinusoid with its trough at midnight and crest at noon, plus seeded
/// Gaussian noise, floored at zero.
PriceSeries synthesize_prices(const SynthParams& params);

/// Returns (p[t-n], ..., p[t]); indices before the start repeat p[0].
std::vector<double> window(const PriceSeries& series, std::size_t t, std::size_t n);

}  // namespace fedev
