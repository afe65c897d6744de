#include "fedev/price_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fedev/error.hpp"

namespace fedev {

namespace chr = std::chrono;

namespace {

bool parse_uint(std::string_view text, unsigned& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

chr::sys_days floor_day(HourStamp stamp) { return chr::floor<chr::days>(stamp); }

}  // namespace

bool parse_timestamp(std::string_view text, HourStamp& out) {
  // YYYY-MM-DDTHH:00
  if (text.size() != 16 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':') {
    return false;
  }
  unsigned y = 0, m = 0, d = 0, h = 0, minute = 0;
  if (!parse_uint(text.substr(0, 4), y) || !parse_uint(text.substr(5, 2), m) ||
      !parse_uint(text.substr(8, 2), d) || !parse_uint(text.substr(11, 2), h) ||
      !parse_uint(text.substr(14, 2), minute)) {
    return false;
  }
  if (minute != 0 || h > 23) return false;
  const chr::year_month_day ymd{chr::year{static_cast<int>(y)}, chr::month{m}, chr::day{d}};
  if (!ymd.ok()) return false;
  out = HourStamp{chr::sys_days{ymd}} + chr::hours{h};
  return true;
}

std::string format_timestamp(HourStamp stamp) {
  const chr::year_month_day ymd{floor_day(stamp)};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                hour_of_day(stamp));
  return buf;
}

unsigned day_of_month(HourStamp stamp) {
  return static_cast<unsigned>(chr::year_month_day{floor_day(stamp)}.day());
}

unsigned hour_of_day(HourStamp stamp) {
  return static_cast<unsigned>((stamp - floor_day(stamp)).count());
}

bool is_weekend(HourStamp stamp) {
  const chr::weekday wd{floor_day(stamp)};
  return wd == chr::Saturday || wd == chr::Sunday;
}

PriceSeries::PriceSeries(std::vector<PricePoint> points) : points_(std::move(points)) {
  if (points_.empty()) throw Error(ErrorKind::EmptyInput, "price series is empty");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i].price)) {
      throw Error(ErrorKind::NonFinitePrice,
                  "non-finite price at " + format_timestamp(points_[i].timestamp));
    }
    if (i == 0) continue;
    const auto step = points_[i].timestamp - points_[i - 1].timestamp;
    if (step == chr::hours{0}) {
      throw Error(ErrorKind::DuplicateTimestamp, format_timestamp(points_[i].timestamp));
    }
    if (step != chr::hours{1}) {
      throw Error(ErrorKind::GapDetected,
                  "missing hour " + format_timestamp(points_[i - 1].timestamp + chr::hours{1}));
    }
  }
}

std::size_t PriceSeries::index_of(HourStamp stamp) const noexcept {
  const auto offset = (stamp - points_.front().timestamp).count();
  if (offset < 0 || static_cast<std::size_t>(offset) >= points_.size()) return points_.size();
  return static_cast<std::size_t>(offset);
}

double PriceSeries::mean_price() const noexcept {
  double sum = 0.0;
  for (const auto& p : points_) sum += p.price;
  return sum / static_cast<double>(points_.size());
}

std::size_t PriceSplit::train_hours() const noexcept {
  std::size_t n = 0;
  for (const auto& s : train) n += s.size();
  return n;
}

std::size_t PriceSplit::eval_hours() const noexcept {
  std::size_t n = 0;
  for (const auto& s : eval) n += s.size();
  return n;
}

double PriceSplit::train_mean_price() const {
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "training split is empty");
  double sum = 0.0;
  for (const auto& s : train) {
    for (const auto& p : s.points()) sum += p.price;
  }
  return sum / static_cast<double>(train_hours());
}

PriceSeries parse_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::MalformedRow, source_name + ": missing header");
  }
  ++line_no;
  if (trim(line) != "timestamp,price") {
    throw Error(ErrorKind::MalformedRow, source_name + ":1: expected header 'timestamp,price'");
  }
  std::vector<PricePoint> points;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto where = source_name + ":" + std::to_string(line_no);
    const auto comma = row.find(',');
    if (comma == std::string_view::npos || row.find(',', comma + 1) != std::string_view::npos) {
      throw Error(ErrorKind::MalformedRow, where + ": expected two fields");
    }
    PricePoint p;
    if (!parse_timestamp(trim(row.substr(0, comma)), p.timestamp)) {
      throw Error(ErrorKind::MalformedRow, where + ": bad timestamp");
    }
    const auto price_text = trim(row.substr(comma + 1));
    auto [ptr, ec] =
        std::from_chars(price_text.data(), price_text.data() + price_text.size(), p.price);
    if (ec != std::errc() || ptr != price_text.data() + price_text.size()) {
      throw Error(ErrorKind::MalformedRow, where + ": bad price");
    }
    if (!std::isfinite(p.price)) throw Error(ErrorKind::NonFinitePrice, where);
    points.push_back(p);
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const PricePoint& a, const PricePoint& b) { return a.timestamp < b.timestamp; });
  return PriceSeries(std::move(points));
}

PriceSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(const PriceSeries& series, std::ostream& out) {
  out << "timestamp,price\n";
  char buf[64];
  for (const auto& p : series.points()) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p.price);
    out << format_timestamp(p.timestamp) << ',' << std::string_view(buf, end - buf) << '\n';
  }
}

void write_csv(const PriceSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  write_csv(series, out);
}

PriceSplit split_train_eval(const PriceSeries& series) {
  PriceSplit split;
  std::vector<PricePoint> run;
  bool run_is_train = false;
  auto flush = [&] {
    if (run.empty()) return;
    (run_is_train ? split.train : split.eval).emplace_back(std::move(run));
    run.clear();
  };
  for (const auto& p : series.points()) {
    const bool is_train = day_of_month(p.timestamp) <= 20;
    if (!run.empty() && is_train != run_is_train) flush();
    run_is_train = is_train;
    run.push_back(p);
  }
  flush();
  return split;
}

PriceSeries synthesize_prices(const SynthParams& params) {
  if (params.days < 1) throw Error(ErrorKind::InvalidParam, "days must be >= 1");
  if (params.amplitude < 0.0) throw Error(ErrorKind::InvalidParam, "amplitude must be >= 0");
  if (params.noise_sd < 0.0) throw Error(ErrorKind::InvalidParam, "noise_sd must be >= 0");
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t hours = params.days * 24;
  std::vector<PricePoint> points(hours);
  for (std::size_t h = 0; h < hours; ++h) {
    const double phase = 2.0 * std::numbers::pi * (static_cast<double>(h % 24) - 6.0) / 24.0;
    const double eps = noise(rng) * params.noise_sd;
    points[h].timestamp = params.start + chr::hours{static_cast<long>(h)};
    points[h].price = std::max(0.0, params.base + params.amplitude * std::sin(phase) + eps);
  }
  return PriceSeries(std::move(points));
}

std::vector<double> window(const PriceSeries& series, std::size_t t, std::size_t n) {
  if (t >= series.size()) {
    throw Error(ErrorKind::IndexOutOfRange,
                "t=" + std::to_string(t) + " >= length " + std::to_string(series.size()));
  }
  std::vector<double> out(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(n - k);
    out[k] = series[static_cast<std::size_t>(std::max<std::ptrdiff_t>(idx, 0))].price;
  }
  return out;
}

}  // namespace fedev
