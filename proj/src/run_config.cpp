#include "fedev/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedev/error.hpp"

namespace fedev {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorKind::ConfigError, "invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

std::vector<std::size_t> parse_widths(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_number<std::size_t>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

template <typename T>
Field number_field(T RunConfig::*member) {
  return {[member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*member);
            else return std::to_string(c.*member);
          },
          [member](RunConfig& c, std::string_view k, std::string_view v) { c.*member = parse_number<T>(k, v); }};
}

template <typename T, typename Fn>
Field number_at(Fn access) {
  return {[access](const RunConfig& c) {
            const T v = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return fmt(v);
            else return std::to_string(v);
          },
          [access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_number<T>(k, v); }};
}

template <typename Fn>
Field bool_at(Fn access) {
  return {[access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_bool(k, v); }};
}

// Fixed keys, in serialization order.
std::vector<std::pair<std::string, Field>> fixed_fields() {
  std::vector<std::pair<std::string, Field>> f;
  f.push_back({"price.csv", {[](const RunConfig& c) { return c.prices.csv_path; },
                             [](RunConfig& c, std::string_view, std::string_view v) { c.prices.csv_path = v; }}});
  f.push_back({"price.synthetic", bool_at([](RunConfig& c) -> bool& { return c.prices.synthetic; })});
  f.push_back({"synth.seed", number_at<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.prices.synth.seed; })});
  f.push_back({"synth.days", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.prices.synth.days; })});
  f.push_back({"synth.base", number_at<double>([](RunConfig& c) -> double& { return c.prices.synth.base; })});
  f.push_back({"synth.amplitude", number_at<double>([](RunConfig& c) -> double& { return c.prices.synth.amplitude; })});
  f.push_back({"synth.noise_sd", number_at<double>([](RunConfig& c) -> double& { return c.prices.synth.noise_sd; })});
  f.push_back({"synth.start",
               {[](const RunConfig& c) { return format_timestamp(c.prices.synth.start); },
                [](RunConfig& c, std::string_view k, std::string_view v) {
                  if (!parse_timestamp(v, c.prices.synth.start)) bad_value(k, v);
                }}});
  f.push_back({"env.price_window_n", number_field(&RunConfig::price_window_n)});
  f.push_back({"env.price_scale", number_field(&RunConfig::price_scale)});
  f.push_back({"battery.eta", number_at<double>([](RunConfig& c) -> double& { return c.battery.eta; })});
  f.push_back({"battery.a_min", number_at<double>([](RunConfig& c) -> double& { return c.battery.a_min; })});
  f.push_back({"battery.a_max", number_at<double>([](RunConfig& c) -> double& { return c.battery.a_max; })});
  f.push_back({"reward.sigma_p", number_at<double>([](RunConfig& c) -> double& { return c.reward.sigma_p; })});
  f.push_back({"reward.sigma_x", number_at<double>([](RunConfig& c) -> double& { return c.reward.sigma_x; })});
  f.push_back({"reward.sigma_d", number_at<double>([](RunConfig& c) -> double& { return c.reward.sigma_d; })});
  f.push_back({"sac.gamma", number_at<double>([](RunConfig& c) -> double& { return c.sac.gamma; })});
  f.push_back({"sac.batch_size", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.sac.batch_size; })});
  f.push_back({"sac.lr_actor", number_at<double>([](RunConfig& c) -> double& { return c.sac.lr_actor; })});
  f.push_back({"sac.lr_critic", number_at<double>([](RunConfig& c) -> double& { return c.sac.lr_critic; })});
  f.push_back({"sac.lr_value", number_at<double>([](RunConfig& c) -> double& { return c.sac.lr_value; })});
  f.push_back({"sac.lr_alpha", number_at<double>([](RunConfig& c) -> double& { return c.sac.lr_alpha; })});
  f.push_back({"sac.zeta", number_at<double>([](RunConfig& c) -> double& { return c.sac.zeta; })});
  f.push_back({"sac.target_entropy", number_at<double>([](RunConfig& c) -> double& { return c.sac.target_entropy; })});
  f.push_back({"sac.init_alpha", number_at<double>([](RunConfig& c) -> double& { return c.sac.init_alpha; })});
  f.push_back({"sac.updates_per_episode",
               number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.sac.updates_per_episode; })});
  f.push_back({"sac.buffer_capacity",
               number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.sac.buffer_capacity; })});
  f.push_back({"sac.policy_hidden",
               {[](const RunConfig& c) { return fmt_widths(c.sac.policy_hidden); },
                [](RunConfig& c, std::string_view k, std::string_view v) { c.sac.policy_hidden = parse_widths(k, v); }}});
  f.push_back({"sac.critic_hidden",
               {[](const RunConfig& c) { return fmt_widths(c.sac.critic_hidden); },
                [](RunConfig& c, std::string_view k, std::string_view v) { c.sac.critic_hidden = parse_widths(k, v); }}});
  f.push_back({"sac.policy_squash",
               {[](const RunConfig& c) { return std::string(c.sac.squash == Squash::Clip ? "clip" : "tanh"); },
                [](RunConfig& c, std::string_view k, std::string_view v) {
                  if (v == "clip") c.sac.squash = Squash::Clip;
                  else if (v == "tanh") c.sac.squash = Squash::Tanh;
                  else bad_value(k, v);
                }}});
  f.push_back({"fed.n_agents", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.fed.n_agents; })});
  f.push_back({"fed.episodes", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.fed.episodes; })});
  f.push_back({"fed.seed", number_at<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.fed.seed; })});
  f.push_back({"fed.aggregate_value_nets", bool_at([](RunConfig& c) -> bool& { return c.fed.aggregate_value_nets; })});
  f.push_back({"fed.aggregate_alpha", bool_at([](RunConfig& c) -> bool& { return c.fed.aggregate_alpha; })});
  f.push_back({"fed.sync_every", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.fed.sync_every; })});
  f.push_back({"fed.workers", number_at<std::size_t>([](RunConfig& c) -> std::size_t& { return c.fed.workers; })});
  f.push_back({"eval.start", {[](const RunConfig& c) { return c.eval_start; },
                              [](RunConfig& c, std::string_view k, std::string_view v) {
                                HourStamp probe;
                                if (!v.empty() && !parse_timestamp(std::string(v) + "T00:00", probe)) bad_value(k, v);
                                c.eval_start = v;
                              }}});
  f.push_back({"eval.seed", number_field(&RunConfig::eval_seed)});
  f.push_back({"eval.drive_hours", number_field(&RunConfig::drive_hours)});
  f.push_back({"out_dir", {[](const RunConfig& c) { return c.out_dir; },
                           [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = v; }}});
  return f;
}

// Per-profile keys: profile.<i>.<name>.
std::vector<std::pair<std::string, std::function<double&(UserProfile&)>>> profile_fields() {
  using Acc = std::function<double&(UserProfile&)>;
  std::vector<std::pair<std::string, Acc>> f{
      {"d1_min", [](UserProfile& p) -> double& { return p.d1_range.lo; }},
      {"d1_max", [](UserProfile& p) -> double& { return p.d1_range.hi; }},
      {"d2_mean", [](UserProfile& p) -> double& { return p.d2_mean; }},
      {"d2_sd", [](UserProfile& p) -> double& { return p.d2_sd; }},
      {"d2_min", [](UserProfile& p) -> double& { return p.d2_bounds.lo; }},
      {"d2_max", [](UserProfile& p) -> double& { return p.d2_bounds.hi; }},
      {"anxious_min", [](UserProfile& p) -> double& { return p.anxious_duration.lo; }},
      {"anxious_max", [](UserProfile& p) -> double& { return p.anxious_duration.hi; }},
      {"idle_session_hours", [](UserProfile& p) -> double& { return p.idle_session_hours; }},
  };
  const std::pair<const char*, TimeDist Schedule::*> times[] = {
      {"home_departure", &Schedule::home_departure},   {"office_arrival", &Schedule::office_arrival},
      {"office_departure", &Schedule::office_departure}, {"home_arrival", &Schedule::home_arrival},
      {"public_arrival", &Schedule::public_arrival},   {"public_departure", &Schedule::public_departure},
  };
  for (const auto& [name, member] : times) {
    f.push_back({std::string(name) + ".mean", [member](UserProfile& p) -> double& { return (p.schedule.*member).mean; }});
    f.push_back({std::string(name) + ".sd", [member](UserProfile& p) -> double& { return (p.schedule.*member).sd; }});
  }
  return f;
}

bool set_profile_value(RunConfig& c, std::string_view key, std::string_view value) {
  constexpr std::string_view prefix = "profile.";
  if (key.substr(0, prefix.size()) != prefix) return false;
  auto rest = key.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) return false;
  const auto index = parse_number<std::size_t>(key, rest.substr(0, dot));
  if (index >= c.profiles.size()) {
    throw Error(ErrorKind::ConfigError, std::string(key) + ": profile index beyond profiles.count");
  }
  const auto name = rest.substr(dot + 1);
  for (const auto& [field, access] : profile_fields()) {
    if (field == name) {
      access(c.profiles[index]) = parse_number<double>(key, value);
      return true;
    }
  }
  return false;
}

}  // namespace

void RunConfig::validate() const {
  battery.validate();
  reward.validate();
  if (!(battery.a_min < battery.a_max)) throw Error(ErrorKind::ConfigError, "battery.a_min must be < battery.a_max");
  if (price_scale < 0.0) throw Error(ErrorKind::ConfigError, "env.price_scale must be >= 0");
  if (profiles.empty()) throw Error(ErrorKind::ConfigError, "profiles.count must be >= 1");
  for (const auto& p : profiles) p.validate();
  SacConfig s = sac;
  s.bounds = {battery.a_min, battery.a_max};
  s.validate();
  fed.validate();
  if (drive_hours < 1) throw Error(ErrorKind::ConfigError, "eval.drive_hours must be >= 1");
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "profiles.count") {
    const auto n = parse_number<std::size_t>(key, value);
    if (n == 0) bad_value(key, value);
    while (config.profiles.size() < n) config.profiles.push_back(default_profile(config.profiles.size()));
    config.profiles.resize(n);
    return;
  }
  for (const auto& [name, field] : fixed_fields()) {
    if (name == key) {
      field.set(config, key, value);
      return;
    }
  }
  if (set_profile_value(config, key, value)) return;
  throw Error(ErrorKind::ConfigError, "unknown configuration key '" + std::string(key) + "'");
}

std::vector<std::string> config_keys(const RunConfig& config) {
  std::vector<std::string> keys;
  for (const auto& [name, field] : fixed_fields()) keys.push_back(name);
  keys.push_back("profiles.count");
  for (std::size_t i = 0; i < config.profiles.size(); ++i) {
    for (const auto& [name, access] : profile_fields()) keys.push_back("profile." + std::to_string(i) + "." + name);
  }
  return keys;
}

std::string serialize_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& [name, field] : fixed_fields()) out << name << " = " << field.get(config) << '\n';
  out << "profiles.count = " << config.profiles.size() << '\n';
  for (std::size_t i = 0; i < config.profiles.size(); ++i) {
    UserProfile p = config.profiles[i];
    for (const auto& [name, access] : profile_fields()) {
      out << "profile." << i << '.' << name << " = " << fmt(access(p)) << '\n';
    }
  }
  return out.str();
}

RunConfig parse_config(std::string_view text) {
  struct Entry {
    std::string key, value;
    std::size_t line;
  };
  std::vector<Entry> entries;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    entries.push_back({std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no});
  }
  RunConfig config;
  std::map<std::string, std::size_t> seen;
  // profiles.count first so profile.<i> keys can refer to any declared index.
  for (const auto& e : entries) {
    if (!seen.emplace(e.key, e.line).second) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(e.line) + ": duplicate key " + e.key);
    }
    if (e.key == "profiles.count") set_config_value(config, e.key, e.value);
  }
  for (const auto& e : entries) {
    if (e.key == "profiles.count") continue;
    try {
      set_config_value(config, e.key, e.value);
    } catch (const Error& err) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(e.line) + ": " + err.message());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

PriceSeries load_prices(const RunConfig& config) {
  if (!config.prices.csv_path.empty()) return load_csv(config.prices.csv_path);
  if (config.prices.synthetic) return synthesize_prices(config.prices.synth);
  throw Error(ErrorKind::ConfigError, "no price source: set price.csv or price.synthetic");
}

TrainingSetup build_setup(const RunConfig& config, double price_scale) {
  config.validate();
  TrainingSetup setup;
  setup.env.battery = config.battery;
  setup.env.reward = config.reward;
  setup.env.price_window_n = config.price_window_n;
  setup.env.price_scale = price_scale;
  setup.profiles = config.profiles;
  setup.sac = config.sac;
  setup.sac.bounds = {config.battery.a_min, config.battery.a_max};
  setup.fed = config.fed;
  return setup;
}

}  // namespace fedev
