#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fedev/checkpoint.hpp"
#include "fedev/error.hpp"
#include "fedev/eval_sim.hpp"
#include "fedev/federation.hpp"
#include "fedev/gradcheck.hpp"
#include "fedev/run_config.hpp"

namespace fs = std::filesystem;
using namespace fedev;

namespace {

constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> agents;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> workers;
  bool synthetic = false;
  std::string prices;
};

void add_config_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration file (key = value lines)");
  cmd->add_option("--set", f.sets, "Override one configuration key, e.g. --set sac.gamma=0.95 (repeatable)");
  cmd->add_option("--out-dir", f.out_dir, "Output directory");
  cmd->add_flag("--synthetic", f.synthetic, "Use synthetic sinusoidal prices (synth.* keys)");
  cmd->add_option("--prices", f.prices, "Hourly price CSV (timestamp,price)");
}

void add_training_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--seed", f.seed, "Training seed (fed.seed)");
  cmd->add_option("--agents", f.agents, "Number of agents (fed.n_agents)");
  cmd->add_option("--episodes", f.episodes, "Training episodes (fed.episodes)");
  cmd->add_option("--workers", f.workers, "Worker threads (fed.workers)");
}

void apply_sets(RunConfig& config, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
  }
}

RunConfig resolve_config(const CommonFlags& f, const std::string& base_text = {}) {
  RunConfig config;
  if (!base_text.empty()) config = parse_config(base_text);
  if (!f.config.empty()) config = load_config(f.config);
  apply_sets(config, f.sets);
  if (f.seed) config.fed.seed = *f.seed;
  if (f.agents) config.fed.n_agents = *f.agents;
  if (f.episodes) config.fed.episodes = *f.episodes;
  if (f.workers) config.fed.workers = *f.workers;
  if (f.out_dir) config.out_dir = *f.out_dir;
  if (f.synthetic) {
    config.prices.synthetic = true;
    config.prices.csv_path.clear();
  }
  if (!f.prices.empty()) config.prices.csv_path = f.prices;
  config.validate();
  return config;
}

void require_price_source(const RunConfig& config) {
  if (config.prices.csv_path.empty() && !config.prices.synthetic) {
    throw UsageError("no price source: pass --prices FILE or --synthetic (or set price.csv / price.synthetic)");
  }
}

int cmd_train(const CommonFlags& f, const std::string& resume, std::size_t checkpoint_every) {
  std::optional<Checkpoint> ckpt;
  if (!resume.empty()) ckpt = load_checkpoint(resume);
  RunConfig config = resolve_config(f, ckpt ? ckpt->config_text : std::string{});
  require_price_source(config);

  const PriceSeries prices = load_prices(config);
  const PriceSplit split = split_train_eval(prices);
  if (split.train.empty()) throw Error(ErrorKind::InsufficientData, "price data has no training days");
  double scale = config.price_scale > 0.0 ? config.price_scale : split.train_mean_price();
  if (ckpt) scale = ckpt->price_scale;

  const std::string config_text = serialize_config(config);
  FederatedTrainer trainer(build_setup(config, scale), share_segments(split.train));
  if (ckpt) {
    restore(trainer, *ckpt);
    std::cout << "resumed at episode " << trainer.episodes_done() << '\n';
  }

  const fs::path out = config.out_dir;
  fs::create_directories(out);
  const fs::path ckpt_path = out / "checkpoint.bin";

  trainer.run(0, [&](std::size_t episode, std::span<const RoundLog> logs) {
    double reward = 0, price = 0, anxiety = 0, departure = 0, alpha = 0;
    for (const auto& l : logs) {
      reward += l.reward;
      price += l.price_reward;
      anxiety += l.anxiety_reward;
      departure += l.departure_reward;
      alpha += l.alpha;
    }
    const double n = static_cast<double>(logs.size());
    std::printf("episode %zu/%zu reward %.4f price %.4f anxiety %.4f departure %.4f alpha %.4f\n", episode,
                config.fed.episodes, reward / n, price / n, anxiety / n, departure / n, alpha / n);
    std::fflush(stdout);
    if (checkpoint_every > 0 && episode % checkpoint_every == 0) {
      save_checkpoint(ckpt_path, snapshot(trainer, config_text));
    }
  });

  save_checkpoint(ckpt_path, snapshot(trainer, config_text));
  write_round_logs_csv(trainer.logs(), (out / "round_log.csv").string());
  export_training_curves(trainer.logs(), out / "training_curves.csv");
  std::cout << "wrote " << ckpt_path.string() << ", " << (out / "round_log.csv").string() << '\n';
  return 0;
}

struct WeekFlags {
  std::string checkpoint;
  std::string start;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> drive_hours;
  bool write_metrics = true;
};

// Finds the week on the held-out split: the requested start date, or the
// first evaluation segment long enough.
std::pair<std::shared_ptr<const PriceSeries>, std::size_t> locate_week(const PriceSeries& prices,
                                                                       const std::string& start,
                                                                       std::size_t hours) {
  const PriceSplit split = split_train_eval(prices);
  if (!start.empty()) {
    HourStamp stamp;
    if (!parse_timestamp(start + "T00:00", stamp)) throw UsageError("bad --start date '" + start + "'");
    for (const auto& seg : split.eval) {
      const std::size_t i = seg.index_of(stamp);
      if (i < seg.size() && i + hours <= seg.size()) return {std::make_shared<PriceSeries>(seg), i};
    }
    // Fall back to the full series when the week crosses into training days.
    const std::size_t i = prices.index_of(stamp);
    if (i < prices.size() && i + hours <= prices.size()) return {std::make_shared<PriceSeries>(prices), i};
    throw Error(ErrorKind::InsufficientData, "no " + std::to_string(hours) + " h of prices from " + start);
  }
  for (const auto& seg : split.eval) {
    for (std::size_t i = 0; i + hours <= seg.size(); ++i) {
      if (hour_of_day(seg.timestamp(i)) == 0) return {std::make_shared<PriceSeries>(seg), i};
    }
  }
  throw Error(ErrorKind::InsufficientData, "evaluation split holds no full week of prices");
}

int cmd_eval(const CommonFlags& f, const WeekFlags& w) {
  if (w.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const Checkpoint ckpt = load_checkpoint(w.checkpoint);
  RunConfig config = resolve_config(f, ckpt.config_text);
  if (!w.start.empty()) config.eval_start = w.start;
  if (w.seed) config.eval_seed = *w.seed;
  if (w.drive_hours) config.drive_hours = *w.drive_hours;
  require_price_source(config);

  const TrainingSetup setup = build_setup(config, ckpt.price_scale);
  Rng init_rng(0);
  GaussianPolicy policy(setup.env.state_dim(), setup.sac.policy_hidden, init_rng);
  if (policy.layout() != ckpt.globals.policy.layout) {
    throw Error(ErrorKind::LayoutMismatch, "checkpoint policy does not match the configured network shape");
  }
  policy.set_params(ckpt.globals.policy);

  const PriceSeries prices = load_prices(config);
  WeekOptions opts;
  opts.drive_hours = config.drive_hours;
  auto [series, start_index] = locate_week(prices, config.eval_start, opts.hours);

  Rng plan_rng(config.eval_seed);
  SimulationInputs in;
  in.policy = &policy;
  in.plans = build_week_plan(setup.profiles, plan_rng, series->timestamp(start_index), opts);
  in.profiles = setup.profiles;
  in.prices = series;
  in.start_index = start_index;
  in.env = setup.env;
  in.bounds = setup.sac.bounds;
  in.squash = setup.sac.squash;
  in.seed = config.eval_seed;
  const SimulationResult result = simulate_week(in);

  const fs::path out = config.out_dir;
  fs::create_directories(out);
  export_plot_data(result.trace, out / "trace.csv");

  const auto& m = result.metrics;
  std::ostringstream summary;
  summary << "week_start " << format_timestamp(series->timestamp(start_index)) << '\n'
          << "evs " << m.evs << '\n'
          << "plugged_hours " << m.plugged_hours << '\n'
          << "total_energy_cost " << m.total_energy_cost << '\n'
          << "total_anxiety_penalty " << m.total_anxiety_penalty << '\n'
          << "total_departure_penalty " << m.total_departure_penalty << '\n'
          << "mean_reward " << m.mean_reward << '\n';
  try {
    summary << "price_correlation " << price_responsiveness(result.trace) << '\n';
  } catch (const Error&) {
    summary << "price_correlation nan\n";
  }
  std::cout << summary.str();
  if (w.write_metrics) {
    std::ofstream(out / "metrics.txt") << summary.str();
  } else {
    std::ofstream plan(out / "week_plan.csv");
    plan << "ev,location,start,end\n";
    for (std::size_t ev = 0; ev < in.plans.size(); ++ev) {
      for (const auto& leg : in.plans[ev].legs) {
        plan << ev << ',' << to_string(leg.location) << ',' << leg.start << ',' << leg.end << '\n';
      }
    }
  }
  return 0;
}

int cmd_synth(const CommonFlags& f, std::optional<std::uint64_t> seed, std::optional<std::size_t> days,
              const std::string& out_path) {
  RunConfig config = resolve_config(f);
  if (seed) config.prices.synth.seed = *seed;
  if (days) config.prices.synth.days = *days;
  const PriceSeries series = synthesize_prices(config.prices.synth);
  if (out_path.empty() || out_path == "-") {
    write_csv(series, std::cout);
  } else {
    write_csv(series, fs::path(out_path));
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds, bool inject_fault) {
  GradCheckOptions opts;
  opts.inject_fault = inject_fault;
  const auto reports = gradient_suite(seed, seeds, NetworkShapes{}, opts);
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-18s checked %7zu kinks %5zu max_rel_error %.3e %s\n", r.network.c_str(), r.checked, r.kinks,
                r.max_rel_error, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      ok = false;
      std::fprintf(stderr, "gradient mismatch in %s at %s\n", r.network.c_str(), r.worst.c_str());
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated soft actor-critic trainer for EV charging and discharging"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string resume;
  std::size_t checkpoint_every = 0;
  auto* train = app.add_subcommand("train", "Run federated training");
  add_config_flags(train, common);
  add_training_flags(train, common);
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--checkpoint-every", checkpoint_every, "Also write the checkpoint every N episodes");

  WeekFlags week;
  auto add_week_flags = [&](CLI::App* cmd) {
    add_config_flags(cmd, common);
    cmd->add_option("--checkpoint", week.checkpoint, "Trained checkpoint")->required();
    cmd->add_option("--start", week.start, "First day of the simulated week, YYYY-MM-DD (eval.start)");
    cmd->add_option("--seed", week.seed, "Evaluation seed (eval.seed)");
    cmd->add_option("--drive-hours", week.drive_hours, "Hours per driving leg (eval.drive_hours)");
  };
  auto* eval = app.add_subcommand("eval", "Simulate a held-out week; write trace.csv and metrics.txt");
  add_week_flags(eval);
  auto* sim = app.add_subcommand("simulate-week", "Simulate a held-out week; write trace.csv and week_plan.csv");
  add_week_flags(sim);

  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_days;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-prices", "Write a synthetic price CSV");
  synth->add_option("--config", common.config, "Run configuration file");
  synth->add_option("--set", common.sets, "Override one configuration key (repeatable)");
  synth->add_option("--seed", synth_seed, "Noise seed (synth.seed)");
  synth->add_option("--days", synth_days, "Number of days (synth.days)");
  synth->add_option("-o,--out", synth_out, "Output CSV, '-' for stdout");

  std::uint64_t gc_seed = 1;
  std::size_t gc_seeds = 10;
  bool inject_fault = false;
  auto* grad = app.add_subcommand("grad-check", "Compare network gradients against finite differences");
  grad->add_option("--seed", gc_seed, "First seed")->capture_default_str();
  grad->add_option("--seeds", gc_seeds, "Number of seeds")->capture_default_str();
  grad->add_flag("--inject-fault", inject_fault, "Corrupt one analytic gradient entry (self-test)");

  auto* print = app.add_subcommand("print-config", "Print the resolved configuration with all defaults");
  print->add_option("--config", common.config, "Run configuration file");
  print->add_option("--set", common.sets, "Override one configuration key (repeatable)");
  bool list_keys = false;
  print->add_flag("--keys", list_keys, "List configuration keys only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*train) return cmd_train(common, resume, checkpoint_every);
    if (*eval) return cmd_eval(common, week);
    if (*sim) {
      week.write_metrics = false;
      return cmd_eval(common, week);
    }
    if (*synth) return cmd_synth(common, synth_seed, synth_days, synth_out);
    if (*grad) return cmd_gradcheck(gc_seed, gc_seeds, inject_fault);
    if (*print) {
      const RunConfig config = resolve_config(common);
      if (list_keys) {
        for (const auto& k : config_keys(config)) std::cout << k << '\n';
      } else {
        std::cout << serialize_config(config);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.message() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
