#include <gtest/gtest.h>

#include "fedev/error.hpp"
#include "fedev/run_config.hpp"

using namespace fedev;

namespace {

ErrorKind parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "accepted:\n" << text;
  return ErrorKind::IoError;
}

}  // namespace

TEST(RunConfig, DefaultsRoundTrip) {
  const std::string text = serialize_config(RunConfig{});
  const RunConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
}

TEST(RunConfig, ModifiedRoundTrip) {
  RunConfig c;
  set_config_value(c, "profiles.count", "4");
  set_config_value(c, "profile.3.d1_min", "0.7");
  set_config_value(c, "profile.1.home_arrival.sd", "0.123456789012345");
  set_config_value(c, "sac.policy_hidden", "64, 32");
  set_config_value(c, "sac.lr_actor", "3e-4");
  set_config_value(c, "sac.policy_squash", "tanh");
  set_config_value(c, "price.synthetic", "true");
  set_config_value(c, "synth.start", "2018-05-03T07:00");
  set_config_value(c, "eval.start", "2017-01-23");
  set_config_value(c, "fed.aggregate_alpha", "1");
  const std::string text = serialize_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.profiles.size(), 4u);
  EXPECT_EQ(back.profiles[3].d1_range.lo, 0.7);
  EXPECT_EQ(back.profiles[1].schedule.home_arrival.sd, 0.123456789012345);
  EXPECT_EQ(back.sac.policy_hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(back.sac.squash, Squash::Tanh);
  EXPECT_TRUE(back.fed.aggregate_alpha);
}

TEST(RunConfig, DefaultsMatchReferenceSettings) {
  const RunConfig c;
  EXPECT_EQ(c.price_window_n, 24u);
  EXPECT_EQ(c.battery.eta, 0.98);
  EXPECT_EQ(c.reward.sigma_p, 8.0);
  EXPECT_EQ(c.reward.sigma_x, 15.0);
  EXPECT_EQ(c.reward.sigma_d, 35.0);
  EXPECT_EQ(c.sac.lr_actor, 1e-3);
  EXPECT_EQ(c.sac.lr_critic, 1e-2);
  EXPECT_EQ(c.sac.lr_alpha, 1e-2);
  EXPECT_EQ(c.sac.zeta, 0.005);
  EXPECT_EQ(c.profiles.size(), 3u);
  EXPECT_EQ(c.fed.n_agents, 3u);
}

TEST(RunConfig, CommentsAndBlankLines) {
  const RunConfig c = parse_config("# header\n\n  sac.gamma = 0.95   # trailing\nfed.n_agents=2\n");
  EXPECT_EQ(c.sac.gamma, 0.95);
  EXPECT_EQ(c.fed.n_agents, 2u);
}

TEST(RunConfig, ProfileCountMayFollowProfileKeys) {
  const RunConfig c = parse_config("profile.4.d2_mean = 8\nprofiles.count = 5\n");
  EXPECT_EQ(c.profiles[4].d2_mean, 8.0);
}

TEST(RunConfig, Rejections) {
  EXPECT_EQ(parse_error("sac.gama = 0.9\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("sac.gamma = fast\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("sac.gamma\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("sac.gamma = 0.9\nsac.gamma = 0.8\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("profile.3.d1_min = 0.5\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("profile.0.bogus = 0.5\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("sac.policy_squash = sigmoid\n"), ErrorKind::ConfigError);
  EXPECT_EQ(parse_error("eval.start = yesterday\n"), ErrorKind::ConfigError);
}

TEST(RunConfig, ValidatedOnLoad) {
  EXPECT_THROW(parse_config("sac.gamma = 1.5\n"), Error);
  EXPECT_THROW(parse_config("battery.a_min = 0.3\n"), Error);
  EXPECT_THROW(parse_config("fed.n_agents = 0\n"), Error);
  EXPECT_THROW(parse_config("profile.0.d1_max = 1.2\n"), Error);
}

TEST(RunConfig, EveryKeyIsSettable) {
  RunConfig c;
  const std::string text = serialize_config(c);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  EXPECT_EQ(config_keys(c).size(), lines);
}

TEST(RunConfig, BuildSetup) {
  RunConfig c;
  c.battery.a_min = -0.1;
  const TrainingSetup s = build_setup(c, 42.0);
  EXPECT_EQ(s.env.price_scale, 42.0);
  EXPECT_EQ(s.sac.bounds.lo, -0.1);
  EXPECT_EQ(s.sac.bounds.hi, 0.2);
  EXPECT_THROW(load_prices(c), Error);
  c.prices.synthetic = true;
  EXPECT_EQ(load_prices(c).size(), 60u * 24u);
}
