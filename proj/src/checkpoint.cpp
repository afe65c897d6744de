#include "fedev/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "fedev/error.hpp"

namespace fedev {

namespace {

constexpr char kMagic[8] = {'F', 'E', 'D', 'E', 'V', 'C', 'K', 'P'};

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng parse_rng(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw Error(ErrorKind::CorruptPayload, "bad RNG state");
  return rng;
}

void put_params(ByteWriter& w, const ParamVector& p) { w.blob(serialize(p)); }
ParamVector get_params(ByteReader& r) { return deserialize(r.blob()); }

void put_doubles(ByteWriter& w, const std::vector<double>& v) {
  w.u64(v.size());
  for (double x : v) w.f64(x);
}

std::vector<double> get_doubles(ByteReader& r) {
  const auto n = r.u64();
  if (n > r.remaining() / 8) throw Error(ErrorKind::CorruptPayload, "vector longer than payload");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = r.f64();
  return v;
}

void put_adam(ByteWriter& w, const AdamState& s) {
  w.u64(s.step);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  put_doubles(w, s.m);
  put_doubles(w, s.v);
}

AdamState get_adam(ByteReader& r) {
  AdamState s;
  s.step = r.u64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  s.m = get_doubles(r);
  s.v = get_doubles(r);
  if (s.m.size() != s.v.size()) throw Error(ErrorKind::CorruptPayload, "optimizer moments differ in size");
  return s;
}

void check_layout(const ParamVector& stored, const Layout& expected, const std::string& what) {
  if (stored.layout != expected) {
    throw Error(ErrorKind::LayoutMismatch, "checkpoint " + what + " does not match the configured network");
  }
}

void check_adam(const AdamState& s, std::size_t n, const std::string& what) {
  if (s.m.size() != n) throw Error(ErrorKind::LayoutMismatch, "checkpoint optimizer " + what + " size");
}

}  // namespace

Checkpoint snapshot(const FederatedTrainer& trainer, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  c.price_scale = trainer.setup().env.price_scale;
  c.episodes_done = trainer.episodes_done();
  c.broadcast_pending = trainer.broadcast_pending();
  c.globals = trainer.globals();
  c.logs = trainer.logs();
  for (const auto& w : trainer.workers()) {
    const AgentModels& m = w.agent.models();
    AgentSnapshot a;
    a.policy = m.policy.params();
    a.q1 = m.q1.params("q.");
    a.q2 = m.q2.params("q.");
    a.v1 = m.v1.params("v.");
    a.v2 = m.v2.params("v.");
    a.v1_target = m.v1_target.params("v.");
    a.v2_target = m.v2_target.params("v.");
    a.log_alpha = m.log_alpha;
    a.optimizers = w.agent.optimizers();
    a.buffer_capacity = w.agent.buffer().capacity();
    a.buffer_cursor = w.agent.buffer().cursor();
    a.buffer = w.agent.buffer().storage();
    a.agent_rng = rng_state(w.agent.rng());
    a.env_rng = rng_state(w.env_rng);
    c.agents.push_back(std::move(a));
  }
  return c;
}

void restore(FederatedTrainer& trainer, const Checkpoint& c) {
  auto& workers = trainer.workers();
  if (c.agents.size() != workers.size()) {
    throw Error(ErrorKind::LayoutMismatch, "checkpoint has " + std::to_string(c.agents.size()) +
                                               " agents, configuration has " + std::to_string(workers.size()));
  }
  for (std::size_t i = 0; i < workers.size(); ++i) {
    const AgentSnapshot& a = c.agents[i];
    AgentWorker& w = workers[i];
    AgentModels& m = w.agent.models();
    check_layout(a.policy, m.policy.layout(), "policy");
    check_layout(a.q1, m.q1.layout("q."), "critic");
    check_layout(a.q2, m.q2.layout("q."), "critic");
    check_layout(a.v1, m.v1.layout("v."), "value");
    check_layout(a.v2, m.v2.layout("v."), "value");
    check_layout(a.v1_target, m.v1.layout("v."), "value target");
    check_layout(a.v2_target, m.v2.layout("v."), "value target");
    check_adam(a.optimizers.policy, m.policy.parameter_count(), "policy");
    check_adam(a.optimizers.q1, m.q1.parameter_count(), "critic");
    check_adam(a.optimizers.q2, m.q2.parameter_count(), "critic");
    check_adam(a.optimizers.v1, m.v1.parameter_count(), "value");
    check_adam(a.optimizers.v2, m.v2.parameter_count(), "value");
    check_adam(a.optimizers.alpha, 1, "alpha");
    for (const auto& t : a.buffer) {
      if (t.state.size() != w.agent.state_dim() || t.next_state.size() != w.agent.state_dim()) {
        throw Error(ErrorKind::LayoutMismatch, "checkpoint transitions have a different state size");
      }
    }
    m.policy.set_params(a.policy);
    m.q1.set_params(a.q1, "q.");
    m.q2.set_params(a.q2, "q.");
    m.v1.set_params(a.v1, "v.");
    m.v2.set_params(a.v2, "v.");
    m.v1_target.set_params(a.v1_target, "v.");
    m.v2_target.set_params(a.v2_target, "v.");
    m.log_alpha = a.log_alpha;
    w.agent.optimizers() = a.optimizers;
    w.agent.buffer() = ReplayBuffer::restore(a.buffer_capacity, a.buffer, a.buffer_cursor);
    w.agent.rng() = parse_rng(a.agent_rng);
    w.env_rng = parse_rng(a.env_rng);
  }
  if (c.episodes_done > 0 && c.globals.policy.layout != workers.front().agent.models().policy.layout()) {
    throw Error(ErrorKind::LayoutMismatch, "checkpoint global policy layout");
  }
  trainer.restore_progress(c.episodes_done, c.globals, c.broadcast_pending, c.logs);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic));
  w.u32(c.version);
  w.str(c.config_text);
  w.f64(c.price_scale);
  w.u64(c.episodes_done);
  w.u8(c.broadcast_pending ? 1 : 0);

  put_params(w, c.globals.policy);
  put_params(w, c.globals.q1);
  put_params(w, c.globals.q2);
  put_params(w, c.globals.v1);
  put_params(w, c.globals.v2);
  w.f64(c.globals.log_alpha);

  w.u32(static_cast<std::uint32_t>(c.agents.size()));
  for (const auto& a : c.agents) {
    for (const ParamVector* p : {&a.policy, &a.q1, &a.q2, &a.v1, &a.v2, &a.v1_target, &a.v2_target}) {
      put_params(w, *p);
    }
    w.f64(a.log_alpha);
    const auto& o = a.optimizers;
    for (const AdamState* s : {&o.policy, &o.q1, &o.q2, &o.v1, &o.v2, &o.alpha}) put_adam(w, *s);
    w.u64(a.buffer_capacity);
    w.u64(a.buffer_cursor);
    w.u64(a.buffer.size());
    for (const auto& t : a.buffer) {
      put_doubles(w, t.state);
      w.f64(t.action);
      w.f64(t.reward);
      put_doubles(w, t.next_state);
      w.u8(t.done ? 1 : 0);
    }
    w.str(a.agent_rng);
    w.str(a.env_rng);
  }

  // Wall-clock durations are left out so identical runs give identical files.
  w.u64(c.logs.size());
  for (const auto& l : c.logs) {
    w.u64(l.episode);
    w.u64(l.agent);
    for (double v : {l.reward, l.price_reward, l.anxiety_reward, l.departure_reward, l.critic_loss,
                     l.value_loss, l.actor_loss, l.alpha}) {
      w.f64(v);
    }
    w.u64(l.steps);
    w.u64(l.updates);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.take(sizeof kMagic);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorKind::CorruptPayload, "not a checkpoint file");
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw Error(ErrorKind::VersionMismatch, "checkpoint format " + std::to_string(c.version) +
                                                ", expected " + std::to_string(kCheckpointVersion));
  }
  c.config_text = r.str();
  c.price_scale = r.f64();
  c.episodes_done = r.u64();
  c.broadcast_pending = r.u8() != 0;

  c.globals.policy = get_params(r);
  c.globals.q1 = get_params(r);
  c.globals.q2 = get_params(r);
  c.globals.v1 = get_params(r);
  c.globals.v2 = get_params(r);
  c.globals.log_alpha = r.f64();

  const auto n_agents = r.u32();
  for (std::uint32_t i = 0; i < n_agents; ++i) {
    AgentSnapshot a;
    for (ParamVector* p : {&a.policy, &a.q1, &a.q2, &a.v1, &a.v2, &a.v1_target, &a.v2_target}) {
      *p = get_params(r);
    }
    a.log_alpha = r.f64();
    auto& o = a.optimizers;
    for (AdamState* s : {&o.policy, &o.q1, &o.q2, &o.v1, &o.v2, &o.alpha}) *s = get_adam(r);
    a.buffer_capacity = r.u64();
    a.buffer_cursor = r.u64();
    const auto n = r.u64();
    if (n > r.remaining()) throw Error(ErrorKind::CorruptPayload, "buffer longer than payload");
    a.buffer.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t k = 0; k < n; ++k) {
      Transition t;
      t.state = get_doubles(r);
      t.action = r.f64();
      t.reward = r.f64();
      t.next_state = get_doubles(r);
      t.done = r.u8() != 0;
      a.buffer.push_back(std::move(t));
    }
    a.agent_rng = r.str();
    a.env_rng = r.str();
    c.agents.push_back(std::move(a));
  }

  const auto n_logs = r.u64();
  if (n_logs > r.remaining()) throw Error(ErrorKind::CorruptPayload, "log count exceeds payload");
  for (std::uint64_t k = 0; k < n_logs; ++k) {
    RoundLog l;
    l.episode = r.u64();
    l.agent = r.u64();
    for (double* v : {&l.reward, &l.price_reward, &l.anxiety_reward, &l.departure_reward, &l.critic_loss,
                      &l.value_loss, &l.actor_loss, &l.alpha}) {
      *v = r.f64();
    }
    l.steps = r.u64();
    l.updates = r.u64();
    c.logs.push_back(l);
  }
  if (!r.at_end()) throw Error(ErrorKind::CorruptPayload, "trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fedev
