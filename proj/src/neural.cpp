#include "fedev/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "fedev/error.hpp"

namespace fedev {

// ---------------------------------------------------------------------------
// Parameter containers

std::size_t TensorSpec::size() const noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::size_t layout_size(const Layout& layout) noexcept {
  std::size_t n = 0;
  for (const auto& t : layout) n += t.size();
  return n;
}

ParamVector::ParamVector(Layout l, std::vector<double> v) : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != layout_size(layout)) {
    throw Error(ErrorKind::ShapeMismatch, "values length " + std::to_string(values.size()) +
                                              " does not match layout size " +
                                              std::to_string(layout_size(layout)));
  }
}

ParamVector ParamVector::zeros(Layout l) {
  const std::size_t n = layout_size(l);
  return ParamVector(std::move(l), std::vector<double>(n, 0.0));
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::raw(std::span<const std::uint8_t> data) {
  bytes_.insert(bytes_.end(), data.begin(), data.end());
}

void ByteWriter::blob(std::span<const std::uint8_t> data) {
  u64(data.size());
  raw(data);
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) {
    throw Error(ErrorKind::CorruptPayload, "payload truncated: need " + std::to_string(n) +
                                               " bytes, have " + std::to_string(remaining()));
  }
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const auto n = u32();
  auto b = take(n);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> ByteReader::blob() {
  const auto n = u64();
  return take(static_cast<std::size_t>(n));
}

std::vector<std::uint8_t> serialize(const ParamVector& params) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(params.layout.size()));
  for (const auto& t : params.layout) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
  }
  for (double v : params.values) w.f64(v);
  return w.take();
}

ParamVector deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto count = r.u32();
  Layout layout;
  // Every tensor header needs at least 8 bytes; reject absurd counts early.
  if (count > r.remaining() / 8) throw Error(ErrorKind::CorruptPayload, "tensor count exceeds payload");
  layout.reserve(count);
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorSpec t;
    t.name = r.str();
    const auto rank = r.u32();
    if (rank > r.remaining() / 8) throw Error(ErrorKind::CorruptPayload, "rank exceeds payload");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64());
    const std::size_t n = t.size();
    if (n > r.remaining() / 8) throw Error(ErrorKind::CorruptPayload, "tensor larger than payload");
    total += n;
    layout.push_back(std::move(t));
  }
  if (r.remaining() != total * 8) {
    throw Error(ErrorKind::CorruptPayload, "expected " + std::to_string(total * 8) +
                                               " value bytes, found " +
                                               std::to_string(r.remaining()));
  }
  std::vector<double> values(total);
  for (auto& v : values) v = r.f64();
  return ParamVector(std::move(layout), std::move(values));
}

ParamVector deserialize(std::span<const std::uint8_t> bytes, const Layout& expected) {
  ParamVector p = deserialize(bytes);
  if (p.layout != expected) throw Error(ErrorKind::LayoutMismatch, "payload layout differs from model");
  return p;
}

// ---------------------------------------------------------------------------
// Mlp

namespace {

std::vector<DenseLayer> make_layers(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw Error(ErrorKind::ShapeMismatch, "an Mlp needs at least two widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] == 0 || sizes[l + 1] == 0) throw Error(ErrorKind::ShapeMismatch, "zero-width layer");
    layers.push_back({RowMatrix::Zero(static_cast<Eigen::Index>(sizes[l + 1]),
                                      static_cast<Eigen::Index>(sizes[l])),
                      Vector::Zero(static_cast<Eigen::Index>(sizes[l + 1]))});
  }
  return layers;
}

void check_rows(const Matrix& m, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(m.rows()) != expected) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": expected " +
                                              std::to_string(expected) + " rows, got " +
                                              std::to_string(m.rows()));
  }
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation output_activation)
    : sizes_(std::move(layer_sizes)), output_activation_(output_activation), layers_(make_layers(sizes_)) {}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation output_activation, Rng& rng)
    : Mlp(std::move(layer_sizes), output_activation) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = dist(rng);
    }
  }
}

std::size_t Mlp::parameter_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) n += (sizes_[l] + 1) * sizes_[l + 1];
  return n;
}

bool Mlp::relu_after(std::size_t layer) const noexcept {
  return layer + 1 < layers_.size() || output_activation_ == Activation::Relu;
}

Matrix Mlp::forward(const Matrix& input) const {
  check_rows(input, input_size(), "Mlp::forward");
  Matrix a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    if (relu_after(l)) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Matrix Mlp::forward(const Matrix& input, MlpCache& cache) const {
  check_rows(input, input_size(), "Mlp::forward");
  cache.inputs.resize(layers_.size());
  cache.pre.resize(layers_.size());
  cache.inputs[0] = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix& z = cache.pre[l];
    z.noalias() = layers_[l].weight * cache.inputs[l];
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      cache.inputs[l + 1] = z.cwiseMax(0.0);
    }
  }
  const Matrix& last = cache.pre.back();
  return relu_after(layers_.size() - 1) ? Matrix(last.cwiseMax(0.0)) : last;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& upstream, std::span<double> grad) const {
  if (grad.size() != parameter_count()) throw Error(ErrorKind::ShapeMismatch, "gradient buffer size");
  if (cache.pre.size() != layers_.size()) throw Error(ErrorKind::ShapeMismatch, "stale forward cache");
  check_rows(upstream, output_size(), "Mlp::backward");
  if (upstream.cols() != cache.inputs[0].cols()) {
    throw Error(ErrorKind::ShapeMismatch, "upstream batch size differs from forward batch");
  }
  // Offsets of each layer's block in the flat gradient.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offset[l + 1] = offset[l] + static_cast<std::size_t>(layers_[l].weight.size() + layers_[l].bias.size());
  }
  Matrix delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (relu_after(l)) delta = (cache.pre[l].array() > 0.0).select(delta, 0.0);
    const auto& layer = layers_[l];
    Eigen::Map<RowMatrix> gw(grad.data() + offset[l], layer.weight.rows(), layer.weight.cols());
    Eigen::Map<Vector> gb(grad.data() + offset[l] + layer.weight.size(), layer.bias.size());
    gw.noalias() += delta * cache.inputs[l].transpose();
    gb.noalias() += delta.rowwise().sum();
    Matrix next = layer.weight.transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

Layout Mlp::layout(const std::string& prefix) const {
  Layout out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const std::string base = prefix + "l" + std::to_string(l) + ".";
    out.push_back({base + "weight",
                   {static_cast<std::uint64_t>(layer.weight.rows()),
                    static_cast<std::uint64_t>(layer.weight.cols())}});
    out.push_back({base + "bias", {static_cast<std::uint64_t>(layer.bias.size())}});
  }
  return out;
}

std::vector<double> Mlp::flat() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers_) {
    out.insert(out.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  return out;
}

void Mlp::set_flat(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(parameter_count()) +
                                              " parameters, got " + std::to_string(values.size()));
  }
  std::size_t pos = 0;
  for (auto& layer : layers_) {
    std::copy_n(values.data() + pos, layer.weight.size(), layer.weight.data());
    pos += static_cast<std::size_t>(layer.weight.size());
    std::copy_n(values.data() + pos, layer.bias.size(), layer.bias.data());
    pos += static_cast<std::size_t>(layer.bias.size());
  }
}

ParamVector Mlp::params(const std::string& prefix) const { return ParamVector(layout(prefix), flat()); }

void Mlp::set_params(const ParamVector& params, const std::string& prefix) {
  if (params.layout != layout(prefix)) throw Error(ErrorKind::LayoutMismatch, "Mlp '" + prefix + "'");
  set_flat(params.values);
}

// ---------------------------------------------------------------------------
// GaussianPolicy

GaussianPolicy::GaussianPolicy(std::size_t state_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  if (hidden.empty()) throw Error(ErrorKind::ShapeMismatch, "policy trunk needs hidden layers");
  std::vector<std::size_t> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  trunk_ = Mlp(sizes, Activation::Relu, rng);
  mu_head_ = Mlp({hidden.back(), 1}, Activation::Identity, rng);
  log_sigma_head_ = Mlp({hidden.back(), 1}, Activation::Identity, rng);
}

std::size_t GaussianPolicy::parameter_count() const noexcept {
  return trunk_.parameter_count() + mu_head_.parameter_count() + log_sigma_head_.parameter_count();
}

PolicyForward GaussianPolicy::forward(const Matrix& states) const {
  PolicyForward out;
  const Matrix features = trunk_.forward(states, out.trunk_cache);
  out.mu = mu_head_.forward(features, out.mu_cache).row(0);
  out.raw_log_sigma = log_sigma_head_.forward(features, out.log_sigma_cache).row(0);
  out.log_sigma = out.raw_log_sigma.cwiseMax(kLogSigmaMin).cwiseMin(kLogSigmaMax);
  return out;
}

void GaussianPolicy::backward(const PolicyForward& fwd, const RowVector& d_mu,
                              const RowVector& d_log_sigma, std::span<double> grad) const {
  if (grad.size() != parameter_count()) throw Error(ErrorKind::ShapeMismatch, "policy gradient buffer size");
  const std::size_t n_trunk = trunk_.parameter_count();
  const std::size_t n_mu = mu_head_.parameter_count();
  RowVector d_raw = d_log_sigma;
  for (Eigen::Index i = 0; i < d_raw.size(); ++i) {
    const double r = fwd.raw_log_sigma(i);
    if (r < kLogSigmaMin || r > kLogSigmaMax) d_raw(i) = 0.0;
  }
  Matrix d_features = mu_head_.backward(fwd.mu_cache, Matrix(d_mu), grad.subspan(n_trunk, n_mu));
  d_features += log_sigma_head_.backward(fwd.log_sigma_cache, Matrix(d_raw), grad.subspan(n_trunk + n_mu));
  trunk_.backward(fwd.trunk_cache, d_features, grad.subspan(0, n_trunk));
}

Layout GaussianPolicy::layout() const {
  Layout out = trunk_.layout("trunk.");
  for (auto& t : mu_head_.layout("mu.")) out.push_back(std::move(t));
  for (auto& t : log_sigma_head_.layout("log_sigma.")) out.push_back(std::move(t));
  return out;
}

std::vector<double> GaussianPolicy::flat() const {
  std::vector<double> out = trunk_.flat();
  const auto mu = mu_head_.flat();
  const auto ls = log_sigma_head_.flat();
  out.insert(out.end(), mu.begin(), mu.end());
  out.insert(out.end(), ls.begin(), ls.end());
  return out;
}

void GaussianPolicy::set_flat(std::span<const double> values) {
  if (values.size() != parameter_count()) throw Error(ErrorKind::ShapeMismatch, "policy parameter count");
  const std::size_t n_trunk = trunk_.parameter_count();
  const std::size_t n_mu = mu_head_.parameter_count();
  trunk_.set_flat(values.subspan(0, n_trunk));
  mu_head_.set_flat(values.subspan(n_trunk, n_mu));
  log_sigma_head_.set_flat(values.subspan(n_trunk + n_mu));
}

ParamVector GaussianPolicy::params() const { return ParamVector(layout(), flat()); }

void GaussianPolicy::set_params(const ParamVector& params) {
  if (params.layout != layout()) throw Error(ErrorKind::LayoutMismatch, "policy layout");
  set_flat(params.values);
}

PolicySample evaluate_sample(double mu, double log_sigma, double kappa, ActionBounds bounds,
                             Squash squash) {
  constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)
  PolicySample s;
  s.raw = mu + kappa * std::exp(log_sigma);
  s.log_prob = -0.5 * kappa * kappa - log_sigma - kHalfLog2Pi;
  if (squash == Squash::Clip) {
    s.action = std::clamp(s.raw, bounds.lo, bounds.hi);
    s.daction_draw = (s.raw > bounds.lo && s.raw < bounds.hi) ? 1.0 : 0.0;
    s.dlogp_draw = 0.0;
  } else {
    const double mid = 0.5 * (bounds.lo + bounds.hi);
    const double half = 0.5 * (bounds.hi - bounds.lo);
    const double t = std::tanh(s.raw);
    // log(1 - tanh(x)^2) = 2 * (log 2 - x - softplus(-2x))
    const double softplus = std::max(-2.0 * s.raw, 0.0) + std::log1p(std::exp(-std::abs(2.0 * s.raw)));
    const double log_one_minus_t2 = 2.0 * (std::numbers::ln2 - s.raw - softplus);
    s.action = mid + half * t;
    s.daction_draw = half * (1.0 - t * t);
    s.log_prob -= std::log(half) + log_one_minus_t2;
    s.dlogp_draw = 2.0 * t;
  }
  return s;
}

ActionDraw sample_action(const GaussianPolicy& policy, std::span<const double> state, Rng& rng,
                         ActionBounds bounds, Squash squash, bool deterministic) {
  if (state.size() != policy.state_dim()) throw Error(ErrorKind::ShapeMismatch, "state length");
  const Matrix s = Eigen::Map<const Vector>(state.data(), static_cast<Eigen::Index>(state.size()));
  const PolicyForward fwd = policy.forward(s);
  double kappa = 0.0;
  if (!deterministic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    kappa = normal(rng);
  }
  const PolicySample ps = evaluate_sample(fwd.mu(0), fwd.log_sigma(0), kappa, bounds, squash);
  return {ps.action, ps.log_prob, kappa};
}

// ---------------------------------------------------------------------------
// Optimisation

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "adam_step: params " + std::to_string(params.size()) +
                                              ", grads " + std::to_string(grads.size()) +
                                              ", state " + std::to_string(state.m.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state, double lr) {
  if (!params.same_layout(grads)) throw Error(ErrorKind::ShapeMismatch, "adam_step: gradient layout");
  adam_step(std::span<double>(params.values), std::span<const double>(grads.values), state, lr);
}

void polyak_update(std::span<double> target, std::span<const double> source, double zeta) {
  if (target.size() != source.size()) throw Error(ErrorKind::LayoutMismatch, "polyak_update sizes");
  if (zeta == 1.0) {
    std::copy(source.begin(), source.end(), target.begin());
    return;
  }
  // Incremental form keeps target == source an exact fixed point.
  for (std::size_t i = 0; i < target.size(); ++i) target[i] += zeta * (source[i] - target[i]);
}

void polyak_update(ParamVector& target, const ParamVector& source, double zeta) {
  if (!target.same_layout(source)) throw Error(ErrorKind::LayoutMismatch, "polyak_update layouts");
  polyak_update(std::span<double>(target.values), std::span<const double>(source.values), zeta);
}

}  // namespace fedev
