#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fedev {

using Rng = std::mt19937_64;
/// Batches are stored column-per-sample.
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// ---------------------------------------------------------------------------
// Parameter containers

struct TensorSpec {
  std::string name;
  std::vector<std::uint64_t> shape;

  std::size_t size() const noexcept;
  bool operator==(const TensorSpec&) const = default;
};

using Layout = std::vector<TensorSpec>;

std::size_t layout_size(const Layout& layout) noexcept;

/// Flat parameter payload with a layout header. The unit of federated
/// exchange and of checkpointing.
struct ParamVector {
  Layout layout;
  std::vector<double> values;

  ParamVector() = default;
  ParamVector(Layout l, std::vector<double> v);
  static ParamVector zeros(Layout l);

  bool same_layout(const ParamVector& other) const noexcept { return layout == other.layout; }
  bool all_finite() const noexcept;
  bool operator==(const ParamVector&) const = default;
};

/// Little-endian: u32 tensor count; per tensor u32 name length, name bytes,
/// u32 rank, u64 dims; then every value as an IEEE-754 binary64.
std::vector<std::uint8_t> serialize(const ParamVector& params);
ParamVector deserialize(std::span<const std::uint8_t> bytes);
ParamVector deserialize(std::span<const std::uint8_t> bytes, const Layout& expected);

/// Sequential little-endian writer/reader shared by the payload and
/// checkpoint formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void raw(std::span<const std::uint8_t> data);
  void blob(std::span<const std::uint8_t> data);
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::span<const std::uint8_t> blob();
  std::span<const std::uint8_t> take(std::size_t n);
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Dense networks

enum class Activation { Identity, Relu };

struct DenseLayer {
  RowMatrix weight;  // out x in
  Vector bias;
};

/// Intermediates of one forward pass, needed by backward.
struct MlpCache {
  std::vector<Matrix> inputs;  // input of every layer, inputs[0] = network input
  std::vector<Matrix> pre;     // pre-activation of every layer
};

/// Fully connected network: rectifier between layers, configurable output
/// activation. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> layer_sizes, Activation output_activation, Rng& rng);
  /// All-zero parameters; useful for tests.
  Mlp(std::vector<std::size_t> layer_sizes, Activation output_activation);

  std::size_t input_size() const noexcept { return sizes_.front(); }
  std::size_t output_size() const noexcept { return sizes_.back(); }
  std::size_t parameter_count() const noexcept;
  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  Activation output_activation() const noexcept { return output_activation_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  Matrix forward(const Matrix& input) const;
  Matrix forward(const Matrix& input, MlpCache& cache) const;

  /// Reverse pass for the scalar sum(upstream .* output). Parameter
  /// gradients are added into `grad` (flat, params() order); returns the
  /// gradient with respect to the input.
  Matrix backward(const MlpCache& cache, const Matrix& upstream, std::span<double> grad) const;

  Layout layout(const std::string& prefix) const;
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);
  ParamVector params(const std::string& prefix) const;
  void set_params(const ParamVector& params, const std::string& prefix);

 private:
  std::vector<std::size_t> sizes_;
  Activation output_activation_ = Activation::Identity;
  std::vector<DenseLayer> layers_;

  bool relu_after(std::size_t layer) const noexcept;
};

// ---------------------------------------------------------------------------
// Gaussian policy

inline constexpr double kLogSigmaMin = -20.0;
inline constexpr double kLogSigmaMax = 2.0;

enum class Squash { Clip, Tanh };

struct ActionBounds {
  double lo = -0.2;
  double hi = 0.2;
};

struct PolicyForward {
  MlpCache trunk_cache;
  MlpCache mu_cache;
  MlpCache log_sigma_cache;
  RowVector mu;
  RowVector log_sigma;      // clamped
  RowVector raw_log_sigma;  // head output before clamping
};

/// Rectified trunk feeding two affine heads for the mean and log standard
/// deviation of a one-dimensional Gaussian.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(std::size_t state_dim, const std::vector<std::size_t>& hidden, Rng& rng);

  std::size_t state_dim() const noexcept { return trunk_.input_size(); }
  std::size_t parameter_count() const noexcept;
  Mlp& trunk() noexcept { return trunk_; }
  Mlp& mu_head() noexcept { return mu_head_; }
  Mlp& log_sigma_head() noexcept { return log_sigma_head_; }
  const Mlp& trunk() const noexcept { return trunk_; }
  const Mlp& mu_head() const noexcept { return mu_head_; }
  const Mlp& log_sigma_head() const noexcept { return log_sigma_head_; }

  PolicyForward forward(const Matrix& states) const;
  /// Adds parameter gradients for upstream d/dmu and d/dlog_sigma (w.r.t. the
  /// clamped value; zeroed where the clamp is active).
  void backward(const PolicyForward& fwd, const RowVector& d_mu, const RowVector& d_log_sigma,
                std::span<double> grad) const;

  Layout layout() const;
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);
  ParamVector params() const;
  void set_params(const ParamVector& params);

 private:
  Mlp trunk_;
  Mlp mu_head_;
  Mlp log_sigma_head_;
};

/// One reparameterized draw raw = mu + kappa * sigma mapped into the bounds,
/// with its log-density and the partials needed for the actor gradient.
struct PolicySample {
  double raw = 0.0;
  double action = 0.0;
  double log_prob = 0.0;
  double daction_draw = 0.0;   // d action / d raw
  double dlogp_draw = 0.0;     // squash-correction partial of log_prob w.r.t. raw
};

PolicySample evaluate_sample(double mu, double log_sigma, double kappa, ActionBounds bounds,
                             Squash squash);

struct ActionDraw {
  double action = 0.0;
  double log_prob = 0.0;
  double kappa = 0.0;
};

ActionDraw sample_action(const GaussianPolicy& policy, std::span<const double> state, Rng& rng,
                         ActionBounds bounds, Squash squash, bool deterministic);

// ---------------------------------------------------------------------------
// Optimisation

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);
void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state, double lr);

/// target <- zeta * source + (1 - zeta) * target
void polyak_update(ParamVector& target, const ParamVector& source, double zeta);
void polyak_update(std::span<double> target, std::span<const double> source, double zeta);

}  // namespace fedev
