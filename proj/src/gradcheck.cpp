#include "fedev/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fedev {

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

using Wide = long double;
using WideVector = Eigen::Matrix<Wide, Eigen::Dynamic, 1>;

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Probe {
  GradCheckReport& report;
  const GradCheckOptions& options;

  void compare(double analytic, double numeric, const std::string& label) {
    const double rel = relative_error(analytic, numeric, options.floor);
    ++report.checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = label;
    }
  }
};

// Pushes perturbed pre-activations of layer `first` through the rest of the
// network. Returns the objective per column and records rectifier masks.
RowVector propagate(const Mlp& net, std::size_t first, Matrix z, const Vector& upstream,
                    std::vector<Mask>& masks) {
  const auto& layers = net.layers();
  masks.clear();
  for (std::size_t k = first; k < layers.size(); ++k) {
    const bool relu = k + 1 < layers.size() || net.output_activation() == Activation::Relu;
    if (relu) {
      masks.push_back(z.array() > 0.0);
      z = z.cwiseMax(0.0);
    }
    if (k + 1 < layers.size()) {
      Matrix next = layers[k + 1].weight * z;
      next.colwise() += layers[k + 1].bias;
      z = std::move(next);
    }
  }
  return upstream.transpose() * z;
}

// Extended-precision objective for one perturbed pre-activation of layer
// `first`; used to re-evaluate coordinates whose double-precision difference
// is dominated by rounding.
Wide propagate_wide(const Mlp& net, std::size_t first, WideVector z, const Vector& upstream) {
  const auto& layers = net.layers();
  for (std::size_t k = first; k < layers.size(); ++k) {
    const bool relu = k + 1 < layers.size() || net.output_activation() == Activation::Relu;
    if (relu) z = z.cwiseMax(Wide(0));
    if (k + 1 < layers.size()) {
      WideVector next = layers[k + 1].weight.cast<Wide>() * z;
      next += layers[k + 1].bias.cast<Wide>();
      z = std::move(next);
    }
  }
  return upstream.cast<Wide>().dot(z);
}

double wide_difference(const Mlp& net, std::size_t first, const WideVector& plus, const WideVector& minus,
                       const Vector& upstream, double h) {
  const Wide diff = propagate_wide(net, first, plus, upstream) - propagate_wide(net, first, minus, upstream);
  return static_cast<double>(diff / (Wide(2) * Wide(h)));
}

bool crosses_kink(const std::vector<Mask>& masks, Eigen::Index plus, Eigen::Index minus) {
  return std::any_of(masks.begin(), masks.end(), [&](const Mask& m) {
    return (m.col(plus) != m.col(minus)).any();
  });
}

}  // namespace

GradCheckReport check_mlp_gradients(const std::string& name, const Mlp& net, const Vector& input,
                                    const Vector& upstream, const GradCheckOptions& options) {
  GradCheckReport report;
  report.network = name;
  Probe probe{report, options};

  MlpCache cache;
  net.forward(Matrix(input), cache);
  std::vector<double> grad(net.parameter_count(), 0.0);
  const Matrix input_grad = net.backward(cache, Matrix(upstream), grad);
  if (options.inject_fault && !grad.empty()) grad[0] += 1.0;

  const double h = options.h;
  const double refine_above = 1e-2 * options.tolerance;
  const auto& layers = net.layers();
  std::vector<Mask> masks;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const Eigen::Index rows = layer.weight.rows();
    const Eigen::Index cols = layer.weight.cols();
    const std::size_t n_params = static_cast<std::size_t>(rows * cols + rows);
    const Vector& z_base = cache.pre[l].col(0);
    const Vector& a_prev = cache.inputs[l].col(0);
    for (std::size_t begin = 0; begin < n_params; begin += options.chunk) {
      const std::size_t count = std::min(options.chunk, n_params - begin);
      Matrix z = z_base.replicate(1, static_cast<Eigen::Index>(2 * count));
      std::vector<Eigen::Index> rows_of(count);
      std::vector<double> deltas(count);
      for (std::size_t c = 0; c < count; ++c) {
        const std::size_t p = begin + c;
        Eigen::Index row = 0;
        double delta = h;
        if (p < static_cast<std::size_t>(rows * cols)) {
          row = static_cast<Eigen::Index>(p) / cols;
          delta = h * a_prev(static_cast<Eigen::Index>(p) % cols);
        } else {
          row = static_cast<Eigen::Index>(p - static_cast<std::size_t>(rows * cols));
        }
        rows_of[c] = row;
        deltas[c] = delta;
        z(row, static_cast<Eigen::Index>(2 * c)) += delta;
        z(row, static_cast<Eigen::Index>(2 * c + 1)) -= delta;
      }
      const RowVector objective = propagate(net, l, std::move(z), upstream, masks);
      for (std::size_t c = 0; c < count; ++c) {
        const auto plus = static_cast<Eigen::Index>(2 * c);
        if (crosses_kink(masks, plus, plus + 1)) {
          ++report.kinks;
          continue;
        }
        double numeric = (objective(plus) - objective(plus + 1)) / (2.0 * h);
        if (relative_error(grad[offset + begin + c], numeric, options.floor) > refine_above) {
          const WideVector base = z_base.cast<Wide>();
          WideVector up = base;
          WideVector down = base;
          up(rows_of[c]) += Wide(deltas[c]);
          down(rows_of[c]) -= Wide(deltas[c]);
          numeric = wide_difference(net, l, up, down, upstream, h);
        }
        probe.compare(grad[offset + begin + c], numeric,
                      "l" + std::to_string(l) + "[" + std::to_string(begin + c) + "]");
      }
    }
    offset += n_params;
  }

  // Input coordinates: perturb the network input directly.
  const Eigen::Index n_in = input.size();
  Matrix x = input.replicate(1, 2 * n_in);
  for (Eigen::Index j = 0; j < n_in; ++j) {
    x(j, 2 * j) += h;
    x(j, 2 * j + 1) -= h;
  }
  Matrix z0 = layers[0].weight * x;
  z0.colwise() += layers[0].bias;
  const RowVector objective = propagate(net, 0, std::move(z0), upstream, masks);
  for (Eigen::Index j = 0; j < n_in; ++j) {
    if (crosses_kink(masks, 2 * j, 2 * j + 1)) {
      ++report.kinks;
      continue;
    }
    double numeric = (objective(2 * j) - objective(2 * j + 1)) / (2.0 * h);
    if (relative_error(input_grad(j, 0), numeric, options.floor) > refine_above) {
      WideVector up = input.cast<Wide>();
      WideVector down = up;
      up(j) += Wide(h);
      down(j) -= Wide(h);
      const WideVector w0 = layers[0].weight.cast<Wide>() * up + layers[0].bias.cast<Wide>();
      const WideVector w1 = layers[0].weight.cast<Wide>() * down + layers[0].bias.cast<Wide>();
      numeric = wide_difference(net, 0, w0, w1, upstream, h);
    }
    probe.compare(input_grad(j, 0), numeric, "input[" + std::to_string(j) + "]");
  }

  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

std::vector<GradCheckReport> gradient_suite(std::uint64_t first_seed, std::size_t n_seeds,
                                            const NetworkShapes& shapes,
                                            const GradCheckOptions& options) {
  std::vector<GradCheckReport> reports;
  for (std::uint64_t seed = first_seed; seed < first_seed + n_seeds; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto random_vector = [&](std::size_t n) {
      Vector v(static_cast<Eigen::Index>(n));
      for (auto& x : v) x = unit(rng);
      return v;
    };
    const std::string tag = " seed=" + std::to_string(seed);

    GaussianPolicy policy(shapes.state_dim, shapes.policy_hidden, rng);
    std::vector<std::size_t> critic_sizes{shapes.state_dim + 1};
    critic_sizes.insert(critic_sizes.end(), shapes.critic_hidden.begin(), shapes.critic_hidden.end());
    critic_sizes.push_back(1);
    Mlp critic(critic_sizes, Activation::Identity, rng);
    std::vector<std::size_t> value_sizes = critic_sizes;
    value_sizes.front() = shapes.state_dim;
    Mlp value(value_sizes, Activation::Identity, rng);

    const Vector state = random_vector(shapes.state_dim);
    const Vector features = policy.trunk().forward(Matrix(state)).col(0);
    const std::size_t width = shapes.policy_hidden.back();

    reports.push_back(check_mlp_gradients("policy.trunk" + tag, policy.trunk(), state,
                                          random_vector(width), options));
    reports.push_back(check_mlp_gradients("policy.mu" + tag, policy.mu_head(), features,
                                          random_vector(1), options));
    reports.push_back(check_mlp_gradients("policy.log_sigma" + tag, policy.log_sigma_head(),
                                          features, random_vector(1), options));
    reports.push_back(check_mlp_gradients("critic" + tag, critic,
                                          random_vector(shapes.state_dim + 1), random_vector(1),
                                          options));
    reports.push_back(check_mlp_gradients("value" + tag, value, state, random_vector(1), options));
  }
  return reports;
}

}  // namespace fedev
