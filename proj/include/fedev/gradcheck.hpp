#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedev/neural.hpp"

namespace fedev {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so gradients that are
  /// numerically zero are compared absolutely.
  double floor = 1e-8;
  std::size_t chunk = 256;
  /// Test hook: perturbs one analytic gradient entry so the check must fail.
  bool inject_fault = false;
};

struct GradCheckReport {
  std::string network;
  std::size_t checked = 0;
  /// Coordinates whose +/-h interval crosses a rectifier kink; central
  /// differences are meaningless there, so they are counted and skipped.
  std::size_t kinks = 0;
  double max_rel_error = 0.0;
  std::string worst;
  bool passed = true;
};

/// Compares backward() against central differences of sum(upstream .* f(x))
/// for every parameter and every input coordinate of `net`. Differences that
/// disagree in double precision are re-evaluated in long double.
GradCheckReport check_mlp_gradients(const std::string& name, const Mlp& net, const Vector& input,
                                    const Vector& upstream, const GradCheckOptions& options = {});

struct NetworkShapes {
  std::size_t state_dim = 30;
  std::vector<std::size_t> policy_hidden{128, 128, 128, 128};
  std::vector<std::size_t> critic_hidden{128, 128, 128};
};

/// Every network shape the trainer builds (policy trunk and heads, critic,
/// value), one fresh random instance per seed.
std::vector<GradCheckReport> gradient_suite(std::uint64_t first_seed, std::size_t n_seeds,
                                            const NetworkShapes& shapes,
                                            const GradCheckOptions& options = {});

}  // namespace fedev
