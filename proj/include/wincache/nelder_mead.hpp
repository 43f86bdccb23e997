#pragma once

#include <functional>
#include <span>
#include <vector>

namespace wincache {

struct NelderMeadOptions {
  double initial_step_frac = 0.05;  // simplex vertex i perturbs x0[i] by this fraction
  double f_atol = 1e-9;             // spread of objective values across the simplex
  double x_atol = 1e-10;            // spread of vertices, per coordinate
  int max_iterations = 10000;
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Derivative-free simplex minimizer (reflection 1, expansion 2, contraction
// 1/2, shrink 1/2). Deterministic for a given objective and start point.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& opts = {});

}  // namespace wincache
