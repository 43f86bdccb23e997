#include "wincache/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wincache {

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& opts) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) {
    double& xi = simplex[i + 1][i];
    xi = xi != 0.0 ? xi * (1.0 + opts.initial_step_frac) : 0.00025;
  }
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fv[i] = objective(simplex[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  auto point = [&](double t, std::vector<double>& out, std::size_t worst) {
    for (std::size_t d = 0; d < n; ++d) out[d] = centroid[d] + t * (simplex[worst][d] - centroid[d]);
  };

  NelderMeadResult res;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double fspread = 0.0, xspread = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      fspread = std::max(fspread, std::abs(fv[i] - fv[best]));
      for (std::size_t d = 0; d < n; ++d) xspread = std::max(xspread, std::abs(simplex[i][d] - simplex[best][d]));
    }
    if (fspread <= opts.f_atol && xspread <= opts.x_atol) {
      res.converged = true;
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t d = 0; d < n; ++d) centroid[d] += simplex[i][d];
    }
    for (double& c : centroid) c /= static_cast<double>(n);

    point(-1.0, trial, worst);
    const double fr = objective(trial);
    if (fr < fv[best]) {
      point(-2.0, trial2, worst);
      const double fe = objective(trial2);
      if (fe < fr) {
        simplex[worst] = trial2;
        fv[worst] = fe;
      } else {
        simplex[worst] = trial;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      simplex[worst] = trial;
      fv[worst] = fr;
      continue;
    }
    // Contraction: outside if the reflection improved on the worst, inside otherwise.
    const bool outside = fr < fv[worst];
    point(outside ? -0.5 : 0.5, trial2, worst);
    const double fc = objective(trial2);
    if (fc < (outside ? fr : fv[worst])) {
      simplex[worst] = trial2;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t d = 0; d < n; ++d) simplex[i][d] = simplex[best][d] + 0.5 * (simplex[i][d] - simplex[best][d]);
      fv[i] = objective(simplex[i]);
    }
  }

  const auto best_it = std::min_element(fv.begin(), fv.end());
  res.x = simplex[static_cast<std::size_t>(best_it - fv.begin())];
  res.f = *best_it;
  res.iterations = it;
  return res;
}

}  // namespace wincache
