#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "wincache/calibration.hpp"
#include "wincache/cost_model.hpp"
#include "wincache/errors.hpp"
#include "wincache/trace_emulator.hpp"

using namespace wincache;

namespace {

WorkloadSpec skewed(double s = 1.1, std::uint64_t seed = 3) {
  WorkloadSpec spec;
  spec.num_nodes = 30000;
  spec.zipf_s = s;
  spec.batch_size = 1000;
  spec.num_batches = 256;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("generate_trace with zipf_s = 0 is uniform within binomial bounds") {
  WorkloadSpec spec;
  spec.num_nodes = 10;
  spec.p_partitions = 2;
  spec.owner_demand = {1.0};
  spec.zipf_s = 0.0;
  spec.batch_size = 1000;
  spec.num_batches = 100;
  const auto t = generate_trace(spec);
  std::vector<int> count(10, 0);
  for (const auto& b : t.batches)
    for (const auto& r : b) ++count[r.node];
  const double n = 1e5, p = 1.0 / 10;
  const double sd = std::sqrt(n * p * (1 - p));
  for (int c : count) CHECK(std::abs(c - n * p) <= 3 * sd);
}

TEST_CASE("generate_trace owner shares follow demand") {
  WorkloadSpec spec = skewed();
  spec.owner_demand = {0.5, 0.3, 0.2};
  spec.num_batches = 100;
  const auto t = generate_trace(spec);
  std::vector<double> share(3, 0.0);
  for (const auto& b : t.batches)
    for (const auto& r : b) share[r.owner] += 1;
  const double total = static_cast<double>(t.total_requests());
  CHECK(total == 1e5);
  CHECK(std::abs(share[0] / total - 0.5) <= 0.01);
  CHECK(std::abs(share[1] / total - 0.3) <= 0.01);
  CHECK(std::abs(share[2] / total - 0.2) <= 0.01);
  for (const auto& b : t.batches)
    for (const auto& r : b) {
      CHECK(r.node >= t.owner_base[r.owner]);
      CHECK(r.node < t.owner_base[r.owner] + t.owner_size[r.owner]);
    }
}

TEST_CASE("generate_trace is deterministic and validates") {
  const auto a = generate_trace(skewed()), b = generate_trace(skewed());
  REQUIRE(a.batches.size() == b.batches.size());
  bool same = true;
  for (std::size_t i = 0; i < a.batches.size(); ++i)
    for (std::size_t j = 0; j < a.batches[i].size(); ++j)
      same = same && a.batches[i][j].node == b.batches[i][j].node && a.batches[i][j].owner == b.batches[i][j].owner;
  CHECK(same);
  const auto c = generate_trace(skewed(1.1, 4));
  CHECK(c.batches[0][0].node + c.batches[0][1].node != a.batches[0][0].node + a.batches[0][1].node);
  WorkloadSpec bad = skewed();
  bad.owner_demand = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(generate_trace(bad), ValidationError);
  bad = skewed();
  bad.zipf_s = -1;
  CHECK_THROWS_AS(generate_trace(bad), ValidationError);
}

TEST_CASE("owner budgets hand the remainder to the heaviest owners") {
  CHECK(owner_budgets(10, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::vector<std::int64_t>{4, 3, 3});
  CHECK(owner_budgets(10, std::vector<double>{0.2, 0.6, 0.2}) == std::vector<std::int64_t>{2, 6, 2});
  CHECK(owner_budgets(7, std::vector<double>{0.2, 0.6, 0.2}) == std::vector<std::int64_t>{1, 5, 1});
  CHECK(owner_budgets(0, std::vector<double>{0.2, 0.6, 0.2}) == std::vector<std::int64_t>{0, 0, 0});
}

TEST_CASE("full-capacity and zero-capacity caches") {
  const auto t = generate_trace(skewed());
  const auto all = run_windowed_cache(t, 1, CacheConfig::uniform(3, 30000));
  CHECK(all.hit_rate() == 1.0);
  CHECK(run_windowed_cache(t, 16, CacheConfig::uniform(3, 30000)).hit_rate() == 1.0);
  const auto none = run_windowed_cache(t, 4, CacheConfig::uniform(3, 0));
  CHECK(none.hit_rate() == 0.0);
  CHECK(none.requests == t.total_requests());
}

TEST_CASE("hit curve decays with the window on a skewed workload") {
  const auto t = generate_trace(skewed(1.1));
  const auto r = measure_hit_curve(t, kWindowGrid, CacheConfig::uniform(3, 300));
  double prev = 2.0;
  for (const auto& [w, h] : r.hit_curve) {
    CHECK(h <= prev);
    prev = h;
  }
  double prev_u = 0.0;
  for (int w : {1, 2, 4, 8, 16, 32, 64}) {
    const double u = r.unique_set_sizes.at(w), u2 = r.unique_set_sizes.at(2 * w);
    CHECK(u >= prev_u);
    CHECK(u2 / u < 2.0);
    prev_u = u;
  }
}

TEST_CASE("single-window grid") {
  const auto t = generate_trace(skewed());
  const std::vector<int> grid{1};
  const auto r = measure_hit_curve(t, grid, CacheConfig::uniform(3, 100));
  CHECK(r.hit_curve.size() == 1);
  CHECK(r.unique_set_sizes.size() == 1);
}

TEST_CASE("parallel grid measurement matches the serial reference") {
  const auto t = generate_trace(skewed(0.9));
  const auto cache = CacheConfig::biased(3, 500, 1);
  const auto par = measure_hit_curve(t, kWindowGrid, cache);
  const auto ser = measure_hit_curve_serial(t, kWindowGrid, cache);
  CHECK(par.hit_curve == ser.hit_curve);
  CHECK(par.per_owner_hits == ser.per_owner_hits);
  CHECK(par.unique_set_sizes == ser.unique_set_sizes);
}

TEST_CASE("logistic fit of the measured hit curve") {
  for (double s : {0.8, 1.1, 1.4}) {
    const auto t = generate_trace(skewed(s, 12));
    const auto r = measure_hit_curve(t, kWindowGrid, CacheConfig::uniform(3, 300));
    std::vector<WindowSample> samples;
    for (const auto& [w, h] : r.hit_curve) samples.push_back({w, 0.1, h, 0.1});
    const auto fit = fit_hit_logistic(samples);
    CAPTURE(s);
    CHECK(fit.report.r_squared > 0.9);
  }
}

TEST_CASE("per-owner rates are symmetric under uniform demand and weights") {
  const auto t = generate_trace(skewed());
  const auto rates = per_owner_hit_rates(t, 8, CacheConfig::uniform(3, 300));
  CHECK(std::abs(rates[0] - rates[1]) <= 0.02);
  CHECK(std::abs(rates[1] - rates[2]) <= 0.02);
  CHECK(std::abs(rates[0] - rates[2]) <= 0.02);
}

TEST_CASE("biasing capacity toward an owner raises only that owner") {
  const auto t = generate_trace(skewed());
  for (int w : {1, 8, 32}) {
    const auto uni = per_owner_hit_rates(t, w, CacheConfig::uniform(3, 300));
    const auto bias = per_owner_hit_rates(t, w, CacheConfig{300, {0.6, 0.2, 0.2}});
    CHECK(bias[0] > uni[0]);
    CHECK(bias[1] <= uni[1]);
    CHECK(bias[2] <= uni[2]);
  }
  // an owner whose whole distinct set fits gets every request
  const auto full = per_owner_hit_rates(t, 4, CacheConfig{10000, {1.0, 0.0, 0.0}});
  CHECK(full[0] == 1.0);
}

TEST_CASE("exact accounting and monotone capacity") {
  const auto t = generate_trace(skewed(1.2, 8));
  const std::vector<double> weights{0.5, 0.3, 0.2};
  std::vector<double> prev(3, -1.0);
  double prev_all = -1.0;
  for (std::int64_t k : {0, 10, 50, 120, 300, 301, 700, 2000}) {
    const auto st = run_windowed_cache(t, 8, CacheConfig{k, weights});
    std::uint64_t req = 0;
    for (auto r : st.owner_requests) req += r;
    CHECK(req == st.requests);
    CHECK(st.requests == t.total_requests());
    CHECK(st.hits <= st.requests);
    for (int o = 0; o < 3; ++o) {
      CHECK(st.owner_hit_rate(o) >= prev[static_cast<std::size_t>(o)]);
      prev[static_cast<std::size_t>(o)] = st.owner_hit_rate(o);
    }
    CHECK(st.hit_rate() >= prev_all);
    prev_all = st.hit_rate();
  }
}

TEST_CASE("emulation CSV layout") {
  const auto t = generate_trace(skewed());
  const std::vector<int> grid{1, 2};
  const auto csv = emulation_csv(measure_hit_curve(t, grid, CacheConfig::uniform(3, 100)), 3);
  CHECK(csv.rfind("window,owner,hit_rate,unique_set\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4);
}
