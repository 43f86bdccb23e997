#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "wincache/cost_model.hpp"
#include "wincache/errors.hpp"
#include "wincache/rng.hpp"

using namespace wincache;

namespace {

CalibrationParams fitted_rpc() {
  CalibrationParams p;
  p.alpha_rpc = 4.67e-3;
  p.beta = 1.40e-9;
  p.gamma_c = 2.01e-10;
  return p;
}

CalibrationParams random_params(CounterRng& rng) {
  CalibrationParams p;
  p.alpha_rpc = rng.uniform(1e-3, 1e-2);
  p.beta = rng.uniform(1e-10, 1e-8);
  p.gamma_c = rng.uniform(1e-11, 1e-9);
  p.h_min = rng.uniform(0.0, 0.5);
  p.h_max = rng.uniform(p.h_min + 0.01, 1.0);
  p.w_half = rng.uniform(1.0, 64.0);
  p.gamma_h = rng.uniform(0.3, 4.0);
  p.a_reb = rng.uniform(0.0, 0.05);
  p.b_reb = rng.uniform(0.001, 0.1);
  p.c_reb = rng.uniform(0.1, 0.9);
  p.p_bar = rng.uniform(50.0, 500.0);
  p.t_base = rng.uniform(0.01, 0.2);
  p.alpha_overlap = rng.uniform(0.0, 1.0);
  p.r_remote = rng.uniform(10.0, 5000.0);
  p.f_bytes = rng.uniform(100.0, 4000.0);
  p.t_miss_base = {rng.uniform(1e-6, 1e-4), rng.uniform(1e-6, 1e-4), rng.uniform(1e-6, 1e-4)};
  p.k_ar = rng.uniform(0.0, 0.01);
  return p;
}

}  // namespace

TEST_CASE("rpc_time reproduces the fitted-coefficient worked values") {
  const auto p = fitted_rpc();
  CHECK(std::abs(rpc_time(0.0, 0.0, p) - 0.00467) <= 1e-9);
  CHECK(std::abs(rpc_time(0.0, 7.0, p) - 0.00467) <= 1e-9);
  CHECK(std::abs(rpc_time(1e6, 0.0, p) - 0.00607) <= 1e-9);
  CHECK(std::abs(rpc_time(1e6, 5.0, p) - 0.007075) <= 1e-9);
  CHECK_THROWS_AS(rpc_time(-1.0, 0.0, p), ValidationError);
  CHECK_THROWS_AS(rpc_time(10.0, -0.5, p), ValidationError);
}

TEST_CASE("rpc_time initiation share dominates small payloads") {
  const auto p = fitted_rpc();
  for (double delta : {0.0, 2.0, 8.0}) {
    const double per_byte = p.beta + p.gamma_c * delta;
    const double n = 0.99 * p.alpha_rpc / 9.0 / per_byte;
    CHECK(p.alpha_rpc / rpc_time(n, delta, p) > 0.9);
    // affine in payload at fixed delay
    const double t0 = rpc_time(0.0, delta, p), t1 = rpc_time(1e5, delta, p), t2 = rpc_time(2e5, delta, p);
    CHECK(std::abs((t2 - t1) - (t1 - t0)) < 1e-15);
  }
}

TEST_CASE("hit_rate asymptotes and midpoint") {
  CalibrationParams p;
  CHECK(hit_rate(p.w_half, p) == doctest::Approx(p.h_min + (p.h_max - p.h_min) / 2).epsilon(1e-15));
  CalibrationParams wide = p;
  wide.w_half = 1e12;
  CHECK(hit_rate(1.0, wide) == doctest::Approx(p.h_max).epsilon(1e-12));
  CHECK(hit_rate(1e15, p) == doctest::Approx(p.h_min).epsilon(1e-12));
  CHECK_THROWS_AS(hit_rate(0.5, p), ValidationError);
}

TEST_CASE("rebuild_time power law") {
  CalibrationParams p;
  p.a_reb = 0.01;
  p.b_reb = 0.02;
  p.c_reb = 0.5;
  CHECK(rebuild_time(1.0, p) == doctest::Approx(0.03));
  CHECK(rebuild_time(4.0, p) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(rebuild_time(64.0, p) > rebuild_time(8.0, p));
  CHECK_THROWS_AS(rebuild_time(0.0, p), ValidationError);
}

TEST_CASE("congested miss latency takes the slowest owner") {
  CalibrationParams p;
  p.t_miss_base = {5e-3, 5e-3, 5e-3};
  CHECK(congested_miss_latency(CongestionVector::clean(3), p) == doctest::Approx(5e-3));
  CHECK(congested_miss_latency({{1.6, 1.0, 1.0}}, p) == doctest::Approx(8e-3).epsilon(1e-14));
  p.t_miss_base = {5e-3, 9e-3, 5e-3};
  CHECK(congested_miss_latency({{1.6, 1.0, 1.0}}, p) == doctest::Approx(9e-3).epsilon(1e-14));
  CHECK_THROWS_AS(congested_miss_latency({{1.0, 1.0}}, p), ValidationError);
  CHECK_THROWS_AS(congested_miss_latency({{0.9, 1.0, 1.0}}, p), ValidationError);
}

TEST_CASE("allreduce straggler penalty") {
  CalibrationParams p;
  p.k_ar = 0.002;
  CHECK(allreduce_penalty(CongestionVector::clean(3), p) == 0.0);
  CHECK(allreduce_penalty({{1.5, 1.0, 1.0}}, p) == doctest::Approx(0.001).epsilon(1e-14));
  p.k_ar = 0.0;
  CHECK(allreduce_penalty({{3.0, 2.0, 1.0}}, p) == 0.0);
}

TEST_CASE("step_time with perfect cache and rebuild off the critical path") {
  CalibrationParams p;
  p.alpha_overlap = 0.0;
  p.h_min = p.h_max = 1.0;
  p.k_ar = 0.004;
  const CongestionVector cv{{2.0, 1.0, 1.0}};
  for (int w : kWindowGrid) CHECK(step_time(w, cv, p) == doctest::Approx(p.t_base + 0.004).epsilon(1e-14));
  CHECK(step_time(16, CongestionVector::clean(3), p) == doctest::Approx(p.t_base).epsilon(1e-14));
}

TEST_CASE("step_energy is power times step time") {
  CalibrationParams p;
  p.p_bar = 100.0;
  p.t_base = 0.05;
  p.alpha_overlap = 0.0;
  p.h_min = p.h_max = 1.0;
  CHECK(step_energy(8, CongestionVector::clean(3), p) == doctest::Approx(5.0).epsilon(1e-14));
  CalibrationParams q = p;
  q.p_bar = 200.0;
  const CongestionVector cv{{1.3, 1.0, 1.7}};
  CHECK(step_energy(8, cv, q) == doctest::Approx(2.0 * step_energy(8, cv, p)).epsilon(1e-14));
}

TEST_CASE("optimal_window basics") {
  CalibrationParams p;
  const std::vector<int> single{16};
  CHECK(optimal_window(CongestionVector::clean(3), p, single) == 16);
  CHECK_THROWS_AS(optimal_window(CongestionVector::clean(3), p, std::span<const int>{}), ValidationError);
  CalibrationParams flat = p;
  flat.h_min = flat.h_max = 0.6;
  CHECK(optimal_window(CongestionVector::clean(3), flat) == 128);
}

TEST_CASE("optimal_window never grows as uniform delay grows") {
  CounterRng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_params(rng);
    int prev = 1 << 30;
    for (double delta : {0.0, 2.0, 4.0, 8.0, 16.0}) {
      const double s = sigma_of_delta(delta, p);
      const int w = optimal_window({{s, s, s}}, p);
      CHECK(w <= prev);
      prev = w;
    }
  }
}

TEST_CASE("cost model invariants over random parameters") {
  CounterRng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    auto p = random_params(rng);
    const CongestionVector cv{{rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)}};
    double prev_h = 2.0;
    for (int w : kWindowGrid) {
      const double h = hit_rate(w, p);
      CHECK(h >= p.h_min);
      CHECK(h <= p.h_max);
      CHECK(h <= prev_h);
      prev_h = h;
      CHECK(step_energy(w, cv, p) / step_time(w, cv, p) == doctest::Approx(p.p_bar).epsilon(1e-15));
    }
    // strictly increasing in the owner that attains the max
    std::size_t arg = 0;
    for (std::size_t o = 1; o < 3; ++o)
      if (p.t_miss_base[o] * cv.sigma[o] > p.t_miss_base[arg] * cv.sigma[arg]) arg = o;
    CongestionVector up = cv;
    up.sigma[arg] += 0.1;
    CHECK(step_time(8, up, p) > step_time(8, cv, p));
    // energy and time share an argmin; repeated calls agree
    const int w_e = optimal_window(cv, p);
    CHECK(w_e == optimal_window(cv, p));
    int w_t = kWindowGrid[0];
    for (int w : kWindowGrid)
      if (step_time(w, cv, p) < step_time(w_t, cv, p)) w_t = w;
    CHECK(w_e == w_t);
  }
}

TEST_CASE("sigma_of_delta") {
  auto p = fitted_rpc();
  CHECK(sigma_of_delta(0.0, p) == 1.0);
  double prev = 1.0;
  for (double d = 0.5; d <= 20.0; d += 0.5) {
    const double s = sigma_of_delta(d, p);
    CHECK(s > prev);
    prev = s;
    CHECK(delta_of_sigma(s, p) == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("params JSON round trip and validation") {
  CalibrationParams p;
  p.t_miss_base = {1e-5, 2e-5, 3e-5};
  p.k_ar = 0.003;
  const nlohmann::json j = p;
  CHECK(j.at("schema_version") == kParamsSchemaVersion);
  const auto q = j.get<CalibrationParams>();
  CHECK(nlohmann::json(q) == j);
  nlohmann::json bad = j;
  bad["c_reb"] = 1.5;
  CHECK_THROWS_AS(bad.get<CalibrationParams>(), ValidationError);
  nlohmann::json unknown = j;
  unknown["mystery"] = 1;
  CHECK_THROWS_AS(unknown.get<CalibrationParams>(), ValidationError);
  nlohmann::json unversioned = j;
  unversioned.erase("schema_version");
  CHECK_THROWS_AS(unversioned.get<CalibrationParams>(), ValidationError);
}
