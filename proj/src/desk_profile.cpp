#include "wincache/desk_profile.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "wincache/errors.hpp"
#include "wincache/rng.hpp"

namespace wincache {

WorkloadSpec desk_workload() {
  WorkloadSpec w;
  w.num_nodes = 30000;
  w.zipf_s = 1.1;
  w.p_partitions = 4;
  w.batch_size = 1000;
  w.num_batches = 512;
  w.drift = 50.0;
  w.seed = 12;
  return w;
}

std::int64_t desk_capacity() { return 1000; }

DeskProfile desk_profile() {
  DeskProfile d;
  d.workload = desk_workload();
  d.cache = CacheConfig::uniform(d.workload.owners(), desk_capacity());
  const Trace trace = generate_trace(d.workload);
  d.emulation = measure_hit_curve(trace, kWindowGrid, d.cache);
  std::vector<WindowSample> samples;
  for (const auto& [w, h] : d.emulation.hit_curve) samples.push_back({w, 0.0, h, 0.0});
  d.hit = fit_hit_logistic(samples);

  CalibrationParams& p = d.params;
  p.alpha_rpc = 4.67e-3;
  p.beta = 1.40e-9;
  p.gamma_c = 2.01e-10;
  p.h_min = d.hit.h_min;
  p.h_max = d.hit.h_max;
  p.w_half = d.hit.w_half;
  p.gamma_h = d.hit.gamma_h;
  p.a_reb = 0.10;
  p.b_reb = 0.02;
  p.c_reb = 0.5;
  p.alpha_overlap = 0.5;
  p.p_bar = 300.0;
  p.t_base = 0.02;
  p.r_remote = 25000.0;
  p.f_bytes = 2048.0;
  // Owners are fetched in parallel, so the per-node share of a batch's miss
  // stall is the serial per-node latency divided by the owner count.
  const auto owners = static_cast<double>(d.workload.owners());
  p.t_miss_base.assign(static_cast<std::size_t>(d.workload.owners()), p.beta * p.f_bytes / owners);
  p.k_ar = 2e-3;
  p.validate();
  return d;
}

CalibrationConfig desk_calibration_config(const DeskProfile& desk) {
  CalibrationConfig c;
  c.p_partitions = desk.workload.p_partitions;
  c.f_bytes = desk.params.f_bytes;
  c.r_remote = desk.params.r_remote;
  c.alpha_overlap = desk.params.alpha_overlap;
  c.k_ar = desk.params.k_ar;
  c.miss_overlap = desk.workload.owners();
  return c;
}

double desk_measured_step_time(const DeskProfile& desk, int w, std::span<const double> delays_ms) {
  const CalibrationParams& p = desk.params;
  const auto it = desk.emulation.hit_curve.find(w);
  if (it == desk.emulation.hit_curve.end()) throw ValidationError("window " + std::to_string(w) + " was not emulated");
  if (delays_ms.size() != p.t_miss_base.size()) throw ValidationError("one delay per remote owner expected");
  double worst = 0.0, max_sigma = 1.0;
  for (std::size_t o = 0; o < delays_ms.size(); ++o) {
    const double s = sigma_of_delta(delays_ms[o], p);
    worst = std::max(worst, p.t_miss_base[o] * s);
    max_sigma = std::max(max_sigma, s);
  }
  return p.t_base + p.alpha_overlap * rebuild_time(w, p) / w + p.r_remote * worst * (1.0 - it->second) +
         p.k_ar * (max_sigma - 1.0);
}

DeskTraces desk_traces(const DeskProfile& desk, std::uint64_t seed, double noise, int rpc_samples) {
  if (!(noise >= 0.0)) throw ValidationError("noise must be >= 0");
  if (rpc_samples < 3) throw ValidationError("need at least 3 rpc samples");
  const CounterRng root(seed);
  // Zero-mean, unit-variance uniform jitter.
  auto jitter = [noise](CounterRng& r) { return 1.0 + noise * std::sqrt(3.0) * (2.0 * r.uniform() - 1.0); };
  const CalibrationParams& p = desk.params;
  const int owners = desk.workload.owners();
  DeskTraces t;

  CounterRng rr = root.child("rpc");
  const double delays[] = {0.0, 2.0, 4.0, 8.0, 16.0};
  for (int i = 0; i < rpc_samples; ++i) {
    const double bytes = std::pow(10.0, rr.uniform(4.0, 7.0));
    const double d = delays[i % 5];
    t.rpc.push_back({bytes, d, rpc_time(bytes, d, p) * jitter(rr), i % owners});
  }

  CounterRng wr = root.child("window");
  const std::vector<double> clean(static_cast<std::size_t>(owners), 0.0);
  for (const auto& [w, h] : desk.emulation.hit_curve)
    t.window.push_back({w, desk_measured_step_time(desk, w, clean) * jitter(wr), h, rebuild_time(w, p) * jitter(wr)});

  CounterRng pr = root.child("power");
  for (int i = 0; i < 100; ++i) t.power.push_back({0.1 * i, p.p_bar * jitter(pr)});
  return t;
}

}  // namespace wincache
