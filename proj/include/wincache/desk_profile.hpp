#pragma once

// Reference parameterization used by the simulator, training defaults and the
// acceptance checks. The hit curve is fitted to an emulated drifting-Zipf
// workload; the remaining coefficients are set so that the clean optimum is
// W=16 and moderate congestion pulls it down to 4 or 8.

#include "wincache/calibration.hpp"
#include "wincache/cost_model.hpp"
#include "wincache/trace_emulator.hpp"

namespace wincache {

struct DeskProfile {
  WorkloadSpec workload;
  CacheConfig cache;
  EmulationResult emulation;
  HitFit hit;
  CalibrationParams params;
};

WorkloadSpec desk_workload();
std::int64_t desk_capacity();

// Emulates the desk workload, fits the logistic hit curve and fills in the
// rest of the parameters. Deterministic; takes about a second.
DeskProfile desk_profile();

// Measurement traces a desk run would record, drawn around the profile:
// owner-tagged rpc timings over a delay sweep, one window sample per grid
// window carrying the emulated hit rate, and a power log. `noise` is the
// relative standard deviation of every timing and power reading.
struct DeskTraces {
  std::vector<RpcSample> rpc;
  std::vector<WindowSample> window;
  std::vector<PowerSample> power;
};

DeskTraces desk_traces(const DeskProfile& desk, std::uint64_t seed, double noise = 0.01, int rpc_samples = 200);

// The knobs calibrate() cannot infer from traces, as the desk profile sets them.
CalibrationConfig desk_calibration_config(const DeskProfile& desk);

// Step time the desk would measure at window w with per-owner one-way delays:
// the emulated hit rate in place of the logistic curve.
double desk_measured_step_time(const DeskProfile& desk, int w, std::span<const double> delays_ms);

}  // namespace wincache
