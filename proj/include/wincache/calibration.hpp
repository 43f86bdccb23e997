#pragma once

// Offline fitting of CalibrationParams from measurement traces: an OLS fit of
// the RPC latency model, a nonlinear logistic fit of the hit curve, a
// Nelder-Mead power-law fit of rebuild time, and the mean power baseline.

#include <span>
#include <string>
#include <vector>

#include "wincache/cost_model.hpp"

namespace wincache {

inline constexpr int kTraceSchemaVersion = 1;

struct RpcSample {
  double n_bytes = 0.0;
  double delta_ms = 0.0;
  double rtt_s = 0.0;
  int owner = -1;  // remote owner index, -1 when the trace is not owner-tagged
};

struct WindowSample {
  int w = 1;
  double t_step_s = 0.0;
  double hit = 0.0;
  double t_rebuild_s = 0.0;
};

struct PowerSample {
  double t_s = 0.0;
  double watts = 0.0;
};

struct FitReport {
  std::vector<std::string> names;
  std::vector<double> values;
  double r_squared = 0.0;
  double residual_rms = 0.0;
  int iterations = 0;
  bool degenerate = false;  // flat hit curve, h_max - h_min collapsed
  bool at_boundary = false; // constrained exponent pinned at its bound
};

struct RpcFit {
  double alpha_rpc, beta, gamma_c;
  FitReport report;
};

struct HitFit {
  double h_min, h_max, w_half, gamma_h;
  FitReport report;
};

struct RebuildFit {
  double a_reb, b_reb, c_reb;
  FitReport report;
};

RpcFit fit_rpc_ols(std::span<const RpcSample> samples);
HitFit fit_hit_logistic(std::span<const WindowSample> samples);
RebuildFit fit_rebuild_powerlaw(std::span<const WindowSample> samples);

// Quantities the traces cannot determine on their own.
struct CalibrationConfig {
  int p_partitions = 4;
  double f_bytes = 400.0;
  double r_remote = 1000.0;
  double alpha_overlap = 0.1;
  double k_ar = 0.0;
  // Owners fetched concurrently share a batch's miss stall; the per-node
  // latency measured on one link is divided by this.
  double miss_overlap = 1.0;
};

struct CalibrationResult {
  CalibrationParams params;
  RpcFit rpc;
  HitFit hit;
  RebuildFit rebuild;
};

CalibrationResult calibrate(std::span<const RpcSample> rpc, std::span<const WindowSample> window,
                            std::span<const PowerSample> power, const CalibrationConfig& config);

// Line-delimited JSON traces: a header {"trace_kind": ..., "schema_version": 1}
// followed by one sample object per line.
std::vector<RpcSample> read_rpc_trace(const std::string& path);
std::vector<WindowSample> read_window_trace(const std::string& path);
std::vector<PowerSample> read_power_trace(const std::string& path);
void write_rpc_trace(const std::string& path, std::span<const RpcSample> samples);
void write_window_trace(const std::string& path, std::span<const WindowSample> samples);
void write_power_trace(const std::string& path, std::span<const PowerSample> samples);

}  // namespace wincache
