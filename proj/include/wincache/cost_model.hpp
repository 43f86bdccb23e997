#pragma once

// Analytic step-time and energy model for windowed remote-feature caching.
//
// A training step costs an irreducible compute time, the amortized share of
// the cache rebuild that stays on the critical path, and the remote-miss
// stall. Congestion enters through per-owner latency multipliers; energy is
// mean system power times wall time.

#include <array>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wincache {

inline constexpr int kParamsSchemaVersion = 1;

// Rebuild windows the controller can choose from, in batches.
inline constexpr std::array<int, 8> kWindowGrid{1, 2, 4, 8, 16, 32, 64, 128};

struct CalibrationParams {
  double alpha_rpc = 4.67e-3;     // s, per-RPC initiation
  double beta = 1.40e-9;          // s / byte
  double gamma_c = 2.01e-10;      // s / (byte * ms of one-way delay)
  double h_min = 0.2;
  double h_max = 0.9;
  double w_half = 12.0;           // batches
  double gamma_h = 1.5;
  double a_reb = 0.01;            // s
  double b_reb = 0.02;            // s
  double c_reb = 0.5;
  double p_bar = 100.0;           // W
  double t_base = 0.05;           // s
  double alpha_overlap = 0.1;
  double r_remote = 1000.0;       // remote nodes per batch
  double f_bytes = 400.0;         // bytes per node feature row
  std::vector<double> t_miss_base{5e-3, 5e-3, 5e-3};  // s per node, one per remote owner
  double k_ar = 0.0;              // s per unit of (max sigma - 1)

  std::size_t owners() const { return t_miss_base.size(); }

  // Throws ValidationError naming the first offending field.
  void validate() const;
};

struct CongestionVector {
  std::vector<double> sigma;  // one multiplier >= 1 per remote owner

  static CongestionVector clean(std::size_t owners) { return {std::vector<double>(owners, 1.0)}; }
  void validate() const;
  double max() const;
};

double rpc_time(double n_bytes, double delta_ms, const CalibrationParams& p);
double hit_rate(double w, const CalibrationParams& p);
double rebuild_time(double w, const CalibrationParams& p);
double congested_miss_latency(const CongestionVector& cv, const CalibrationParams& p);
double allreduce_penalty(const CongestionVector& cv, const CalibrationParams& p);
double step_time(double w, const CongestionVector& cv, const CalibrationParams& p);
double step_energy(double w, const CongestionVector& cv, const CalibrationParams& p);

// Grid element with the lowest step energy; ties go to the smaller window.
int optimal_window(const CongestionVector& cv, const CalibrationParams& p,
                   std::span<const int> grid = kWindowGrid);

// Multiplier an owner's fetch latency picks up at one-way delay `delta_ms`,
// evaluated at the reference payload r_remote * f_bytes.
double sigma_of_delta(double delta_ms, const CalibrationParams& p);

// Inverse of sigma_of_delta; returns 0 for sigma <= 1.
double delta_of_sigma(double sigma, const CalibrationParams& p);

void to_json(nlohmann::json& j, const CalibrationParams& p);
void from_json(const nlohmann::json& j, CalibrationParams& p);

CalibrationParams load_params(const std::string& path);
void save_params(const std::string& path, const CalibrationParams& p);

}  // namespace wincache
