#include "wincache/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"

namespace wincache {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

void check_window(double w) {
  if (!(w >= 1.0)) throw ValidationError("window must be >= 1, got " + std::to_string(w));
}

}  // namespace

void CalibrationParams::validate() const {
  require(finite_positive(alpha_rpc), "alpha_rpc must be > 0");
  require(std::isfinite(beta) && beta >= 0.0, "beta must be >= 0");
  require(std::isfinite(gamma_c) && gamma_c >= 0.0, "gamma_c must be >= 0");
  // h_min == h_max is admitted: a flat hit curve is a legitimate (degenerate) fit.
  require(h_min >= 0.0 && h_min <= h_max && h_max <= 1.0, "hit bounds must satisfy 0 <= h_min <= h_max <= 1");
  require(finite_positive(w_half), "w_half must be > 0");
  require(finite_positive(gamma_h), "gamma_h must be > 0");
  require(std::isfinite(a_reb) && a_reb >= 0.0, "a_reb must be >= 0");
  require(finite_positive(b_reb), "b_reb must be > 0");
  require(c_reb > 0.0 && c_reb < 1.0, "c_reb must lie in (0, 1)");
  require(finite_positive(p_bar), "p_bar must be > 0");
  require(finite_positive(t_base), "t_base must be > 0");
  require(alpha_overlap >= 0.0 && alpha_overlap <= 1.0, "alpha_overlap must lie in [0, 1]");
  require(std::isfinite(r_remote) && r_remote >= 0.0, "r_remote must be >= 0");
  require(finite_positive(f_bytes), "f_bytes must be > 0");
  require(!t_miss_base.empty(), "t_miss_base must have one entry per remote owner");
  for (double t : t_miss_base) require(finite_positive(t), "t_miss_base entries must be > 0");
  require(std::isfinite(k_ar) && k_ar >= 0.0, "k_ar must be >= 0");
}

void CongestionVector::validate() const {
  if (sigma.empty()) throw ValidationError("congestion vector is empty");
  for (double s : sigma)
    if (!(s >= 1.0) || !std::isfinite(s)) throw ValidationError("congestion multipliers must be >= 1");
}

double CongestionVector::max() const { return *std::max_element(sigma.begin(), sigma.end()); }

double rpc_time(double n_bytes, double delta_ms, const CalibrationParams& p) {
  if (!(n_bytes >= 0.0)) throw ValidationError("rpc payload must be >= 0 bytes");
  if (!(delta_ms >= 0.0)) throw ValidationError("injected delay must be >= 0 ms");
  return p.alpha_rpc + p.beta * n_bytes + p.gamma_c * n_bytes * delta_ms;
}

double hit_rate(double w, const CalibrationParams& p) {
  check_window(w);
  return p.h_min + (p.h_max - p.h_min) / (1.0 + std::pow(w / p.w_half, p.gamma_h));
}

double rebuild_time(double w, const CalibrationParams& p) {
  check_window(w);
  return p.a_reb + p.b_reb * std::pow(w, p.c_reb);
}

double congested_miss_latency(const CongestionVector& cv, const CalibrationParams& p) {
  cv.validate();
  if (cv.sigma.size() != p.t_miss_base.size())
    throw ValidationError("congestion vector has " + std::to_string(cv.sigma.size()) +
                          " owners, t_miss_base has " + std::to_string(p.t_miss_base.size()));
  double worst = 0.0;
  for (std::size_t o = 0; o < cv.sigma.size(); ++o) worst = std::max(worst, p.t_miss_base[o] * cv.sigma[o]);
  return worst;
}

double allreduce_penalty(const CongestionVector& cv, const CalibrationParams& p) {
  cv.validate();
  return p.k_ar * (cv.max() - 1.0);
}

double step_time(double w, const CongestionVector& cv, const CalibrationParams& p) {
  const double amortized = p.alpha_overlap * rebuild_time(w, p) / w;
  const double miss = p.r_remote * congested_miss_latency(cv, p) * (1.0 - hit_rate(w, p));
  return p.t_base + amortized + miss + allreduce_penalty(cv, p);
}

double step_energy(double w, const CongestionVector& cv, const CalibrationParams& p) {
  return p.p_bar * step_time(w, cv, p);
}

int optimal_window(const CongestionVector& cv, const CalibrationParams& p, std::span<const int> grid) {
  if (grid.empty()) throw ValidationError("window grid is empty");
  int best = 0;
  double best_e = 0.0;
  bool have = false;
  for (int w : grid) {
    const double e = step_energy(w, cv, p);
    if (!have || e < best_e || (e == best_e && w < best)) {
      best = w;
      best_e = e;
      have = true;
    }
  }
  return best;
}

double sigma_of_delta(double delta_ms, const CalibrationParams& p) {
  const double n_ref = p.r_remote * p.f_bytes;
  return rpc_time(n_ref, delta_ms, p) / rpc_time(n_ref, 0.0, p);
}

double delta_of_sigma(double sigma, const CalibrationParams& p) {
  if (sigma <= 1.0) return 0.0;
  const double n_ref = p.r_remote * p.f_bytes;
  if (p.gamma_c <= 0.0 || n_ref <= 0.0) return 0.0;
  return (sigma - 1.0) * rpc_time(n_ref, 0.0, p) / (p.gamma_c * n_ref);
}

void to_json(nlohmann::json& j, const CalibrationParams& p) {
  j = nlohmann::json{{"schema_version", kParamsSchemaVersion},
                     {"alpha_rpc", p.alpha_rpc},
                     {"beta", p.beta},
                     {"gamma_c", p.gamma_c},
                     {"h_min", p.h_min},
                     {"h_max", p.h_max},
                     {"w_half", p.w_half},
                     {"gamma_h", p.gamma_h},
                     {"a_reb", p.a_reb},
                     {"b_reb", p.b_reb},
                     {"c_reb", p.c_reb},
                     {"p_bar", p.p_bar},
                     {"t_base", p.t_base},
                     {"alpha_overlap", p.alpha_overlap},
                     {"r_remote", p.r_remote},
                     {"f_bytes", p.f_bytes},
                     {"t_miss_base", p.t_miss_base},
                     {"k_ar", p.k_ar}};
}

void from_json(const nlohmann::json& j, CalibrationParams& p) {
  if (!j.is_object()) throw ValidationError("calibration params must be a JSON object");
  if (!j.contains("schema_version")) throw ValidationError("calibration params missing schema_version");
  if (j.at("schema_version").get<int>() != kParamsSchemaVersion)
    throw ValidationError("unsupported calibration params schema_version");
  static const char* kFields[] = {"alpha_rpc", "beta",   "gamma_c", "h_min",         "h_max",
                                  "w_half",    "gamma_h", "a_reb",  "b_reb",         "c_reb",
                                  "p_bar",     "t_base", "alpha_overlap", "r_remote", "f_bytes",
                                  "t_miss_base", "k_ar"};
  for (const auto& [key, _] : j.items()) {
    if (key == "schema_version") continue;
    bool known = false;
    for (const char* f : kFields) known = known || key == f;
    if (!known) throw ValidationError("unknown calibration params key: " + key);
  }
  for (const char* f : kFields)
    if (!j.contains(f) && std::string(f) != "k_ar") throw ValidationError(std::string("calibration params missing key: ") + f);
  try {
    j.at("alpha_rpc").get_to(p.alpha_rpc);
    j.at("beta").get_to(p.beta);
    j.at("gamma_c").get_to(p.gamma_c);
    j.at("h_min").get_to(p.h_min);
    j.at("h_max").get_to(p.h_max);
    j.at("w_half").get_to(p.w_half);
    j.at("gamma_h").get_to(p.gamma_h);
    j.at("a_reb").get_to(p.a_reb);
    j.at("b_reb").get_to(p.b_reb);
    j.at("c_reb").get_to(p.c_reb);
    j.at("p_bar").get_to(p.p_bar);
    j.at("t_base").get_to(p.t_base);
    j.at("alpha_overlap").get_to(p.alpha_overlap);
    j.at("r_remote").get_to(p.r_remote);
    j.at("f_bytes").get_to(p.f_bytes);
    j.at("t_miss_base").get_to(p.t_miss_base);
    p.k_ar = j.value("k_ar", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed calibration params: ") + e.what());
  }
  p.validate();
}

CalibrationParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open params file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse params file " + path + ": " + e.what());
  }
  return j.get<CalibrationParams>();
}

void save_params(const std::string& path, const CalibrationParams& p) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write params file: " + path);
  out << nlohmann::json(p).dump(2) << '\n';
}

}  // namespace wincache
