#include <array>
#include "wincache/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"
#include "wincache/nelder_mead.hpp"

namespace wincache {

namespace {

double r_squared(std::span<const double> y, std::span<const double> yhat) {
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double rms(std::span<const double> y, std::span<const double> yhat) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

}  // namespace

RpcFit fit_rpc_ols(std::span<const RpcSample> samples) {
  for (const auto& s : samples)
    if (!(s.n_bytes >= 0.0) || !(s.delta_ms >= 0.0) || !(s.rtt_s > 0.0))
      throw ValidationError("rpc samples need n_bytes >= 0, delta_ms >= 0, rtt_s > 0");
  if (samples.size() < 3)
    throw FitError("rank-deficient rpc design: " + std::to_string(samples.size()) +
                   " samples cannot determine alpha_rpc, beta, gamma_c");
  std::set<double> payloads, delays;
  for (const auto& s : samples) {
    payloads.insert(s.n_bytes);
    if (s.n_bytes > 0.0) delays.insert(s.delta_ms);
  }
  if (payloads.size() < 2) throw FitError("rank-deficient rpc design: regressor beta (payload) has a single value");
  if (delays.size() < 2)
    throw FitError("rank-deficient rpc design: regressor gamma_c (payload x delay) needs two distinct delays");

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    X(i, 1) = s.n_bytes;
    X(i, 2) = s.n_bytes * s.delta_ms;
    y(i) = s.rtt_s;
  }
  // Column scaling keeps the normal equations well conditioned across 1e3..1e8 byte payloads.
  Eigen::Vector3d scale = X.colwise().norm().transpose();
  for (int c = 0; c < 3; ++c) scale(c) = scale(c) > 0.0 ? scale(c) : 1.0;
  const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();

  const Eigen::Matrix3d normal = Xs.transpose() * Xs;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();

  Eigen::Vector3d coef;
  if (cond <= 1e12) {
    coef = normal.ldlt().solve(Xs.transpose() * y);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    qr.setThreshold(1e-12);
    if (qr.rank() < 3) {
      static const char* kNames[] = {"alpha_rpc (intercept)", "beta (payload)", "gamma_c (payload x delay)"};
      // The last pivoted column is the one the decomposition could not resolve.
      const auto deficient = qr.colsPermutation().indices()(2);
      throw FitError(std::string("rank-deficient rpc design: regressor ") + kNames[deficient] +
                     " is collinear with the others");
    }
    coef = qr.solve(y);
  }
  coef = coef.cwiseQuotient(scale);

  std::vector<double> yv(samples.size()), yhat(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    yv[i] = y(static_cast<Eigen::Index>(i));
    yhat[i] = coef(0) + coef(1) * samples[i].n_bytes + coef(2) * samples[i].n_bytes * samples[i].delta_ms;
  }
  RpcFit fit{coef(0), coef(1), coef(2), {}};
  fit.report.names = {"alpha_rpc", "beta", "gamma_c"};
  fit.report.values = {coef(0), coef(1), coef(2)};
  fit.report.r_squared = r_squared(yv, yhat);
  fit.report.residual_rms = rms(yv, yhat);
  fit.report.iterations = 1;
  return fit;
}

namespace {

struct Logistic {
  double h_min, h_max, log_w_half, log_gamma;

  double eval(double w) const {
    const double z = std::exp(std::exp(log_gamma) * (std::log(w) - log_w_half));
    return h_min + (h_max - h_min) / (1.0 + z);
  }
};

void check_window_samples(std::span<const WindowSample> samples, std::size_t min_count, const char* what) {
  std::set<int> ws;
  for (const auto& s : samples) {
    if (s.w < 1) throw ValidationError("window samples need w >= 1");
    if (!(s.hit >= 0.0 && s.hit <= 1.0)) throw ValidationError("window samples need hit in [0, 1]");
    ws.insert(s.w);
  }
  if (ws.size() < min_count)
    throw ValidationError(std::string(what) + " needs at least " + std::to_string(min_count) +
                          " distinct windows, got " + std::to_string(ws.size()));
}

}  // namespace

HitFit fit_hit_logistic(std::span<const WindowSample> samples) {
  check_window_samples(samples, 4, "logistic hit fit");
  const std::size_t n = samples.size();
  std::vector<double> y(n), lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = samples[i].hit;
    lw[i] = std::log(static_cast<double>(samples[i].w));
  }
  const auto [mn, mx] = std::minmax_element(y.begin(), y.end());

  HitFit fit{};
  fit.report.names = {"h_min", "h_max", "w_half", "gamma_h"};
  if (*mx - *mn < 1e-9) {
    std::vector<int> ws;
    for (const auto& s : samples) ws.push_back(s.w);
    std::sort(ws.begin(), ws.end());
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    fit.h_min = fit.h_max = mean;
    fit.w_half = ws[ws.size() / 2];
    fit.gamma_h = 1.0;
    fit.report.values = {fit.h_min, fit.h_max, fit.w_half, fit.gamma_h};
    fit.report.r_squared = 1.0;
    fit.report.degenerate = true;
    return fit;
  }

  // Start: observed extremes as asymptotes, half-saturation at the window whose hit is nearest the midpoint.
  const double mid = 0.5 * (*mn + *mx);
  std::size_t mid_idx = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(y[i] - mid) < std::abs(y[mid_idx] - mid)) mid_idx = i;
  Logistic cur{*mn, *mx, lw[mid_idx], 0.0};

  auto sse_of = [&](const Logistic& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - m.eval(samples[i].w);
      s += r * r;
    }
    return s;
  };
  auto project = [](Logistic& m) {
    m.h_min = std::clamp(m.h_min, 0.0, 1.0);
    m.h_max = std::clamp(m.h_max, m.h_min, 1.0);
    m.log_gamma = std::clamp(m.log_gamma, -10.0, 5.0);
  };

  // Levenberg-Marquardt with Marquardt diagonal scaling.
  double sse = sse_of(cur);
  double sst = 0.0;
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  for (double v : y) sst += (v - ybar) * (v - ybar);
  double mu = 1e-3;
  constexpr int kMaxIter = 10000;
  int it = 0;
  int stalled = 0;
  bool converged = false;
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), 4);
  Eigen::VectorXd r(static_cast<Eigen::Index>(n));
  for (; it < kMaxIter; ++it) {
    const double g = std::exp(cur.log_gamma);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = lw[i] - cur.log_w_half;
      const double z = std::exp(g * u);
      const double s = 1.0 / (1.0 + z);
      const double span = cur.h_max - cur.h_min;
      const auto ii = static_cast<Eigen::Index>(i);
      J(ii, 0) = 1.0 - s;
      J(ii, 1) = s;
      J(ii, 2) = span * s * s * z * g;
      J(ii, 3) = -span * s * s * z * g * u;
      r(ii) = y[i] - (cur.h_min + span * s);
    }
    const Eigen::Matrix4d JtJ = J.transpose() * J;
    const Eigen::Vector4d Jtr = J.transpose() * r;
    const double tol = 1e-12;
    std::array<bool, 4> active{
        (cur.h_min <= tol && Jtr(0) < 0) || (cur.h_min >= cur.h_max - tol && Jtr(0) > 0),
        (cur.h_max >= 1.0 - tol && Jtr(1) > 0) || (cur.h_max <= cur.h_min + tol && Jtr(1) < 0),
        false,
        (cur.log_gamma >= 5.0 - tol && Jtr(3) > 0) || (cur.log_gamma <= -10.0 + tol && Jtr(3) < 0)};
    double pg = 0.0;
    for (int d = 0; d < 4; ++d)
      if (!active[d]) pg = std::max(pg, std::abs(Jtr(d)));
    if (pg < 1e-15 || sse < 1e-16 * sst) {
      converged = true;
      break;
    }
    bool improved = false;
    for (int tries = 0; tries < 60 && !improved; ++tries) {
      Eigen::Matrix4d A = JtJ;
      Eigen::Vector4d rhs = Jtr;
      for (int d = 0; d < 4; ++d) A(d, d) += mu * std::max(JtJ(d, d), 1e-12);
      // Freeze parameters pinned on a bound whose descent direction points outward.
      for (int d = 0; d < 4; ++d) {
        if (!active[d]) continue;
        A.row(d).setZero();
        A.col(d).setZero();
        A(d, d) = 1.0;
        rhs(d) = 0.0;
      }
      const Eigen::Vector4d step = A.ldlt().solve(rhs);
      Logistic next{cur.h_min + step(0), cur.h_max + step(1), cur.log_w_half + step(2), cur.log_gamma + step(3)};
      project(next);
      const double nsse = sse_of(next);
      if (nsse < sse) {
        const double rel = (sse - nsse) / std::max(sse, 1e-300);
        const bool tiny = rel < 1e-13 || sse - nsse < 1e-18 * sst;
        cur = next;
        sse = nsse;
        mu = std::max(mu / 3.0, 1e-12);
        improved = true;
        stalled = tiny ? stalled + 1 : 0;
      } else {
        mu *= 4.0;
      }
    }
    // No descent at any damping, or a run of negligible improvements (typical
    // when an asymptote sits on its [0, 1] bound): a constrained minimum.
    if (!improved || stalled >= 5) {
      converged = true;
      break;
    }
  }
  fit.h_min = cur.h_min;
  fit.h_max = cur.h_max;
  fit.w_half = std::exp(cur.log_w_half);
  fit.gamma_h = std::exp(cur.log_gamma);
  fit.report.values = {fit.h_min, fit.h_max, fit.w_half, fit.gamma_h};
  if (!converged) throw FitError("logistic hit fit did not converge in " + std::to_string(kMaxIter) + " iterations",
                                 fit.report.values);
  std::vector<double> yhat(n);
  for (std::size_t i = 0; i < n; ++i) yhat[i] = cur.eval(samples[i].w);
  fit.report.r_squared = r_squared(y, yhat);
  fit.report.residual_rms = rms(y, yhat);
  fit.report.iterations = it;
  fit.report.degenerate = fit.h_max - fit.h_min < 1e-6;
  return fit;
}

RebuildFit fit_rebuild_powerlaw(std::span<const WindowSample> samples) {
  check_window_samples(samples, 3, "rebuild power-law fit");
  const std::size_t n = samples.size();
  std::vector<double> w(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = samples[i].w;
    y[i] = samples[i].t_rebuild_s;
    if (!(y[i] > 0.0)) throw ValidationError("rebuild samples need t_rebuild_s > 0");
  }
  const double ymean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  constexpr double kEps = 1e-6;
  constexpr double kPenalty = 1e6;
  auto objective = [&](std::span<const double> x) {
    const double c = std::clamp(x[2], kEps, 1.0 - kEps);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (x[0] + x[1] * std::pow(w[i], c) - y[i]) / ymean;
      s += r * r;
    }
    return s + kPenalty * (x[2] - c) * (x[2] - c);
  };

  // Heuristic start: c = 1/2, then (a, b) by linear least squares on sqrt(w).
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::sqrt(w[i]);
    sx += x;
    sy += y[i];
    sxx += x * x;
    sxy += x * y[i];
  }
  const double dn = static_cast<double>(n);
  double b0 = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
  if (!(b0 > 0.0)) b0 = ymean / std::sqrt(w.back());
  const double a0 = (sy - b0 * sx) / dn;

  NelderMeadOptions opts;
  NelderMeadResult res = nelder_mead(objective, {a0, b0, 0.5}, opts);
  int total = res.iterations;
  // One restart from the best vertex guards against a prematurely collapsed simplex.
  if (res.converged && total < opts.max_iterations) {
    NelderMeadOptions again = opts;
    again.max_iterations = opts.max_iterations - total;
    NelderMeadResult res2 = nelder_mead(objective, res.x, again);
    total += res2.iterations;
    if (res2.f <= res.f) res = res2;
    res.converged = res2.converged;
  }

  RebuildFit fit{};
  fit.report.names = {"a_reb", "b_reb", "c_reb"};
  const double c = std::clamp(res.x[2], kEps, 1.0 - kEps);
  fit.a_reb = res.x[0];
  fit.b_reb = res.x[1];
  fit.c_reb = c;
  fit.report.values = {fit.a_reb, fit.b_reb, fit.c_reb};
  fit.report.iterations = total;
  if (!res.converged)
    throw FitError("rebuild power-law fit exceeded " + std::to_string(opts.max_iterations) + " iterations",
                   fit.report.values);
  fit.report.at_boundary = res.x[2] != c || c - kEps < 1e-4 || (1.0 - kEps) - c < 1e-4;
  std::vector<double> yhat(n);
  for (std::size_t i = 0; i < n; ++i) yhat[i] = fit.a_reb + fit.b_reb * std::pow(w[i], c);
  fit.report.r_squared = r_squared(y, yhat);
  fit.report.residual_rms = rms(y, yhat);
  return fit;
}

CalibrationResult calibrate(std::span<const RpcSample> rpc, std::span<const WindowSample> window,
                            std::span<const PowerSample> power, const CalibrationConfig& config) {
  if (power.empty()) throw ValidationError("power trace is empty");
  if (config.p_partitions < 2) throw ValidationError("p_partitions must be >= 2");
  if (window.empty()) throw ValidationError("window trace is empty");
  if (!(config.miss_overlap >= 1.0)) throw ValidationError("miss_overlap must be >= 1");

  CalibrationResult out;
  out.rpc = fit_rpc_ols(rpc);
  out.hit = fit_hit_logistic(window);
  out.rebuild = fit_rebuild_powerlaw(window);

  CalibrationParams& p = out.params;
  p.alpha_rpc = out.rpc.alpha_rpc;
  p.beta = out.rpc.beta;
  p.gamma_c = out.rpc.gamma_c;
  p.h_min = out.hit.h_min;
  p.h_max = out.hit.h_max;
  p.w_half = out.hit.w_half;
  p.gamma_h = out.hit.gamma_h;
  p.a_reb = out.rebuild.a_reb;
  p.b_reb = out.rebuild.b_reb;
  p.c_reb = out.rebuild.c_reb;
  p.f_bytes = config.f_bytes;
  p.r_remote = config.r_remote;
  p.alpha_overlap = config.alpha_overlap;
  p.k_ar = config.k_ar;

  double watts = 0.0;
  for (const auto& s : power) {
    if (!(s.watts > 0.0)) throw ValidationError("power samples must be > 0 W");
    watts += s.watts;
  }
  p.p_bar = watts / static_cast<double>(power.size());

  // Per-node miss latency per owner: initiation-free latency of clean fetches,
  // payload-weighted over that owner's slice of the trace.
  const auto owners = static_cast<std::size_t>(config.p_partitions - 1);
  std::vector<double> excess(owners + 1, 0.0), nodes(owners + 1, 0.0);
  for (const auto& s : rpc) {
    if (s.delta_ms != 0.0 || s.n_bytes <= 0.0) continue;
    if (s.owner >= 0 && static_cast<std::size_t>(s.owner) >= owners)
      throw ValidationError("rpc sample owner index out of range");
    const std::size_t slot = s.owner >= 0 ? static_cast<std::size_t>(s.owner) : owners;
    for (std::size_t k : {slot, owners}) {
      excess[k] += s.rtt_s - p.alpha_rpc;
      nodes[k] += s.n_bytes / config.f_bytes;
      if (slot == owners) break;
    }
  }
  const double aggregate = nodes[owners] > 0.0 ? excess[owners] / nodes[owners] : p.beta * config.f_bytes;
  p.t_miss_base.assign(owners, aggregate);
  for (std::size_t o = 0; o < owners; ++o)
    if (nodes[o] > 0.0) p.t_miss_base[o] = excess[o] / nodes[o];
  for (double& t : p.t_miss_base) t /= config.miss_overlap;
  for (double& t : p.t_miss_base)
    if (!(t > 0.0)) throw FitError("non-positive per-node miss latency; rpc trace inconsistent with fitted alpha_rpc");

  // Invert the step-time model at the best-measured window.
  const double t_miss = *std::max_element(p.t_miss_base.begin(), p.t_miss_base.end());
  double t_base = std::numeric_limits<double>::infinity();
  for (const auto& s : window) {
    const double rest = s.t_step_s - p.alpha_overlap * s.t_rebuild_s / s.w - p.r_remote * t_miss * (1.0 - s.hit);
    t_base = std::min(t_base, rest);
  }
  if (!(t_base > 0.0)) throw FitError("extracted t_base is not positive; window trace inconsistent with the model");
  p.t_base = t_base;
  p.validate();
  return out;
}

namespace {

std::vector<nlohmann::json> read_jsonl(const std::string& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trace file: " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      if (!j.contains("trace_kind") || !j.contains("schema_version"))
        throw ValidationError(path + ": first line must declare trace_kind and schema_version");
      if (j.at("trace_kind") != kind)
        throw ValidationError(path + ": expected trace_kind " + kind + ", got " + j.at("trace_kind").dump());
      if (j.at("schema_version") != kTraceSchemaVersion) throw ValidationError(path + ": unsupported schema_version");
      header = true;
      continue;
    }
    rows.push_back(std::move(j));
  }
  if (!header) throw ValidationError(path + ": empty trace file");
  return rows;
}

template <class F>
auto parse_rows(const std::string& path, const std::string& kind, F&& f) {
  auto rows = read_jsonl(path, kind);
  std::vector<decltype(f(rows.front()))> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      out.push_back(f(rows[i]));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::string& path, const std::string& kind, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write trace file: " + path);
  out << nlohmann::json{{"trace_kind", kind}, {"schema_version", kTraceSchemaVersion}}.dump() << '\n';
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

std::vector<RpcSample> read_rpc_trace(const std::string& path) {
  return parse_rows(path, "rpc", [](const nlohmann::json& j) {
    return RpcSample{j.at("n_bytes").get<double>(), j.at("delta_ms").get<double>(), j.at("rtt_s").get<double>(),
                     j.value("owner", -1)};
  });
}

std::vector<WindowSample> read_window_trace(const std::string& path) {
  return parse_rows(path, "window", [](const nlohmann::json& j) {
    return WindowSample{j.at("w").get<int>(), j.at("t_step_s").get<double>(), j.at("hit").get<double>(),
                        j.at("t_rebuild_s").get<double>()};
  });
}

std::vector<PowerSample> read_power_trace(const std::string& path) {
  return parse_rows(path, "power",
                    [](const nlohmann::json& j) { return PowerSample{j.at("t").get<double>(), j.at("watts").get<double>()}; });
}

void write_rpc_trace(const std::string& path, std::span<const RpcSample> samples) {
  std::vector<nlohmann::json> rows;
  for (const auto& s : samples) {
    nlohmann::json j{{"n_bytes", s.n_bytes}, {"delta_ms", s.delta_ms}, {"rtt_s", s.rtt_s}};
    if (s.owner >= 0) j["owner"] = s.owner;
    rows.push_back(std::move(j));
  }
  write_jsonl(path, "rpc", rows);
}

void write_window_trace(const std::string& path, std::span<const WindowSample> samples) {
  std::vector<nlohmann::json> rows;
  for (const auto& s : samples)
    rows.push_back({{"w", s.w}, {"t_step_s", s.t_step_s}, {"hit", s.hit}, {"t_rebuild_s", s.t_rebuild_s}});
  write_jsonl(path, "window", rows);
}

void write_power_trace(const std::string& path, std::span<const PowerSample> samples) {
  std::vector<nlohmann::json> rows;
  for (const auto& s : samples) rows.push_back({{"t", s.t_s}, {"watts", s.watts}});
  write_jsonl(path, "power", rows);
}

}  // namespace wincache
