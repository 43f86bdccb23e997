#include "wincache/controller.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"
#include "wincache/rng.hpp"

namespace wincache {

namespace {

double median_of(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

FetchWindow::FetchWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity < static_cast<std::size_t>(kDetectorSpan))
    throw ValidationError("fetch window capacity must be >= " + std::to_string(kDetectorSpan));
}

void FetchWindow::push(const FetchSample& s) {
  if (!(s.rtt_s > 0.0) || !std::isfinite(s.rtt_s)) throw ValidationError("rtt must be positive and finite");
  if (s.owner < 0) throw ValidationError("owner must be >= 0");
  if (!samples_.empty() && s.t < samples_.back().t) throw ValidationError("fetch samples must arrive in time order");
  if (samples_.size() == capacity_) samples_.pop_front();
  samples_.push_back(s);
}

std::optional<double> FetchWindow::recent_median(int span) const {
  std::vector<double> v;
  for (auto it = samples_.rbegin(); it != samples_.rend() && static_cast<int>(v.size()) < span; ++it)
    v.push_back(it->rtt_s);
  if (v.empty()) return std::nullopt;
  return median_of(v);
}

std::optional<double> FetchWindow::recent_median(int owner, int span) const {
  std::vector<double> v;
  for (auto it = samples_.rbegin(); it != samples_.rend() && static_cast<int>(v.size()) < span; ++it)
    if (it->owner == owner) v.push_back(it->rtt_s);
  if (v.empty()) return std::nullopt;
  return median_of(v);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ValidationError("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // Guard the product against landing a hair above an integer.
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

void estimate_baseline(BaselineEstimate& base, std::span<const double> warmup_rtts) {
  if (base.warmup_complete) throw StateError("baseline is already set");
  if (warmup_rtts.size() < kMinBaselineSamples)
    throw ValidationError("baseline needs at least " + std::to_string(kMinBaselineSamples) + " warm-up samples");
  for (double r : warmup_rtts)
    if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("warm-up rtts must be positive and finite");
  base.t_base_fetch = percentile_nearest_rank({warmup_rtts.begin(), warmup_rtts.end()}, kBaselinePercentile);
  base.warmup_complete = true;
}

BaselineEstimate estimate_baseline(std::span<const double> warmup_rtts) {
  BaselineEstimate b;
  estimate_baseline(b, warmup_rtts);
  return b;
}

double delay_from_ratio(double ratio, const CalibrationParams& p) {
  if (!(ratio > kRatioFloor)) return 0.0;
  return std::clamp((ratio - 1.0) * p.beta / p.gamma_c, 0.0, kMaxDelayMs);
}

double detect_congestion(const FetchWindow& fw, const BaselineEstimate& base, const CalibrationParams& p) {
  if (!base.warmup_complete) throw StateError("congestion detection before the warm-up baseline exists");
  const auto m = fw.recent_median();
  if (!m) throw ValidationError("congestion detection needs at least one fetch sample");
  return delay_from_ratio(*m / base.t_base_fetch, p);
}

SigmaEstimate estimate_sigma_per_owner(const FetchWindow& fw, const BaselineEstimate& base, const CalibrationParams& p,
                                       int owners) {
  if (!base.warmup_complete) throw StateError("sigma estimation before the warm-up baseline exists");
  SigmaEstimate e;
  for (int o = 0; o < owners; ++o) {
    const auto m = fw.recent_median(o, kDetectorSpan);
    const double d = m ? delay_from_ratio(*m / base.t_base_fetch, p) : 0.0;
    e.delta_ms.push_back(d);
    e.sigma.sigma.push_back(m ? sigma_of_delta(d, p) : 1.0);
    e.stale.push_back(!m);
  }
  return e;
}

Decision decide(const FetchWindow& fw, const BaselineEstimate& base, const CacheStats& stats, int prev_action,
                Policy& policy, const DecideContext& ctx) {
  const int owners = ctx.p_partitions - 1;
  const int n_windows = static_cast<int>(ctx.window_grid.size());
  Decision d;
  d.sigma = estimate_sigma_per_owner(fw, base, ctx.params, owners);
  // Worst owner: a single slow link is diluted in the pooled median.
  d.delta_hat_ms = *std::max_element(d.sigma.delta_ms.begin(), d.sigma.delta_ms.end());

  RawSignals raw;
  raw.sigma_est = d.sigma.sigma.sigma;
  raw.owner_hits = stats.owner_hits;
  if (raw.owner_hits.empty()) raw.owner_hits.assign(static_cast<std::size_t>(owners), stats.global_hit);
  raw.global_hit = stats.global_hit;
  raw.t_step_ratio = stats.t_step_ratio;
  raw.f_rebuild = stats.f_rebuild;
  raw.f_miss = stats.f_miss;
  raw.e_ratio = stats.e_ratio;
  raw.b_rem = stats.b_rem;
  const ActionSpec prev = decode_action(prev_action, ctx.p_partitions, n_windows);
  raw.prev_window_index = prev.window_index;
  raw.prev_alloc = allocation_fractions(prev.alloc_template, owners);
  d.state = encode_state(raw, ctx.p_partitions, n_windows);

  d.action = policy.act({d.state, d.delta_hat_ms});
  const ActionSpec a = decode_action(d.action, ctx.p_partitions, n_windows);
  d.window = ctx.window_grid[static_cast<std::size_t>(a.window_index)];
  d.alloc_template = a.alloc_template;
  d.weights = allocation_fractions(a.alloc_template, owners);
  return d;
}

void PipelineConfig::validate() const {
  if (queue_depth < 1) throw ValidationError("queue_depth must be >= 1");
  if (capacity < 1) throw ValidationError("cache capacity must be >= 1");
  if (p_partitions < 2) throw ValidationError("p_partitions must be >= 2");
  if (window_grid.empty()) throw ValidationError("window_grid is empty");
  if (std::find(window_grid.begin(), window_grid.end(), initial_window) == window_grid.end())
    throw ValidationError("initial_window must be on the window grid");
  if (warmup_batches < 1) throw ValidationError("warmup_batches must be >= 1");
  if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch must be >= 1");
  if (!(sample_time_s >= 0.0)) throw ValidationError("sample_time_s must be >= 0");
  if (!(rtt_noise >= 0.0 && rtt_noise < 1.0)) throw ValidationError("rtt_noise must be in [0, 1)");
  if (fetch_window_capacity < static_cast<std::size_t>(kDetectorSpan))
    throw ValidationError("fetch_window_capacity must be >= " + std::to_string(kDetectorSpan));
}

namespace {

// Hot set of batches [s, e): most requested nodes first (ties to the lower
// ID), each owner capped at its budget, leftover budget to the next most
// requested nodes of any owner. Returned sorted by node ID.
std::vector<std::uint32_t> build_hot_set(const Trace& trace, std::size_t s, std::size_t e,
                                         const std::vector<std::int64_t>& budgets) {
  std::unordered_map<std::uint32_t, std::pair<std::uint32_t, std::uint16_t>> freq;
  for (std::size_t b = s; b < e; ++b)
    for (const Request& r : trace.batches[b]) {
      auto& f = freq[r.node];
      ++f.first;
      f.second = r.owner;
    }
  std::vector<std::pair<std::uint32_t, std::pair<std::uint32_t, std::uint16_t>>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second.first != b.second.first ? a.second.first > b.second.first : a.first < b.first;
  });
  std::vector<std::int64_t> left = budgets;
  std::vector<std::uint32_t> hot, spill;
  for (const auto& [node, f] : ranked) {
    if (left[f.second] > 0) {
      --left[f.second];
      hot.push_back(node);
    } else {
      spill.push_back(node);
    }
  }
  std::int64_t spare = 0;
  for (std::int64_t l : left) spare += l;
  for (std::size_t i = 0; i < spill.size() && spare > 0; ++i, --spare) hot.push_back(spill[i]);
  std::sort(hot.begin(), hot.end());
  return hot;
}

struct Buffer {
  std::vector<std::uint32_t> nodes;  // sorted
  int window = 0;
  int alloc_template = 0;
  int first_batch = 0;
  std::uint64_t version = 0;
  bool contains(std::uint32_t n) const { return std::binary_search(nodes.begin(), nodes.end(), n); }
};

}  // namespace

RunLog run_pipeline(const Trace& trace, Policy& policy, const PipelineConfig& config, const CalibrationParams& params,
                    const CongestionProfile& profile) {
  config.validate();
  params.validate();
  if (trace.batches.empty()) throw ValidationError("trace is empty");
  const int owners = config.p_partitions - 1;
  if (trace.owners != owners) throw ValidationError("trace owner count does not match p_partitions - 1");
  if (static_cast<int>(params.owners()) != owners) throw ValidationError("params owner count does not match");
  profile.validate(owners);
  if (!config.weights_override.empty()) CacheConfig{config.capacity, config.weights_override}.validate(owners);

  const int nb = static_cast<int>(trace.batches.size());
  const auto uo = static_cast<std::size_t>(owners);
  CounterRng jitter = CounterRng(config.seed).child("noise");
  auto noisy = [&](double v) {
    return config.rtt_noise > 0.0 ? v * (1.0 + config.rtt_noise * (2.0 * jitter.uniform() - 1.0)) : v;
  };
  auto budgets_for = [&](int tmpl) {
    const auto w = config.weights_override.empty() ? allocation_fractions(tmpl, owners) : config.weights_override;
    return owner_budgets(config.capacity, w);
  };
  auto delays_at = [&](int batch) {
    std::vector<double> d(uo);
    profile.delays_at(batch, d);
    return d;
  };
  auto sample_ready = [&](int batch) { return (batch + 1) * config.sample_time_s; };
  auto index_of = [&](int w) {
    return static_cast<int>(std::find(config.window_grid.begin(), config.window_grid.end(), w) -
                            config.window_grid.begin());
  };
  const int n_windows = static_cast<int>(config.window_grid.size());
  const DecideContext ctx{config.p_partitions, config.window_grid, params};

  RunLog log;
  log.owner_requests.assign(uo, 0);
  log.owner_hits.assign(uo, 0);

  FetchWindow fw(config.fetch_window_capacity);
  std::vector<double> warmup_rtts;
  BaselineEstimate base;

  // Build cost: compute proportional to the window plus one fetch per owner
  // for the nodes not already resident.
  auto build = [&](const Buffer* prev, int first, int window, int tmpl, std::uint64_t& carried,
                   std::uint64_t& fetched) {
    Buffer b;
    b.window = window;
    b.alloc_template = tmpl;
    b.first_batch = first;
    const int last = std::min(nb, first + window);
    b.nodes = build_hot_set(trace, static_cast<std::size_t>(first), static_cast<std::size_t>(last), budgets_for(tmpl));
    std::vector<std::uint64_t> fresh(uo, 0);
    carried = fetched = 0;
    for (std::uint32_t n : b.nodes) {
      if (prev && prev->contains(n)) {
        ++carried;
        continue;
      }
      ++fetched;
      const auto o = static_cast<std::size_t>(
          std::upper_bound(trace.owner_base.begin(), trace.owner_base.end(), n) - trace.owner_base.begin() - 1);
      ++fresh[o];
    }
    const auto d = delays_at(first);
    double fetch = 0.0;
    for (std::size_t o = 0; o < uo; ++o)
      if (fresh[o]) fetch = std::max(fetch, rpc_time(static_cast<double>(fresh[o]) * params.f_bytes, d[o], params));
    return std::pair{std::move(b), rebuild_time(window, params) + fetch};
  };

  std::vector<double> resolve_end(static_cast<std::size_t>(nb)), train_start(static_cast<std::size_t>(nb)),
      train_end(static_cast<std::size_t>(nb));

  // Window 0 is built before training starts.
  int cur_window = config.initial_window, cur_tmpl = 0;
  int cur_action = index_of(cur_window) * config.p_partitions;
  std::uint64_t carried = 0, fetched = 0;
  auto [active, build_s] = build(nullptr, 0, cur_window, cur_tmpl, carried, fetched);
  active.version = 1;
  double swap_t = std::max(sample_ready(std::min(nb, cur_window) - 1), 0.0) + build_s;
  double decided_delta = 0.0;
  std::vector<double> decided_sigma(uo, 1.0);
  double swap_wait = swap_t;
  CacheStats stats;
  stats.owner_hits.assign(uo, 0.0);

  int k = 0;
  for (int s = 0; s < nb; ++k) {
    const int e = std::min(nb, s + active.window);
    log.boundaries.push_back({k, s, active.window, active.alloc_template, cur_action, swap_t, decided_delta,
                              decided_sigma, carried, fetched, build_s, swap_wait});

    // Decide and start building the next window's buffer at this swap.
    int next_action = cur_action;
    double next_delta = 0.0;
    std::vector<double> next_sigma(uo, 1.0);
    if (!base.warmup_complete && s >= config.warmup_batches && warmup_rtts.size() >= kMinBaselineSamples)
      estimate_baseline(base, warmup_rtts);
    if (base.warmup_complete) {
      stats.b_rem = static_cast<double>(config.batches_per_epoch - e % config.batches_per_epoch) /
                    config.batches_per_epoch;
      const Decision d = decide(fw, base, stats, cur_action, policy, ctx);
      next_action = d.action;
      next_delta = d.delta_hat_ms;
      next_sigma = d.sigma.sigma.sigma;
    } else {
      next_action = index_of(config.initial_window) * config.p_partitions;
    }
    const ActionSpec na = decode_action(next_action, config.p_partitions, n_windows);
    const int next_window = config.window_grid[static_cast<std::size_t>(na.window_index)];
    std::optional<Buffer> pending;
    double pending_ready = 0.0, next_build = 0.0;
    std::uint64_t next_carried = 0, next_fetched = 0;
    if (e < nb) {
      auto [b, cost] = build(&active, e, next_window, na.alloc_template, next_carried, next_fetched);
      pending = std::move(b);
      next_build = cost;
      pending_ready = std::max(swap_t, sample_ready(std::min(nb, e + next_window) - 1)) + cost;
    }

    // Run the window against the immutable active buffer.
    const std::uint64_t version = active.version;
    std::vector<std::uint64_t> w_req(uo, 0), w_hit(uo, 0);
    double stall_sum = 0.0;
    for (int b = s; b < e; ++b) {
      if (active.version != version) throw InvariantError("active buffer changed inside a window");
      std::vector<std::uint64_t> miss(uo, 0);
      std::uint64_t req = 0, hit = 0;
      for (const Request& r : trace.batches[static_cast<std::size_t>(b)]) {
        ++req;
        ++w_req[r.owner];
        if (active.contains(r.node)) {
          ++hit;
          ++w_hit[r.owner];
        } else {
          ++miss[r.owner];
        }
      }
      const auto d = delays_at(b);
      std::vector<double> rtts(uo, 0.0);
      double rtt = 0.0;
      for (std::size_t o = 0; o < uo; ++o)
        if (miss[o]) {
          rtts[o] = noisy(rpc_time(static_cast<double>(miss[o]) * params.f_bytes, d[o], params));
          rtt = std::max(rtt, rtts[o]);
        }
      const auto ub = static_cast<std::size_t>(b);
      double start = std::max({b > 0 ? resolve_end[ub - 1] : 0.0, swap_t, sample_ready(b)});
      if (b >= config.queue_depth) start = std::max(start, train_start[ub - static_cast<std::size_t>(config.queue_depth)]);
      resolve_end[ub] = start + rtt;
      const double gpu_ready = b == s ? swap_t : train_end[ub - 1];
      const double stall = std::max(0.0, resolve_end[ub] - gpu_ready);
      train_start[ub] = std::max(gpu_ready, resolve_end[ub]);
      train_end[ub] = train_start[ub] + params.t_base;
      stall_sum += stall;

      // Resolved batches waiting for the trainer when this one lands.
      int waiting = 1;
      for (int j = std::max(0, b - config.queue_depth); j < b; ++j)
        if (train_start[static_cast<std::size_t>(j)] > resolve_end[ub]) ++waiting;
      if (waiting > config.queue_depth) throw InvariantError("resolver queue exceeded its depth");
      log.max_queue = std::max(log.max_queue, waiting);

      for (std::size_t o = 0; o < uo; ++o)
        if (miss[o]) {
          fw.push({static_cast<int>(o), rtts[o], resolve_end[ub]});
          if (!base.warmup_complete && b < config.warmup_batches) warmup_rtts.push_back(rtts[o]);
        }
      log.batches.push_back({b, req, hit, rtt, stall, train_start[ub], train_end[ub], active.window});
      log.requests += req;
      log.hits += hit;
    }
    for (std::size_t o = 0; o < uo; ++o) {
      log.owner_requests[o] += w_req[o];
      log.owner_hits[o] += w_hit[o];
    }

    // Statistics the next decision sees.
    const double wall = train_end[static_cast<std::size_t>(e - 1)] - swap_t + swap_wait;
    const int n = e - s;
    std::uint64_t tot_req = 0, tot_hit = 0;
    for (std::size_t o = 0; o < uo; ++o) {
      stats.owner_hits[o] = w_req[o] ? static_cast<double>(w_hit[o]) / static_cast<double>(w_req[o]) : 0.0;
      tot_req += w_req[o];
      tot_hit += w_hit[o];
    }
    stats.global_hit = tot_req ? static_cast<double>(tot_hit) / static_cast<double>(tot_req) : 0.0;
    stats.t_step_ratio = wall / n / params.t_base;
    stats.f_rebuild = wall > 0.0 ? swap_wait / wall : 0.0;
    stats.f_miss = wall > 0.0 ? stall_sum / wall : 0.0;
    // Against the cost model's reference window at the current estimate.
    stats.e_ratio = wall / n / step_time(16, CongestionVector{decided_sigma}, params);

    if (!pending) break;
    const double ready = train_end[static_cast<std::size_t>(e - 1)];
    swap_wait = std::max(0.0, pending_ready - ready);
    swap_t = std::max(ready, pending_ready);
    // The swap is the only place the active buffer changes.
    pending->version = active.version + 1;
    active = std::move(*pending);
    cur_action = next_action;
    decided_delta = next_delta;
    decided_sigma = next_sigma;
    carried = next_carried;
    fetched = next_fetched;
    build_s = next_build;
    s = e;
  }

  log.total_time_s = train_end.back();
  for (const auto& b : log.batches) log.stall_time_s += b.stall_s;
  log.energy_j = params.p_bar * log.total_time_s;
  log.p_bar = params.p_bar;
  log.baseline = base;
  return log;
}

std::string RunLog::jsonl() const {
  std::ostringstream os;
  for (const auto& b : boundaries) {
    os << nlohmann::json{{"type", "boundary"}, {"index", b.index},       {"batch", b.batch},
                         {"window", b.window}, {"alloc_template", b.alloc_template},
                         {"action", b.action}, {"t", b.t},               {"delta_hat_ms", b.delta_hat_ms},
                         {"sigma", b.sigma},   {"carried", b.carried},   {"fetched", b.fetched},
                         {"build_s", b.build_s}, {"swap_wait_s", b.swap_wait_s}}
              .dump()
       << '\n';
  }
  for (const auto& b : batches) {
    os << nlohmann::json{{"type", "batch"},     {"batch", b.batch},   {"requests", b.requests}, {"hits", b.hits},
                         {"rtt_s", b.rtt_s},    {"stall_s", b.stall_s}, {"start_s", b.start_s}, {"end_s", b.end_s},
                         {"window", b.window}}
              .dump()
       << '\n';
  }
  os << nlohmann::json{{"type", "summary"},        {"requests", requests},         {"hits", hits},
                       {"hit_rate", hit_rate()},    {"owner_requests", owner_requests}, {"owner_hits", owner_hits},
                       {"total_time_s", total_time_s}, {"stall_time_s", stall_time_s}, {"energy_j", energy_j},
                       {"max_queue", max_queue},     {"p_bar", p_bar},          {"baseline_s", baseline.t_base_fetch},
                       {"warmup_complete", baseline.warmup_complete}}
            .dump()
     << '\n';
  return os.str();
}

std::vector<EpochRow> RunLog::epochs(int batches_per_epoch) const {
  if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch must be >= 1");
  std::vector<EpochRow> rows;
  double prev_end = 0.0;
  std::size_t i = 0;
  while (i < batches.size()) {
    const int epoch = batches[i].batch / batches_per_epoch;
    std::uint64_t req = 0, hit = 0;
    double time = 0.0;
    std::map<int, int> windows;
    int n = 0;
    for (; i < batches.size() && batches[i].batch / batches_per_epoch == epoch; ++i, ++n) {
      req += batches[i].requests;
      hit += batches[i].hits;
      time += batches[i].end_s - prev_end;
      prev_end = batches[i].end_s;
      ++windows[batches[i].window];
    }
    const auto top = std::max_element(windows.begin(), windows.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
    rows.push_back({epoch, n, p_bar * time, req ? static_cast<double>(hit) / static_cast<double>(req) : 0.0,
                    top->first});
  }
  return rows;
}

std::string RunLog::epoch_csv(int batches_per_epoch) const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,batches,energy_j,hit_rate,window\n";
  for (const auto& r : epochs(batches_per_epoch))
    os << r.epoch << ',' << r.batches << ',' << r.energy_j << ',' << r.hit_rate << ',' << r.window << '\n';
  return os.str();
}

RunLog parse_run_log(std::istream& in) {
  RunLog log;
  std::string line;
  std::size_t lineno = 0;
  bool summary = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "run log line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
      throw ValidationError(where + ": not a run-log record");
    if (summary) throw ValidationError(where + ": record after the summary");
    const auto type = j["type"].get<std::string>();
    try {
      if (type == "batch") {
        BatchRecord b{j.at("batch").get<int>(),    j.at("requests").get<std::uint64_t>(),
                      j.at("hits").get<std::uint64_t>(), j.at("rtt_s").get<double>(),
                      j.at("stall_s").get<double>(), j.at("start_s").get<double>(),
                      j.at("end_s").get<double>(),   j.at("window").get<int>()};
        if (!log.batches.empty() && b.batch != log.batches.back().batch + 1)
          throw ValidationError(where + ": batches out of order");
        log.batches.push_back(b);
      } else if (type == "summary") {
        log.requests = j.at("requests").get<std::uint64_t>();
        log.hits = j.at("hits").get<std::uint64_t>();
        log.owner_requests = j.at("owner_requests").get<std::vector<std::uint64_t>>();
        log.owner_hits = j.at("owner_hits").get<std::vector<std::uint64_t>>();
        log.total_time_s = j.at("total_time_s").get<double>();
        log.stall_time_s = j.at("stall_time_s").get<double>();
        log.energy_j = j.at("energy_j").get<double>();
        log.max_queue = j.at("max_queue").get<int>();
        log.p_bar = j.at("p_bar").get<double>();
        log.baseline.t_base_fetch = j.at("baseline_s").get<double>();
        log.baseline.warmup_complete = j.at("warmup_complete").get<bool>();
        summary = true;
      } else if (type != "boundary") {
        throw ValidationError(where + ": unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  if (!summary) throw ValidationError("run log has no summary record");
  if (log.batches.empty()) throw ValidationError("run log has no batch records");
  return log;
}

std::vector<DetectionRow> replay_detection(std::span<const FetchSample> samples, int owners,
                                           const CalibrationParams& p, std::size_t warmup, std::size_t every) {
  if (owners < 1) throw ValidationError("owners must be >= 1");
  if (every < 1) throw ValidationError("report interval must be >= 1");
  if (samples.size() < warmup || warmup < kMinBaselineSamples)
    throw ValidationError("detector replay needs at least " + std::to_string(std::max(warmup, kMinBaselineSamples)) +
                          " warm-up samples");
  FetchWindow fw;
  std::vector<double> warm;
  BaselineEstimate base;
  std::vector<DetectionRow> rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.owner >= owners) throw ValidationError("sample owner out of range at line " + std::to_string(i + 1));
    fw.push(s);
    if (i < warmup) {
      warm.push_back(s.rtt_s);
      if (i + 1 == warmup) estimate_baseline(base, warm);
      continue;
    }
    if ((i + 1 - warmup) % every == 0) {
      const auto sig = estimate_sigma_per_owner(fw, base, p, owners);
      rows.push_back({i + 1, s.t, detect_congestion(fw, base, p),
                      *std::max_element(sig.delta_ms.begin(), sig.delta_ms.end()), sig.sigma.sigma, sig.stale});
    }
  }
  return rows;
}

}  // namespace wincache
