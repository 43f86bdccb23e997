#include "wincache/trace_emulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"
#include "wincache/rng.hpp"

namespace wincache {

void WorkloadSpec::validate() const {
  if (p_partitions < 2) throw ValidationError("p_partitions must be >= 2");
  if (p_partitions - 1 > 65535) throw ValidationError("too many owners");
  if (num_nodes < static_cast<std::uint64_t>(owners()) || num_nodes > 0xFFFFFFFFULL)
    throw ValidationError("num_nodes must cover every owner and fit 32 bits");
  if (!(zipf_s >= 0.0)) throw ValidationError("zipf_s must be >= 0");
  if (!(drift >= 0.0) || !std::isfinite(drift)) throw ValidationError("drift must be finite and >= 0");
  if (batch_size <= 0 || num_batches <= 0) throw ValidationError("batch_size and num_batches must be positive");
  if (owner_demand.size() != static_cast<std::size_t>(owners()))
    throw ValidationError("owner_demand must have p_partitions - 1 entries");
  double sum = 0.0;
  for (double d : owner_demand) {
    if (!(d >= 0.0)) throw ValidationError("owner_demand entries must be >= 0");
    sum += d;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("owner_demand must sum to 1");
}

std::size_t Trace::total_requests() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

CacheConfig CacheConfig::uniform(int owners, std::int64_t capacity) {
  return {capacity, std::vector<double>(static_cast<std::size_t>(owners), 1.0 / owners)};
}

CacheConfig CacheConfig::biased(int owners, std::int64_t capacity, int owner) {
  std::vector<double> w(static_cast<std::size_t>(owners), owners > 1 ? 0.4 / (owners - 1) : 1.0);
  w[static_cast<std::size_t>(owner)] = owners > 1 ? 0.6 : 1.0;
  return {capacity, w};
}

void CacheConfig::validate(int owners) const {
  if (capacity < 0) throw ValidationError("cache capacity must be >= 0");
  if (owner_weights.size() != static_cast<std::size_t>(owners))
    throw ValidationError("owner_weights must have one entry per remote owner");
  double sum = 0.0;
  for (double c : owner_weights) {
    if (!(c >= 0.0)) throw ValidationError("owner_weights must be >= 0");
    sum += c;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("owner_weights must sum to 1");
}

std::vector<std::int64_t> owner_budgets(std::int64_t capacity, std::span<const double> weights) {
  std::vector<std::int64_t> budget(weights.size());
  std::int64_t used = 0;
  for (std::size_t o = 0; o < weights.size(); ++o) {
    budget[o] = static_cast<std::int64_t>(std::floor(weights[o] * static_cast<double>(capacity) + 1e-9));
    used += budget[o];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  for (std::int64_t r = capacity - used, i = 0; r > 0; --r, ++i) ++budget[order[static_cast<std::size_t>(i) % order.size()]];
  return budget;
}

double WindowStats::owner_hit_rate(int o) const {
  const auto i = static_cast<std::size_t>(o);
  return owner_requests[i] ? static_cast<double>(owner_hits[i]) / static_cast<double>(owner_requests[i]) : 0.0;
}

Trace generate_trace(const WorkloadSpec& spec) {
  spec.validate();
  const int owners = spec.owners();
  Trace t;
  t.owners = owners;
  t.num_nodes = spec.num_nodes;
  const std::uint64_t per = spec.num_nodes / static_cast<std::uint64_t>(owners);
  const std::uint64_t extra = spec.num_nodes % static_cast<std::uint64_t>(owners);
  std::uint64_t base = 0;
  std::vector<std::vector<double>> cdf(static_cast<std::size_t>(owners));
  for (int o = 0; o < owners; ++o) {
    const std::uint64_t size = per + (static_cast<std::uint64_t>(o) < extra ? 1 : 0);
    t.owner_base.push_back(base);
    t.owner_size.push_back(size);
    base += size;
    auto& c = cdf[static_cast<std::size_t>(o)];
    c.resize(size);
    double acc = 0.0;
    for (std::uint64_t r = 0; r < size; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -spec.zipf_s);
      c[r] = acc;
    }
    for (double& v : c) v /= acc;
    c.back() = 1.0;
  }
  std::vector<double> demand_cdf(static_cast<std::size_t>(owners));
  std::partial_sum(spec.owner_demand.begin(), spec.owner_demand.end(), demand_cdf.begin());
  demand_cdf.back() = 1.0;

  CounterRng rng = CounterRng(spec.seed).child("workload");
  t.batches.resize(static_cast<std::size_t>(spec.num_batches));
  for (std::size_t b = 0; b < t.batches.size(); ++b) {
    auto& batch = t.batches[b];
    const auto shift = static_cast<std::uint64_t>(std::floor(spec.drift * static_cast<double>(b)));
    batch.resize(static_cast<std::size_t>(spec.batch_size));
    for (auto& req : batch) {
      const double u_owner = rng.uniform();
      const auto o = static_cast<std::size_t>(
          std::upper_bound(demand_cdf.begin(), demand_cdf.end(), u_owner) - demand_cdf.begin());
      const auto owner = std::min(o, static_cast<std::size_t>(owners - 1));
      const auto& c = cdf[owner];
      const double u_node = rng.uniform();
      const auto rank = static_cast<std::uint64_t>(std::upper_bound(c.begin(), c.end(), u_node) - c.begin());
      req.owner = static_cast<std::uint16_t>(owner);
      const std::uint64_t r = (std::min<std::uint64_t>(rank, c.size() - 1) + shift) % c.size();
      req.node = static_cast<std::uint32_t>(t.owner_base[owner] + r);
    }
  }
  return t;
}

WindowStats run_windowed_cache(const Trace& trace, int window, const CacheConfig& cache) {
  if (window < 1) throw ValidationError("window must be >= 1");
  if (trace.batches.empty()) throw ValidationError("trace is empty");
  cache.validate(trace.owners);
  const auto owners = static_cast<std::size_t>(trace.owners);
  const auto budgets = owner_budgets(cache.capacity, cache.owner_weights);

  WindowStats st;
  st.window = window;
  st.owner_requests.assign(owners, 0);
  st.owner_hits.assign(owners, 0);

  std::vector<std::uint32_t> count(trace.num_nodes, 0);
  std::vector<char> cached(trace.num_nodes, 0);
  std::uint64_t unique_total = 0, full_windows = 0, unique_partial = 0;

  const std::size_t nb = trace.batches.size();
  for (std::size_t s = 0; s < nb; s += static_cast<std::size_t>(window)) {
    const std::size_t e = std::min(nb, s + static_cast<std::size_t>(window));
    std::vector<std::uint32_t> seen;
    for (std::size_t b = s; b < e; ++b)
      for (const auto& r : trace.batches[b])
        if (count[r.node]++ == 0) seen.push_back(r.node);

    // Rank every node seen in the window: frequency descending, node ID ascending.
    std::sort(seen.begin(), seen.end(), [&](std::uint32_t a, std::uint32_t b) {
      return count[a] != count[b] ? count[a] > count[b] : a < b;
    });
    std::vector<std::int64_t> left(budgets);
    std::int64_t spare = 0;
    std::vector<std::uint32_t> overflow;
    for (std::uint32_t node : seen) {
      const std::size_t o = static_cast<std::size_t>(
          std::upper_bound(trace.owner_base.begin(), trace.owner_base.end(), node) - trace.owner_base.begin() - 1);
      if (left[o] > 0) {
        cached[node] = 1;
        --left[o];
      } else {
        overflow.push_back(node);
      }
    }
    for (std::int64_t l : left) spare += l;
    // Budget an owner could not use goes to the next most frequent nodes overall.
    for (std::size_t i = 0; i < overflow.size() && spare > 0; ++i, --spare) cached[overflow[i]] = 1;

    for (std::size_t b = s; b < e; ++b) {
      for (const auto& r : trace.batches[b]) {
        ++st.owner_requests[r.owner];
        if (cached[r.node]) ++st.owner_hits[r.owner];
      }
    }
    if (e - s == static_cast<std::size_t>(window)) {
      unique_total += seen.size();
      ++full_windows;
    } else {
      unique_partial = seen.size();
    }
    for (std::uint32_t node : seen) {
      count[node] = 0;
      cached[node] = 0;
    }
  }
  for (std::size_t o = 0; o < owners; ++o) {
    st.requests += st.owner_requests[o];
    st.hits += st.owner_hits[o];
  }
  st.mean_unique = full_windows ? static_cast<double>(unique_total) / static_cast<double>(full_windows)
                                : static_cast<double>(unique_partial);
  return st;
}

namespace {

void record(EmulationResult& r, const WindowStats& st, int owners) {
  r.hit_curve[st.window] = st.hit_rate();
  r.unique_set_sizes[st.window] = st.mean_unique;
  for (int o = 0; o < owners; ++o) r.per_owner_hits[{st.window, o}] = st.owner_hit_rate(o);
  r.stats[st.window] = st;
}

}  // namespace

EmulationResult measure_hit_curve_serial(const Trace& trace, std::span<const int> window_grid,
                                         const CacheConfig& cache) {
  EmulationResult r;
  for (int w : window_grid) record(r, run_windowed_cache(trace, w, cache), trace.owners);
  return r;
}

EmulationResult measure_hit_curve(const Trace& trace, std::span<const int> window_grid, const CacheConfig& cache) {
  if (window_grid.empty()) throw ValidationError("window grid is empty");
  for (int w : window_grid)
    if (w < 1) throw ValidationError("window must be >= 1");
  cache.validate(trace.owners);
  std::vector<WindowStats> out(window_grid.size());
  const auto n = static_cast<long>(window_grid.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = run_windowed_cache(trace, window_grid[static_cast<std::size_t>(i)], cache);
  EmulationResult r;
  for (const auto& st : out) record(r, st, trace.owners);
  return r;
}

std::vector<double> per_owner_hit_rates(const Trace& trace, int window, const CacheConfig& cache) {
  const WindowStats st = run_windowed_cache(trace, window, cache);
  std::vector<double> rates(static_cast<std::size_t>(trace.owners));
  for (int o = 0; o < trace.owners; ++o) rates[static_cast<std::size_t>(o)] = st.owner_hit_rate(o);
  return rates;
}

std::string emulation_csv(const EmulationResult& result, int owners) {
  std::ostringstream os;
  os.precision(17);
  os << "window,owner,hit_rate,unique_set\n";
  for (const auto& [w, h] : result.hit_curve) {
    const double u = result.unique_set_sizes.at(w);
    os << w << ",all," << h << ',' << u << '\n';
    for (int o = 0; o < owners; ++o) os << w << ',' << o << ',' << result.per_owner_hits.at({w, o}) << ',' << u << '\n';
  }
  return os.str();
}

void to_json(nlohmann::json& j, const WorkloadSpec& s) {
  j = nlohmann::json{{"num_nodes", s.num_nodes},       {"zipf_s", s.zipf_s},
                     {"p_partitions", s.p_partitions}, {"batch_size", s.batch_size},
                     {"num_batches", s.num_batches},   {"owner_demand", s.owner_demand},
                     {"drift", s.drift},               {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, WorkloadSpec& s) {
  try {
    s.num_nodes = j.value("num_nodes", s.num_nodes);
    s.zipf_s = j.value("zipf_s", s.zipf_s);
    s.p_partitions = j.value("p_partitions", s.p_partitions);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.num_batches = j.value("num_batches", s.num_batches);
    if (j.contains("owner_demand")) {
      j.at("owner_demand").get_to(s.owner_demand);
    } else {
      s.owner_demand.assign(static_cast<std::size_t>(s.owners()), 1.0 / s.owners());
    }
    s.drift = j.value("drift", s.drift);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed workload spec: ") + e.what());
  }
  s.validate();
}

}  // namespace wincache
