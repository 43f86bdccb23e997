#pragma once

// Exact windowed top-k cache emulation over synthetic remote-access traces.
//
// Node popularity within each remote owner follows a Zipf law, and owners are
// drawn by demand share. For every window of W consecutive batches the cache
// holds the k most frequent nodes of that window (per-owner sub-budgets), and
// every request in the window is counted against that cache. This is the
// brute-force ground truth the hit-curve fit and per-owner hit model are
// checked against.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wincache {

struct WorkloadSpec {
  std::uint64_t num_nodes = 100000;  // remote node-ID universe, split evenly across owners
  double zipf_s = 1.1;
  int p_partitions = 4;
  int batch_size = 2000;             // remote requests per batch
  int num_batches = 512;
  std::vector<double> owner_demand{1.0 / 3, 1.0 / 3, 1.0 / 3};
  // Popularity drift in ranks per batch: the hot set of each owner slides
  // through its ID block over time, giving the trace temporal locality.
  double drift = 0.0;
  std::uint64_t seed = 1;

  int owners() const { return p_partitions - 1; }
  void validate() const;
};

struct Request {
  std::uint32_t node;
  std::uint16_t owner;
};

struct Trace {
  int owners = 0;
  std::uint64_t num_nodes = 0;
  std::vector<std::uint64_t> owner_base;  // first node ID of each owner's block
  std::vector<std::uint64_t> owner_size;
  std::vector<std::vector<Request>> batches;

  std::size_t total_requests() const;
};

struct CacheConfig {
  std::int64_t capacity = 0;          // k nodes
  std::vector<double> owner_weights;  // per-owner capacity fractions, sum to 1

  static CacheConfig uniform(int owners, std::int64_t capacity);
  // 60% of capacity toward `owner`, the remaining 40% split evenly.
  static CacheConfig biased(int owners, std::int64_t capacity, int owner);
  void validate(int owners) const;
};

// Per-owner node budgets: floor(c_o * k), with the remainder handed out one
// slot at a time in descending weight order (ties to the lower owner index).
std::vector<std::int64_t> owner_budgets(std::int64_t capacity, std::span<const double> weights);

struct WindowStats {
  int window = 1;
  std::uint64_t requests = 0;
  std::uint64_t hits = 0;
  std::vector<std::uint64_t> owner_requests;
  std::vector<std::uint64_t> owner_hits;
  double mean_unique = 0.0;  // distinct nodes per full window

  double hit_rate() const { return requests ? static_cast<double>(hits) / static_cast<double>(requests) : 0.0; }
  double owner_hit_rate(int o) const;
};

struct EmulationResult {
  std::map<int, double> hit_curve;
  std::map<std::pair<int, int>, double> per_owner_hits;
  std::map<int, double> unique_set_sizes;
  std::map<int, WindowStats> stats;
};

Trace generate_trace(const WorkloadSpec& spec);

WindowStats run_windowed_cache(const Trace& trace, int window, const CacheConfig& cache);

// Grid points are independent; the parallel variant shards them over threads
// and must agree exactly with the serial one.
EmulationResult measure_hit_curve(const Trace& trace, std::span<const int> window_grid, const CacheConfig& cache);
EmulationResult measure_hit_curve_serial(const Trace& trace, std::span<const int> window_grid,
                                         const CacheConfig& cache);

std::vector<double> per_owner_hit_rates(const Trace& trace, int window, const CacheConfig& cache);

// CSV with columns window,owner,hit_rate,unique_set; owner "all" is the aggregate row.
std::string emulation_csv(const EmulationResult& result, int owners);

void to_json(nlohmann::json& j, const WorkloadSpec& s);
void from_json(const nlohmann::json& j, WorkloadSpec& s);

}  // namespace wincache
