#pragma once

// Runtime side: a fetch-latency detector, the per-boundary decision step and
// a discrete-event emulation of the sampler -> cache builder -> resolver ->
// trainer pipeline with double-buffered caches.

#include <cstdint>
#include <deque>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wincache/cost_model.hpp"
#include "wincache/sim_env.hpp"
#include "wincache/trace_emulator.hpp"

namespace wincache {

inline constexpr int kDetectorSpan = 30;     // recent samples the median looks at
inline constexpr double kRatioFloor = 1.1;   // ratios at or below this read as clean
inline constexpr double kMaxDelayMs = 20.0;  // detector clamp
inline constexpr double kBaselinePercentile = 15.0;
inline constexpr std::size_t kMinBaselineSamples = 20;

struct FetchSample {
  int owner = 0;
  double rtt_s = 0.0;
  double t = 0.0;  // virtual timestamp, seconds
};

// Bounded recency list; oldest samples fall off first.
class FetchWindow {
 public:
  explicit FetchWindow(std::size_t capacity = 256);
  // Timestamps must not go backwards.
  void push(const FetchSample& s);
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return samples_.empty(); }
  const std::deque<FetchSample>& samples() const { return samples_; }

  // Median rtt of the newest `span` samples (all of them when fewer), over
  // every owner or one owner's slice. nullopt when there is nothing to use.
  std::optional<double> recent_median(int span = kDetectorSpan) const;
  std::optional<double> recent_median(int owner, int span) const;

 private:
  std::size_t capacity_;
  std::deque<FetchSample> samples_;
};

// Nearest-rank percentile: element ceil(p/100 * n) of the sorted values (1-based).
double percentile_nearest_rank(std::vector<double> values, double p);

struct BaselineEstimate {
  double t_base_fetch = 0.0;
  bool warmup_complete = false;
};

// Sets the baseline once from warm-up rtts. Throws StateError when already
// set and ValidationError with fewer than 20 samples.
void estimate_baseline(BaselineEstimate& base, std::span<const double> warmup_rtts);
BaselineEstimate estimate_baseline(std::span<const double> warmup_rtts);

// ratio -> delay estimate in ms. beta / gamma_c has units of ms because
// gamma_c is seconds per (byte * ms), so (ratio - 1) * beta / gamma_c is the
// delay that would slow a bandwidth-bound fetch by that ratio.
double delay_from_ratio(double ratio, const CalibrationParams& p);

double detect_congestion(const FetchWindow& fw, const BaselineEstimate& base, const CalibrationParams& p);

struct SigmaEstimate {
  CongestionVector sigma;
  std::vector<double> delta_ms;
  std::vector<bool> stale;  // owner had no recent samples; sigma defaulted to 1
};

SigmaEstimate estimate_sigma_per_owner(const FetchWindow& fw, const BaselineEstimate& base, const CalibrationParams& p,
                                       int owners);

// What the controller knows about the window that just finished.
struct CacheStats {
  std::vector<double> owner_hits;
  double global_hit = 0.0;
  double t_step_ratio = 1.0;  // mean batch wall time / t_base
  double f_rebuild = 0.0;
  double f_miss = 0.0;
  double e_ratio = 1.0;
  double b_rem = 1.0;
};

struct Decision {
  int action = 0;
  int window = 16;
  int alloc_template = 0;
  std::vector<double> weights;
  double delta_hat_ms = 0.0;
  SigmaEstimate sigma;
  std::vector<double> state;
};

struct DecideContext {
  int p_partitions = 4;
  std::vector<int> window_grid{kWindowGrid.begin(), kWindowGrid.end()};
  CalibrationParams params;
};

Decision decide(const FetchWindow& fw, const BaselineEstimate& base, const CacheStats& stats, int prev_action,
                Policy& policy, const DecideContext& ctx);

struct PipelineConfig {
  int queue_depth = 4;           // resolved batches the trainer may have waiting
  std::int64_t capacity = 1000;  // cache size k in nodes
  int p_partitions = 4;
  std::vector<int> window_grid{kWindowGrid.begin(), kWindowGrid.end()};
  int initial_window = 16;    // used until the baseline exists
  int warmup_batches = 256;   // two 128-batch epochs
  int batches_per_epoch = 128;
  double sample_time_s = 0.0;  // sampler cost per batch, overlaps with training
  double rtt_noise = 0.0;      // uniform multiplicative jitter on every rtt
  std::uint64_t seed = 0;
  std::size_t fetch_window_capacity = 256;
  // Fixed per-owner capacity fractions instead of the chosen template's.
  std::vector<double> weights_override;

  void validate() const;
};

struct BoundaryRecord {
  int index;
  int batch;  // first batch of the window this decision opened
  int window;
  int alloc_template;
  int action;
  double t;  // virtual time of the swap
  double delta_hat_ms;
  std::vector<double> sigma;
  std::uint64_t carried;  // hot nodes reused from the previous buffer
  std::uint64_t fetched;
  double build_s;
  double swap_wait_s;  // trainer idle waiting for the pending buffer
};

struct BatchRecord {
  int batch;
  std::uint64_t requests;
  std::uint64_t hits;
  double rtt_s;    // slowest owner fetch for the misses, 0 if none
  double stall_s;  // resolve completion past the GPU-ready time
  double start_s;
  double end_s;
  int window;
};

struct EpochRow {
  int epoch;
  int batches;
  double energy_j;
  double hit_rate;
  int window;  // most used in the epoch, smallest on ties
};

struct RunLog {
  std::vector<BoundaryRecord> boundaries;
  std::vector<BatchRecord> batches;
  std::uint64_t requests = 0;
  std::uint64_t hits = 0;
  std::vector<std::uint64_t> owner_requests;
  std::vector<std::uint64_t> owner_hits;
  double total_time_s = 0.0;
  double stall_time_s = 0.0;
  double energy_j = 0.0;
  int max_queue = 0;
  double p_bar = 0.0;
  BaselineEstimate baseline;

  double hit_rate() const { return requests ? static_cast<double>(hits) / static_cast<double>(requests) : 0.0; }
  std::string jsonl() const;
  // Per-epoch energy, hit rate and the most used window.
  std::vector<EpochRow> epochs(int batches_per_epoch) const;
  std::string epoch_csv(int batches_per_epoch) const;
};

// Reads back the batch records and summary of jsonl(). Throws ValidationError
// on lines that are not run-log records.
RunLog parse_run_log(std::istream& in);

// Replays `trace` through the pipeline under the congestion schedule
// `profile` (batch-indexed), asking `policy` for a window at every boundary.
RunLog run_pipeline(const Trace& trace, Policy& policy, const PipelineConfig& config, const CalibrationParams& params,
                    const CongestionProfile& profile);

// Offline detector replay: the first `warmup` samples set the baseline, then
// one row per `every` further samples.
struct DetectionRow {
  std::size_t samples;
  double t;
  double delta_hat_ms;        // pooled over all owners
  double worst_delta_ms;      // largest per-owner estimate, what decide() acts on
  std::vector<double> sigma;
  std::vector<bool> stale;
};

std::vector<DetectionRow> replay_detection(std::span<const FetchSample> samples, int owners,
                                           const CalibrationParams& p, std::size_t warmup = 256,
                                           std::size_t every = 30);

}  // namespace wincache
