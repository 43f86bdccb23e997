#pragma once

// Episodic simulator over the calibrated cost model. One decision per cache
// rebuild boundary picks (window, allocation template); the environment then
// advances that many batches of virtual time under a congestion schedule.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wincache/cost_model.hpp"
#include "wincache/rng.hpp"

namespace wincache {

enum class Archetype {
  none,
  single_link_slow,  // delay ramps up over the first 20% of the congested span
  single_link_fast,  // step onset
  two_link_symmetric,
  two_link_asymmetric,  // full delay on one link, a quarter of it on the other
  oscillating,          // two links, on for the first half of every period
};

inline constexpr int kArchetypeCount = 6;
inline constexpr std::array<double, 3> kSeverityDelayMs{4.0, 12.0, 20.0};

std::string archetype_name(Archetype a);
Archetype archetype_from_name(const std::string& name);

struct CongestionProfile {
  Archetype archetype = Archetype::none;
  double delta_ms = 0.0;
  int onset_batch = 0;
  int duration_batches = 1;
  std::vector<int> affected_owners;
  int oscillation_period_batches = 128;
  double noise_scale = 0.03;

  void validate(int owners) const;
  // Per-owner one-way delay in ms during `batch`.
  void delays_at(int batch, std::span<double> out) const;
};

// Uniform archetype and severity; onset in the first half of the episode,
// duration a uniform fraction in [1/4, 3/4] of the batches left after onset.
CongestionProfile sample_profile(std::uint64_t seed, int owners, int total_batches);

// Whole-episode profile (onset 0) for evaluation scenarios.
CongestionProfile fixed_profile(Archetype a, double delta_ms, int owners, int total_batches,
                                std::vector<int> affected = {});

// Named evaluation scenarios, each a whole-episode fixed profile:
// clean, moderate (two links, 12 ms), oscillating (20 ms square wave) and
// asymmetric (two links, 20 ms and a quarter of that).
CongestionProfile scenario_profile(const std::string& name, int owners, int total_batches);
std::vector<std::string> scenario_names();

struct EpisodeConfig {
  int p_partitions = 4;
  int epochs = 30;
  int batches_per_epoch = 128;
  std::vector<int> window_grid{kWindowGrid.begin(), kWindowGrid.end()};
  double lambda_stability = 0.02;
  int reference_window = 16;
  double kappa = 0.5;
  double noise_scale = 0.03;
  std::uint64_t seed = 0;
  CalibrationParams params;
  // When set, every episode uses this schedule instead of sampling one.
  std::optional<CongestionProfile> profile;

  int owners() const { return p_partitions - 1; }
  int total_batches() const { return epochs * batches_per_epoch; }
  int num_actions() const { return static_cast<int>(window_grid.size()) * p_partitions; }
  int state_dim() const { return 3 * p_partitions + 11; }
  void validate() const;
};

struct ActionSpec {
  int window_index = 0;
  int alloc_template = 0;  // 0 uniform, o >= 1 biases toward remote owner o-1
};

ActionSpec decode_action(int id, int p_partitions, int n_windows = 8);
int encode_action(const ActionSpec& a, int p_partitions, int n_windows = 8);

// Capacity fractions per remote owner for an allocation template.
std::vector<double> allocation_fractions(int alloc_template, int owners);

// Segment offsets inside the flat state vector.
struct StateLayout {
  int owners;
  int sigma() const { return 0; }
  int hits() const { return owners; }          // owners per-owner rates, then global
  int load() const { return 2 * owners + 1; }  // t_step/t_base, f_rebuild, f_miss, e/e_ref, b_rem
  int window_onehot() const { return 2 * owners + 6; }
  int prev_alloc() const { return 2 * owners + 14; }
  int dim() const { return 3 * owners + 14; }
};

struct RawSignals {
  std::vector<double> sigma_est;
  std::vector<double> owner_hits;
  double global_hit = 0.0;
  double t_step_ratio = 1.0;
  double f_rebuild = 0.0;
  double f_miss = 0.0;
  double e_ratio = 1.0;
  double b_rem = 1.0;
  int prev_window_index = 4;
  std::vector<double> prev_alloc;
};

// Clamps each signal to its declared range and lays it out flat.
std::vector<double> encode_state(const RawSignals& s, int p_partitions, int n_windows = 8);

struct StepInfo {
  int window = 0;
  int alloc_template = 0;
  int batches = 0;
  double energy = 0.0;           // noiseless joules for the batches just run
  double energy_observed = 0.0;  // with measurement noise
  double energy_ref = 0.0;       // reference policy over the same batches
  double penalty = 0.0;
  double mean_hit = 0.0;
  double delta_hat_ms = 0.0;
};

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  double duration = 1.0;  // batches run; the trainer discounts per batch
  bool done = false;
  StepInfo info;
};

class CacheEnv {
 public:
  explicit CacheEnv(EpisodeConfig config);

  // Seeds the episode (profile and noise streams) and returns the initial state.
  std::vector<double> reset(std::uint64_t episode_seed);
  std::vector<double> reset() { return reset(config_.seed); }
  StepResult step(int action_id);

  bool done() const { return batch_ >= config_.total_batches(); }
  int decisions() const { return decisions_; }
  int batch() const { return batch_; }
  double episode_energy() const { return energy_; }
  const CongestionProfile& profile() const { return profile_; }
  const EpisodeConfig& config() const { return config_; }
  // Congestion estimate the last observation implies (max over owners).
  double delta_hat_ms() const { return delta_hat_; }

  // Noiseless per-batch time for an action under given per-owner delays.
  double batch_time(int action_id, std::span<const double> delays_ms) const;

 private:
  struct ActionModel {
    double rebuild_per_batch;
    std::vector<double> owner_hits;
    std::vector<double> miss_bytes;
    double global_hit;
  };
  ActionModel model_for(int action_id) const;
  double miss_time(const ActionModel& m, std::span<const double> delays, double* sigma_max) const;
  std::vector<double> observe(const ActionModel& m, int action_id, double t_mean, double miss_mean,
                              double e_obs, double e_ref_mean);

  EpisodeConfig config_;
  std::vector<ActionModel> models_;
  int ref_action_ = 0;
  CongestionProfile profile_;
  std::vector<double> delays_;  // total_batches x owners
  std::vector<double> sigmas_;
  std::vector<double> ref_energy_;  // per batch, noiseless
  CounterRng noise_;
  int batch_ = 0;
  int decisions_ = 0;
  int prev_action_ = 0;
  double energy_ = 0.0;
  double delta_hat_ = 0.0;
  bool started_ = false;
};

struct Observation {
  std::span<const double> state;
  double delta_hat_ms = 0.0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int act(const Observation& obs) = 0;
  virtual std::string name() const = 0;
  virtual void reset(std::uint64_t /*episode_seed*/) {}
};

struct EvalSummary {
  int episodes = 0;
  double mean_energy = 0.0;
  double stdev_energy = 0.0;
  std::vector<double> episode_energy;
  std::vector<std::uint64_t> action_histogram;
  std::vector<std::uint64_t> window_histogram;
  std::uint64_t decisions = 0;

  double window_share(std::span<const int> windows, std::span<const int> grid) const;
};

struct DecisionRecord {
  int episode;
  int decision;
  int batch;
  int action;
  int window;
  int alloc_template;
  double reward;
  double energy;
  double delta_hat_ms;
};

// Runs n episodes with seeds derived from config.seed; deterministic.
EvalSummary evaluate_policy(Policy& policy, const EpisodeConfig& config, int n_episodes,
                            std::vector<DecisionRecord>* log = nullptr);

std::uint64_t episode_seed(std::uint64_t base, int episode);

void to_json(nlohmann::json& j, const CongestionProfile& p);
void from_json(const nlohmann::json& j, CongestionProfile& p);
void to_json(nlohmann::json& j, const EpisodeConfig& c);
void from_json(const nlohmann::json& j, EpisodeConfig& c);

}  // namespace wincache
