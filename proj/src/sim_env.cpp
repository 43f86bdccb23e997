#include "wincache/sim_env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"

namespace wincache {

namespace {

constexpr std::array<const char*, kArchetypeCount> kArchetypeNames{
    "none", "single_link_slow", "single_link_fast", "two_link_symmetric", "two_link_asymmetric", "oscillating"};

constexpr double kSigmaCap = 8.0;
constexpr double kLoadCap = 16.0;
constexpr int kMedianSpan = 30;

int affected_count(Archetype a) {
  switch (a) {
    case Archetype::none:
      return 0;
    case Archetype::single_link_slow:
    case Archetype::single_link_fast:
      return 1;
    default:
      return 2;
  }
}

double noisy(double v, double scale, CounterRng& rng) {
  if (scale == 0.0) return v;
  return v * (1.0 + scale * (2.0 * rng.uniform() - 1.0));
}

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string archetype_name(Archetype a) { return kArchetypeNames.at(static_cast<std::size_t>(a)); }

Archetype archetype_from_name(const std::string& name) {
  for (int i = 0; i < kArchetypeCount; ++i)
    if (name == kArchetypeNames[static_cast<std::size_t>(i)]) return static_cast<Archetype>(i);
  throw ValidationError("unknown congestion archetype '" + name + "'");
}

void CongestionProfile::validate(int owners) const {
  if (onset_batch < 0) throw ValidationError("profile onset_batch must be >= 0");
  if (duration_batches <= 0) throw ValidationError("profile duration_batches must be > 0");
  if (!(delta_ms >= 0.0) || !std::isfinite(delta_ms)) throw ValidationError("profile delta_ms must be >= 0");
  if (!(noise_scale >= 0.0) || noise_scale >= 1.0) throw ValidationError("profile noise_scale must be in [0, 1)");
  if (oscillation_period_batches < 2) throw ValidationError("oscillation period must be >= 2 batches");
  if (archetype != Archetype::none && affected_owners.empty())
    throw ValidationError("congested profile needs at least one affected owner");
  std::set<int> seen;
  for (int o : affected_owners) {
    if (o < 0 || o >= owners) throw ValidationError("affected owner index out of range");
    if (!seen.insert(o).second) throw ValidationError("affected owners must be distinct");
  }
}

void CongestionProfile::delays_at(int batch, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  if (archetype == Archetype::none || affected_owners.empty()) return;
  if (batch < onset_batch || batch >= onset_batch + duration_batches) return;
  const auto at = [&](std::size_t i) -> double& { return out[static_cast<std::size_t>(affected_owners[i])]; };
  switch (archetype) {
    case Archetype::single_link_slow: {
      const double ramp = std::max(1.0, 0.2 * duration_batches);
      at(0) = delta_ms * std::min(1.0, (batch - onset_batch + 1) / ramp);
      break;
    }
    case Archetype::single_link_fast:
      at(0) = delta_ms;
      break;
    case Archetype::two_link_symmetric:
      for (std::size_t i = 0; i < affected_owners.size(); ++i) at(i) = delta_ms;
      break;
    case Archetype::two_link_asymmetric:
      at(0) = delta_ms;
      for (std::size_t i = 1; i < affected_owners.size(); ++i) at(i) = 0.25 * delta_ms;
      break;
    case Archetype::oscillating:
      if (batch % oscillation_period_batches < oscillation_period_batches / 2)
        for (std::size_t i = 0; i < affected_owners.size(); ++i) at(i) = delta_ms;
      break;
    case Archetype::none:
      break;
  }
}

CongestionProfile sample_profile(std::uint64_t seed, int owners, int total_batches) {
  if (owners < 1 || total_batches < 1) throw ValidationError("sample_profile needs owners >= 1 and batches >= 1");
  CounterRng rng = CounterRng(seed).child("profile");
  CongestionProfile p;
  p.archetype = static_cast<Archetype>(rng.below(kArchetypeCount));
  const double delta = kSeverityDelayMs[rng.below(kSeverityDelayMs.size())];
  p.onset_batch = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, total_batches / 2))));
  const int remaining = total_batches - p.onset_batch;
  const int lo = std::max(1, (remaining + 3) / 4);
  const int hi = std::max(lo, (3 * remaining) / 4);
  p.duration_batches = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  const int k = std::min(affected_count(p.archetype), owners);
  std::vector<int> pool(static_cast<std::size_t>(owners));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(owners - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    p.affected_owners.push_back(pool[static_cast<std::size_t>(i)]);
  }
  p.delta_ms = p.archetype == Archetype::none ? 0.0 : delta;
  return p;
}

CongestionProfile fixed_profile(Archetype a, double delta_ms, int owners, int total_batches,
                                std::vector<int> affected) {
  CongestionProfile p;
  p.archetype = a;
  p.delta_ms = a == Archetype::none ? 0.0 : delta_ms;
  p.onset_batch = 0;
  p.duration_batches = total_batches;
  if (affected.empty())
    for (int i = 0; i < std::min(affected_count(a), owners); ++i) affected.push_back(i);
  p.affected_owners = a == Archetype::none ? std::vector<int>{} : std::move(affected);
  p.validate(owners);
  return p;
}

std::vector<std::string> scenario_names() { return {"clean", "moderate", "oscillating", "asymmetric"}; }

CongestionProfile scenario_profile(const std::string& name, int owners, int total_batches) {
  if (name == "clean") return fixed_profile(Archetype::none, 0.0, owners, total_batches);
  if (name == "moderate") return fixed_profile(Archetype::two_link_symmetric, 12.0, owners, total_batches);
  if (name == "oscillating") return fixed_profile(Archetype::oscillating, 20.0, owners, total_batches);
  if (name == "asymmetric") return fixed_profile(Archetype::two_link_asymmetric, 20.0, owners, total_batches);
  throw ValidationError("unknown scenario '" + name + "' (clean, moderate, oscillating, asymmetric)");
}

void EpisodeConfig::validate() const {
  if (p_partitions < 2) throw ValidationError("p_partitions must be >= 2");
  if (epochs < 1 || batches_per_epoch < 1) throw ValidationError("epochs and batches_per_epoch must be >= 1");
  if (window_grid.size() != 8) throw ValidationError("window_grid must hold 8 windows");
  for (std::size_t i = 0; i < window_grid.size(); ++i) {
    if (window_grid[i] < 1) throw ValidationError("window_grid entries must be >= 1");
    if (i && window_grid[i] <= window_grid[i - 1]) throw ValidationError("window_grid must be increasing");
  }
  if (std::find(window_grid.begin(), window_grid.end(), reference_window) == window_grid.end())
    throw ValidationError("reference_window must be on the window grid");
  if (!(lambda_stability >= 0.0)) throw ValidationError("lambda_stability must be >= 0");
  if (!(kappa >= 0.0)) throw ValidationError("kappa must be >= 0");
  if (!(noise_scale >= 0.0) || noise_scale >= 1.0) throw ValidationError("noise_scale must be in [0, 1)");
  params.validate();
  if (static_cast<int>(params.owners()) != owners())
    throw ValidationError("params.t_miss_base must have p_partitions - 1 entries");
  if (profile) profile->validate(owners());
}

ActionSpec decode_action(int id, int p_partitions, int n_windows) {
  if (id < 0 || id >= n_windows * p_partitions)
    throw ValidationError("action id " + std::to_string(id) + " out of range");
  return {id / p_partitions, id % p_partitions};
}

int encode_action(const ActionSpec& a, int p_partitions, int n_windows) {
  if (a.window_index < 0 || a.window_index >= n_windows || a.alloc_template < 0 || a.alloc_template >= p_partitions)
    throw ValidationError("action spec out of range");
  return a.window_index * p_partitions + a.alloc_template;
}

std::vector<double> allocation_fractions(int alloc_template, int owners) {
  if (alloc_template < 0 || alloc_template > owners) throw ValidationError("allocation template out of range");
  if (alloc_template == 0 || owners == 1) return std::vector<double>(static_cast<std::size_t>(owners), 1.0 / owners);
  std::vector<double> f(static_cast<std::size_t>(owners), 0.4 / (owners - 1));
  f[static_cast<std::size_t>(alloc_template - 1)] = 0.6;
  return f;
}

std::vector<double> encode_state(const RawSignals& s, int p_partitions, int n_windows) {
  const int owners = p_partitions - 1;
  const StateLayout L{owners};
  if (n_windows != 8) throw ValidationError("state layout expects 8 windows");
  if (static_cast<int>(s.sigma_est.size()) != owners || static_cast<int>(s.owner_hits.size()) != owners ||
      static_cast<int>(s.prev_alloc.size()) != owners)
    throw ValidationError("raw signal lengths must equal the owner count");
  if (s.prev_window_index < 0 || s.prev_window_index >= n_windows) throw ValidationError("prev window out of range");
  std::vector<double> x(static_cast<std::size_t>(L.dim()), 0.0);
  auto put = [&](int i, double v) { x[static_cast<std::size_t>(i)] = v; };
  for (int o = 0; o < owners; ++o) {
    const auto so = static_cast<std::size_t>(o);
    put(L.sigma() + o, std::clamp(s.sigma_est[so], 1.0, kSigmaCap));
    put(L.hits() + o, std::clamp(s.owner_hits[so], 0.0, 1.0));
    put(L.prev_alloc() + o, std::clamp(s.prev_alloc[so], 0.0, 1.0));
  }
  put(L.hits() + owners, std::clamp(s.global_hit, 0.0, 1.0));
  put(L.load() + 0, std::clamp(s.t_step_ratio, 0.0, kLoadCap));
  put(L.load() + 1, std::clamp(s.f_rebuild, 0.0, 1.0));
  put(L.load() + 2, std::clamp(s.f_miss, 0.0, 1.0));
  put(L.load() + 3, std::clamp(s.e_ratio, 0.0, kLoadCap));
  put(L.load() + 4, std::clamp(s.b_rem, 0.0, 1.0));
  put(L.window_onehot() + s.prev_window_index, 1.0);
  return x;
}

CacheEnv::CacheEnv(EpisodeConfig config) : config_(std::move(config)) {
  config_.validate();
  for (int a = 0; a < config_.num_actions(); ++a) models_.push_back(model_for(a));
  const auto ref_idx = std::find(config_.window_grid.begin(), config_.window_grid.end(), config_.reference_window) -
                       config_.window_grid.begin();
  ref_action_ = encode_action({static_cast<int>(ref_idx), 0}, config_.p_partitions);
}

CacheEnv::ActionModel CacheEnv::model_for(int action_id) const {
  const auto& p = config_.params;
  const ActionSpec spec = decode_action(action_id, config_.p_partitions);
  const auto w = static_cast<double>(config_.window_grid[static_cast<std::size_t>(spec.window_index)]);
  const int owners = config_.owners();
  const double demand = 1.0 / owners;
  const double h = hit_rate(w, p);
  const auto frac = allocation_fractions(spec.alloc_template, owners);
  ActionModel m;
  m.rebuild_per_batch = p.alpha_overlap * rebuild_time(w, p) / w;
  m.global_hit = 0.0;
  for (int o = 0; o < owners; ++o) {
    const double ho =
        std::clamp(h * std::pow(frac[static_cast<std::size_t>(o)] / demand, config_.kappa), 0.0, p.h_max);
    m.owner_hits.push_back(ho);
    m.miss_bytes.push_back(p.r_remote * demand * (1.0 - ho) * p.f_bytes);
    m.global_hit += demand * ho;
  }
  return m;
}

double CacheEnv::miss_time(const ActionModel& m, std::span<const double> delays, double* sigma_max) const {
  double worst = 0.0;
  double smax = 1.0;
  for (std::size_t o = 0; o < m.miss_bytes.size(); ++o) {
    if (m.miss_bytes[o] > 0.0) worst = std::max(worst, rpc_time(m.miss_bytes[o], delays[o], config_.params));
    if (sigma_max) smax = std::max(smax, sigma_of_delta(delays[o], config_.params));
  }
  if (sigma_max) *sigma_max = smax;
  return worst;
}

double CacheEnv::batch_time(int action_id, std::span<const double> delays_ms) const {
  const auto& m = models_.at(static_cast<std::size_t>(action_id));
  double smax = 1.0;
  const double miss = miss_time(m, delays_ms, &smax);
  const auto& p = config_.params;
  return p.t_base + m.rebuild_per_batch + miss + allreduce_penalty(CongestionVector{{smax}}, p);
}

std::vector<double> CacheEnv::reset(std::uint64_t episode_seed) {
  const int owners = config_.owners();
  const int total = config_.total_batches();
  profile_ = config_.profile ? *config_.profile : sample_profile(episode_seed, owners, total);
  profile_.noise_scale = config_.noise_scale;
  noise_ = CounterRng(episode_seed).child("noise");
  delays_.assign(static_cast<std::size_t>(total * owners), 0.0);
  sigmas_.assign(delays_.size(), 1.0);
  ref_energy_.assign(static_cast<std::size_t>(total), 0.0);
  for (int b = 0; b < total; ++b) {
    std::span<double> d(delays_.data() + static_cast<std::ptrdiff_t>(b) * owners, static_cast<std::size_t>(owners));
    profile_.delays_at(b, d);
    for (int o = 0; o < owners; ++o)
      sigmas_[static_cast<std::size_t>(b * owners + o)] = sigma_of_delta(d[static_cast<std::size_t>(o)], config_.params);
    ref_energy_[static_cast<std::size_t>(b)] = config_.params.p_bar * batch_time(ref_action_, d);
  }
  batch_ = 0;
  decisions_ = 0;
  energy_ = 0.0;
  prev_action_ = ref_action_;
  started_ = true;

  // Warm start: the reference action evaluated at batch 0.
  const auto& m = models_[static_cast<std::size_t>(ref_action_)];
  std::span<const double> d0(delays_.data(), static_cast<std::size_t>(owners));
  const double t = batch_time(ref_action_, d0);
  const double miss = miss_time(m, d0, nullptr);
  const double e = config_.params.p_bar * t;
  return observe(m, ref_action_, t, miss, noisy(e, config_.noise_scale, noise_), e);
}

std::vector<double> CacheEnv::observe(const ActionModel& m, int action_id, double t_mean, double miss_mean,
                                      double e_obs, double e_ref_mean) {
  const int owners = config_.owners();
  const double ns = config_.noise_scale;
  const auto& p = config_.params;
  RawSignals s;
  // Detector view: median of the most recent per-batch fetch slowdowns.
  const int end = std::max(batch_, 1);
  const int begin = std::max(0, end - kMedianSpan);
  std::vector<double> window;
  double smax = 1.0;
  for (int o = 0; o < owners; ++o) {
    window.clear();
    for (int b = begin; b < end; ++b) window.push_back(sigmas_[static_cast<std::size_t>(b * owners + o)]);
    const double sig = std::max(1.0, noisy(median_of(window), ns, noise_));
    s.sigma_est.push_back(sig);
    smax = std::max(smax, sig);
  }
  delta_hat_ = delta_of_sigma(smax, p);
  s.owner_hits = m.owner_hits;
  s.global_hit = m.global_hit;
  s.t_step_ratio = noisy(t_mean, ns, noise_) / p.t_base;
  s.f_rebuild = m.rebuild_per_batch / t_mean;
  s.f_miss = noisy(miss_mean, ns, noise_) / t_mean;
  s.e_ratio = e_obs / e_ref_mean;
  const int bpe = config_.batches_per_epoch;
  s.b_rem = static_cast<double>(bpe - batch_ % bpe) / bpe;
  const ActionSpec spec = decode_action(action_id, config_.p_partitions);
  s.prev_window_index = spec.window_index;
  s.prev_alloc = allocation_fractions(spec.alloc_template, owners);
  return encode_state(s, config_.p_partitions);
}

StepResult CacheEnv::step(int action_id) {
  if (!started_) throw StateError("environment stepped before reset");
  if (done()) throw StateError("environment stepped after the episode finished");
  const ActionSpec spec = decode_action(action_id, config_.p_partitions);
  const int owners = config_.owners();
  const int w = config_.window_grid[static_cast<std::size_t>(spec.window_index)];
  const int n = std::min(w, config_.total_batches() - batch_);
  const auto& m = models_[static_cast<std::size_t>(action_id)];
  const auto& p = config_.params;

  double t_sum = 0.0, miss_sum = 0.0, ref_sum = 0.0;
  for (int b = batch_; b < batch_ + n; ++b) {
    std::span<const double> d(delays_.data() + static_cast<std::ptrdiff_t>(b) * owners,
                              static_cast<std::size_t>(owners));
    const double miss = miss_time(m, d, nullptr);
    double smax = 1.0;
    for (int o = 0; o < owners; ++o) smax = std::max(smax, sigmas_[static_cast<std::size_t>(b * owners + o)]);
    t_sum += p.t_base + m.rebuild_per_batch + miss + allreduce_penalty(CongestionVector{{smax}}, p);
    miss_sum += miss;
    ref_sum += ref_energy_[static_cast<std::size_t>(b)];
  }
  batch_ += n;
  ++decisions_;

  StepResult r;
  StepInfo& info = r.info;
  info.window = w;
  info.alloc_template = spec.alloc_template;
  info.batches = n;
  info.energy = p.p_bar * t_sum;
  info.energy_observed = noisy(info.energy, config_.noise_scale, noise_);
  info.energy_ref = ref_sum;
  const auto prev = allocation_fractions(decode_action(prev_action_, config_.p_partitions).alloc_template, owners);
  const auto next = allocation_fractions(spec.alloc_template, owners);
  double churn = 0.0;
  for (int o = 0; o < owners; ++o) churn += std::abs(next[static_cast<std::size_t>(o)] - prev[static_cast<std::size_t>(o)]);
  info.penalty = config_.lambda_stability * churn;
  info.mean_hit = m.global_hit;
  energy_ += info.energy;

  // Normalized energy, weighted by the share of a reference window the
  // decision covered so per-decision rewards add up to whole-episode energy.
  const double share = static_cast<double>(n) / config_.reference_window;
  r.reward = -share * (info.energy_observed / ref_sum) - info.penalty;
  r.duration = n;
  r.done = done();
  prev_action_ = action_id;
  const double t_mean = t_sum / n;
  r.state = observe(m, action_id, t_mean, miss_sum / n, info.energy_observed / n, ref_sum / n);
  info.delta_hat_ms = delta_hat_;
  return r;
}

double EvalSummary::window_share(std::span<const int> windows, std::span<const int> grid) const {
  if (decisions == 0) return 0.0;
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < window_histogram.size() && i < grid.size(); ++i)
    if (std::find(windows.begin(), windows.end(), grid[i]) != windows.end()) hits += window_histogram[i];
  return static_cast<double>(hits) / static_cast<double>(decisions);
}

std::uint64_t episode_seed(std::uint64_t base, int episode) {
  return CounterRng(base).child(static_cast<std::uint64_t>(episode)).key();
}

EvalSummary evaluate_policy(Policy& policy, const EpisodeConfig& config, int n_episodes,
                            std::vector<DecisionRecord>* log) {
  if (n_episodes < 0) throw ValidationError("episode count must be >= 0");
  EvalSummary s;
  s.action_histogram.assign(static_cast<std::size_t>(config.num_actions()), 0);
  s.window_histogram.assign(config.window_grid.size(), 0);
  if (n_episodes == 0) return s;
  CacheEnv env(config);
  for (int ep = 0; ep < n_episodes; ++ep) {
    const std::uint64_t seed = episode_seed(config.seed, ep);
    policy.reset(seed);
    std::vector<double> state = env.reset(seed);
    while (!env.done()) {
      const int batch = env.batch();
      const int a = policy.act({state, env.delta_hat_ms()});
      const StepResult r = env.step(a);
      ++s.action_histogram[static_cast<std::size_t>(a)];
      ++s.window_histogram[static_cast<std::size_t>(a / config.p_partitions)];
      ++s.decisions;
      if (log)
        log->push_back({ep, env.decisions() - 1, batch, a, r.info.window, r.info.alloc_template, r.reward,
                        r.info.energy, r.info.delta_hat_ms});
      state = r.state;
    }
    s.episode_energy.push_back(env.episode_energy());
  }
  s.episodes = n_episodes;
  s.mean_energy = std::accumulate(s.episode_energy.begin(), s.episode_energy.end(), 0.0) / n_episodes;
  double var = 0.0;
  for (double e : s.episode_energy) var += (e - s.mean_energy) * (e - s.mean_energy);
  s.stdev_energy = n_episodes > 1 ? std::sqrt(var / (n_episodes - 1)) : 0.0;
  return s;
}

void to_json(nlohmann::json& j, const CongestionProfile& p) {
  j = nlohmann::json{{"archetype", archetype_name(p.archetype)},
                     {"delta_ms", p.delta_ms},
                     {"onset_batch", p.onset_batch},
                     {"duration_batches", p.duration_batches},
                     {"affected_owners", p.affected_owners},
                     {"oscillation_period_batches", p.oscillation_period_batches},
                     {"noise_scale", p.noise_scale}};
}

void from_json(const nlohmann::json& j, CongestionProfile& p) {
  static const std::set<std::string> known{"archetype",        "delta_ms",        "onset_batch",
                                           "duration_batches", "affected_owners", "oscillation_period_batches",
                                           "noise_scale"};
  if (!j.is_object()) throw ValidationError("congestion profile must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError("unknown congestion profile key '" + k + "'");
  try {
    p.archetype = archetype_from_name(j.at("archetype").get<std::string>());
    p.delta_ms = j.value("delta_ms", 0.0);
    p.onset_batch = j.value("onset_batch", 0);
    p.duration_batches = j.value("duration_batches", 1);
    p.affected_owners = j.value("affected_owners", std::vector<int>{});
    p.oscillation_period_batches = j.value("oscillation_period_batches", 128);
    p.noise_scale = j.value("noise_scale", 0.03);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed congestion profile: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const EpisodeConfig& c) {
  j = nlohmann::json{{"p_partitions", c.p_partitions},
                     {"epochs", c.epochs},
                     {"batches_per_epoch", c.batches_per_epoch},
                     {"window_grid", c.window_grid},
                     {"lambda_stability", c.lambda_stability},
                     {"reference_window", c.reference_window},
                     {"kappa", c.kappa},
                     {"noise_scale", c.noise_scale},
                     {"seed", c.seed},
                     {"params", c.params}};
  if (c.profile) j["profile"] = *c.profile;
}

void from_json(const nlohmann::json& j, EpisodeConfig& c) {
  static const std::set<std::string> known{"p_partitions",     "epochs", "batches_per_epoch", "window_grid",
                                           "lambda_stability", "reference_window", "kappa", "noise_scale",
                                           "seed",             "params", "profile"};
  if (!j.is_object()) throw ValidationError("episode config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError("unknown episode config key '" + k + "'");
  try {
    c.p_partitions = j.value("p_partitions", c.p_partitions);
    c.epochs = j.value("epochs", c.epochs);
    c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
    c.window_grid = j.value("window_grid", c.window_grid);
    c.lambda_stability = j.value("lambda_stability", c.lambda_stability);
    c.reference_window = j.value("reference_window", c.reference_window);
    c.kappa = j.value("kappa", c.kappa);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.seed = j.value("seed", c.seed);
    if (j.contains("params")) c.params = j.at("params").get<CalibrationParams>();
    if (j.contains("profile")) c.profile = j.at("profile").get<CongestionProfile>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed episode config: ") + e.what());
  }
  c.validate();
}

}  // namespace wincache
