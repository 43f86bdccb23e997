#pragma once

// Value network, Double-DQN trainer and the policies that share the
// environment's Policy interface (dqn, heuristic, static:<W>, random).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wincache/rng.hpp"
#include "wincache/sim_env.hpp"

namespace wincache {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Fully connected ReLU network. Weights are stored [in][out] per layer.
class QNetwork {
 public:
  QNetwork() = default;
  explicit QNetwork(std::vector<int> dims);
  static QNetwork for_env(int state_dim, int actions, int hidden = 256) { return QNetwork({state_dim, hidden, hidden, actions}); }

  // Scaled uniform fan-in initialization: U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
  void init(CounterRng& rng);

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int layers() const { return static_cast<int>(dims_.size()) - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  double* weight(int l) { return params_.data() + w_off_[static_cast<std::size_t>(l)]; }
  const double* weight(int l) const { return params_.data() + w_off_[static_cast<std::size_t>(l)]; }
  double* bias(int l) { return params_.data() + b_off_[static_cast<std::size_t>(l)]; }
  const double* bias(int l) const { return params_.data() + b_off_[static_cast<std::size_t>(l)]; }

  std::vector<double> forward(std::span<const double> state) const;
  // rows x input -> rows x output
  void forward_batch(std::span<const double> states, int rows, std::vector<double>& out) const;

  // Mean Huber loss of Q(s_i, a_i) against fixed targets y_i; when grad is
  // non-null it receives d loss / d params (same layout as params()).
  double loss(std::span<const double> states, std::span<const int> actions, std::span<const double> targets,
              std::vector<double>* grad) const;

  // Copy with every parameter rounded through float32, i.e. what a
  // checkpoint round trip yields.
  QNetwork quantized() const;

  bool operator==(const QNetwork& o) const { return dims_ == o.dims_ && params_ == o.params_; }

 private:
  std::vector<int> dims_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_;
};

double huber(double x, double delta = 1.0);
double huber_grad(double x, double delta = 1.0);

// Scales g in place so its L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::span<double> g, double max_norm);

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  std::uint64_t t = 0;
  void step(std::span<double> params, std::span<const double> grad);
};

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
  double duration = 1.0;  // batches covered; discount exponent gamma^duration
};

// Strict FIFO ring of transitions.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim);
  void push(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  // Oldest-first position i in [0, size).
  Transition at(std::size_t i) const;
  void sample(std::size_t n, CounterRng& rng, std::vector<std::size_t>& idx) const;

  const double* state(std::size_t slot) const { return states_.data() + slot * dim_; }
  const double* next_state(std::size_t slot) const { return next_.data() + slot * dim_; }
  int action(std::size_t slot) const { return actions_[slot]; }
  double reward(std::size_t slot) const { return rewards_[slot]; }
  bool done(std::size_t slot) const { return dones_[slot] != 0; }
  double duration(std::size_t slot) const { return durations_[slot]; }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
  std::vector<double> states_, next_, rewards_, durations_;
  std::vector<int> actions_;
  std::vector<std::uint8_t> dones_;
};

// y = r + gamma^duration * Q_target(s', argmax_a Q_online(s', a)); y = r when done.
double double_dqn_target(double reward, bool done, double gamma, double duration, std::span<const double> q_online_next,
                         std::span<const double> q_target_next, std::span<const std::uint8_t> mask = {});
double double_dqn_target(const Transition& t, const QNetwork& online, const QNetwork& target, double gamma,
                         std::span<const std::uint8_t> mask = {});

// Lowest-index maximum over the allowed actions.
int argmax_masked(std::span<const double> q, std::span<const std::uint8_t> mask = {});

// Epsilon-greedy: uniform over allowed actions with probability epsilon.
int act(const QNetwork& net, std::span<const double> state, double epsilon, CounterRng& rng,
        std::span<const std::uint8_t> mask = {});

struct TrainConfig {
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 5000;
  std::size_t replay_capacity = 50000;
  int batch_size = 64;
  int target_sync_steps = 100;
  double grad_clip = 10.0;
  double learning_rate = 1e-4;
  // Decayed linearly to this value over `episodes`; negative keeps it constant.
  double learning_rate_end = 1e-5;
  double huber_delta = 1.0;
  int episodes = 20000;
  int train_every = 32;    // decisions between gradient steps
  int learn_start = 1000;  // transitions collected before the first step
  int hidden = 256;
  // Added per reference window of batches to stored rewards. The environment
  // reward is about -1 per reference window, so 1 makes Q an advantage over
  // the reference policy and keeps it independent of the time left in the
  // episode.
  double reward_offset = 1.0;
  std::uint64_t seed = 0;
  // Restricts the action set; empty means all actions.
  std::vector<std::uint8_t> action_mask;

  double epsilon(int episode) const;
  double learning_rate_at(int episode) const;
  void validate(int num_actions) const;
};

// Unknown keys are rejected by name.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainerState {
  QNetwork online;
  QNetwork target;
  Adam adam;
  std::uint64_t gradient_steps = 0;
};

struct TrainStepResult {
  bool trained = false;  // false when the buffer is underfilled
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double clipped_norm = 0.0;
};

TrainStepResult train_step(const ReplayBuffer& buffer, TrainerState& nets, const TrainConfig& config, CounterRng& rng);

struct EpisodeLog {
  int episode;
  double epsilon;
  double total_reward;
  double energy;
  int decisions;
  double mean_loss;
  std::uint64_t gradient_steps;
};

struct TrainResult {
  QNetwork network;
  std::vector<EpisodeLog> curve;
  std::uint64_t gradient_steps = 0;
};

// Runs config.episodes domain-randomized episodes. `resume` continues from a
// saved network and step counter. `on_episode` is called after each episode.
TrainResult train(const EpisodeConfig& env_config, const TrainConfig& config, const QNetwork* resume = nullptr,
                  std::uint64_t resume_steps = 0, const std::function<void(const EpisodeLog&)>& on_episode = {});

// Binary layout: "WCQN", u32 version, u32 layer count + 1, u32 dims...,
// u64 gradient steps, then per layer weights [in][out] and biases as
// little-endian float32.
void save_checkpoint(const std::string& path, const QNetwork& net, std::uint64_t gradient_steps = 0);
QNetwork load_checkpoint(const std::string& path, std::uint64_t* gradient_steps = nullptr);

// Threshold fallback: w0 for delta <= 1 ms, w0/2 up to 6 ms, w0/4 beyond; at least 1.
int heuristic_window(double delta_hat_ms, int w0);

class DqnPolicy : public Policy {
 public:
  DqnPolicy(QNetwork net, std::vector<std::uint8_t> mask = {}) : net_(std::move(net)), mask_(std::move(mask)) {}
  int act(const Observation& obs) override;
  std::string name() const override { return "dqn"; }
  const QNetwork& network() const { return net_; }

 private:
  QNetwork net_;
  std::vector<std::uint8_t> mask_;
};

class HeuristicPolicy : public Policy {
 public:
  HeuristicPolicy(int p_partitions, std::vector<int> grid, int w0 = 16);
  int act(const Observation& obs) override;
  std::string name() const override { return "heuristic"; }

 private:
  int p_;
  std::vector<int> grid_;
  int w0_;
};

class StaticPolicy : public Policy {
 public:
  StaticPolicy(int p_partitions, std::vector<int> grid, int window, int alloc_template = 0);
  int act(const Observation&) override { return action_; }
  std::string name() const override;

 private:
  int action_;
  int window_;
};

class RandomPolicy : public Policy {
 public:
  explicit RandomPolicy(int num_actions) : n_(num_actions) {}
  void reset(std::uint64_t episode_seed) override { rng_ = CounterRng(episode_seed).child("agent"); }
  int act(const Observation&) override { return static_cast<int>(rng_.below(static_cast<std::uint64_t>(n_))); }
  std::string name() const override { return "random"; }

 private:
  int n_;
  CounterRng rng_;
};

// Mask allowing only the uniform allocation template.
std::vector<std::uint8_t> uniform_only_mask(int p_partitions, int n_windows = 8);

// "dqn" (needs checkpoint), "heuristic", "static:<W>", "random".
std::unique_ptr<Policy> make_policy(const std::string& spec, const EpisodeConfig& config,
                                    const std::string& checkpoint = "");

}  // namespace wincache
