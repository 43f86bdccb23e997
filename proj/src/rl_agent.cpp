#include "wincache/rl_agent.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "wincache/errors.hpp"
#include "wincache/kernels.hpp"

namespace wincache {

namespace {

constexpr char kMagic[4] = {'W', 'C', 'Q', 'N'};

bool allowed(std::span<const std::uint8_t> mask, std::size_t a) { return mask.empty() || mask[a] != 0; }

}  // namespace

QNetwork::QNetwork(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ValidationError("network needs at least an input and an output layer");
  for (int d : dims_)
    if (d < 1) throw ValidationError("layer widths must be >= 1");
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    w_off_.push_back(off);
    off += static_cast<std::size_t>(dims_[l]) * static_cast<std::size_t>(dims_[l + 1]);
    b_off_.push_back(off);
    off += static_cast<std::size_t>(dims_[l + 1]);
  }
  params_.assign(off, 0.0);
}

void QNetwork::init(CounterRng& rng) {
  for (int l = 0; l < layers(); ++l) {
    const auto in = static_cast<std::size_t>(dims_[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(dims_[static_cast<std::size_t>(l) + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    double* w = weight(l);
    for (std::size_t i = 0; i < in * out; ++i) w[i] = rng.uniform(-bound, bound);
    double* b = bias(l);
    for (std::size_t i = 0; i < out; ++i) b[i] = rng.uniform(-bound, bound);
  }
}

void QNetwork::forward_batch(std::span<const double> states, int rows, std::vector<double>& out) const {
  if (states.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(input_dim()))
    throw ValidationError("state dimension mismatch: expected " + std::to_string(input_dim()));
  std::vector<double> cur(states.begin(), states.end()), next;
  for (int l = 0; l < layers(); ++l) {
    const int in = dims_[static_cast<std::size_t>(l)];
    const int o = dims_[static_cast<std::size_t>(l) + 1];
    next.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(o));
    kernels::gemm(rows, o, in, cur.data(), weight(l), bias(l), l + 1 < layers(), next.data());
    cur.swap(next);
  }
  out = std::move(cur);
}

std::vector<double> QNetwork::forward(std::span<const double> state) const {
  std::vector<double> out;
  forward_batch(state, 1, out);
  return out;
}

double huber(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

double huber_grad(double x, double delta) { return std::clamp(x, -delta, delta); }

double QNetwork::loss(std::span<const double> states, std::span<const int> actions, std::span<const double> targets,
                      std::vector<double>* grad) const {
  const int rows = static_cast<int>(actions.size());
  if (rows == 0) throw ValidationError("loss needs at least one sample");
  if (targets.size() != actions.size() ||
      states.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(input_dim()))
    throw ValidationError("loss inputs disagree in size");
  const int L = layers();
  std::vector<std::vector<double>> h(static_cast<std::size_t>(L) + 1);
  h[0].assign(states.begin(), states.end());
  for (int l = 0; l < L; ++l) {
    const int in = dims_[static_cast<std::size_t>(l)];
    const int o = dims_[static_cast<std::size_t>(l) + 1];
    auto& nxt = h[static_cast<std::size_t>(l) + 1];
    nxt.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(o));
    kernels::gemm(rows, o, in, h[static_cast<std::size_t>(l)].data(), weight(l), bias(l), l + 1 < L, nxt.data());
  }
  const int n_out = output_dim();
  const auto& q = h[static_cast<std::size_t>(L)];
  double total = 0.0;
  std::vector<double> dz(static_cast<std::size_t>(rows) * static_cast<std::size_t>(n_out), 0.0);
  for (int i = 0; i < rows; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= n_out) throw ValidationError("action id out of range in loss");
    const double d = q[static_cast<std::size_t>(i * n_out + a)] - targets[static_cast<std::size_t>(i)];
    total += huber(d);
    dz[static_cast<std::size_t>(i * n_out + a)] = huber_grad(d) / rows;
  }
  if (!grad) return total / rows;

  grad->assign(params_.size(), 0.0);
  std::vector<double> wt, dprev;
  for (int l = L - 1; l >= 0; --l) {
    const int in = dims_[static_cast<std::size_t>(l)];
    const int o = dims_[static_cast<std::size_t>(l) + 1];
    const auto& hin = h[static_cast<std::size_t>(l)];
    kernels::gemm_at(in, o, rows, hin.data(), dz.data(), nullptr, false, grad->data() + w_off_[static_cast<std::size_t>(l)]);
    double* db = grad->data() + b_off_[static_cast<std::size_t>(l)];
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < o; ++j) db[j] += dz[static_cast<std::size_t>(i * o + j)];
    if (l == 0) break;
    wt.resize(static_cast<std::size_t>(in) * static_cast<std::size_t>(o));
    kernels::transpose(in, o, weight(l), wt.data());
    dprev.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(in));
    kernels::gemm(rows, in, o, dz.data(), wt.data(), nullptr, false, dprev.data());
    for (std::size_t k = 0; k < dprev.size(); ++k)
      if (hin[k] <= 0.0) dprev[k] = 0.0;
    dz.swap(dprev);
  }
  return total / rows;
}

QNetwork QNetwork::quantized() const {
  QNetwork q = *this;
  for (double& p : q.params_) p = static_cast<double>(static_cast<float>(p));
  return q;
}

double clip_global_norm(std::span<double> g, double max_norm) {
  double sq = 0.0;
  for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& x : g) x *= s;
  }
  return norm;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const double b1 = beta1, b2 = beta2, step = lr / c1, inv_c2 = 1.0 / c2, e = eps;
  double* __restrict mp = m.data();
  double* __restrict vp = v.data();
  double* __restrict pp = params.data();
  const double* __restrict gp = grad.data();
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    mp[i] = b1 * mp[i] + (1.0 - b1) * gp[i];
    vp[i] = b2 * vp[i] + (1.0 - b2) * gp[i] * gp[i];
    pp[i] -= step * mp[i] / (std::sqrt(vp[i] * inv_c2) + e);
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim)
    : capacity_(capacity), dim_(static_cast<std::size_t>(state_dim)) {
  if (capacity == 0 || state_dim < 1) throw ValidationError("replay buffer needs positive capacity and dimension");
  states_.resize(capacity * dim_);
  next_.resize(capacity * dim_);
  rewards_.resize(capacity);
  durations_.resize(capacity);
  actions_.resize(capacity);
  dones_.resize(capacity);
}

void ReplayBuffer::push(const Transition& t) {
  if (t.state.size() != dim_ || t.next_state.size() != dim_)
    throw ValidationError("transition state dimension must be " + std::to_string(dim_));
  std::copy(t.state.begin(), t.state.end(), states_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
  std::copy(t.next_state.begin(), t.next_state.end(), next_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
  rewards_[head_] = t.reward;
  durations_[head_] = t.duration;
  actions_[head_] = t.action;
  dones_[head_] = t.done ? 1 : 0;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw ValidationError("replay index out of range");
  const std::size_t slot = (head_ + capacity_ - size_ + i) % capacity_;
  Transition t;
  t.state.assign(state(slot), state(slot) + dim_);
  t.next_state.assign(next_state(slot), next_state(slot) + dim_);
  t.action = actions_[slot];
  t.reward = rewards_[slot];
  t.done = dones_[slot] != 0;
  t.duration = durations_[slot];
  return t;
}

void ReplayBuffer::sample(std::size_t n, CounterRng& rng, std::vector<std::size_t>& idx) const {
  idx.resize(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(size_));  // slots [0, size) are all filled
}

int argmax_masked(std::span<const double> q, std::span<const std::uint8_t> mask) {
  int best = -1;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!allowed(mask, a)) continue;
    if (best < 0 || q[a] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  }
  if (best < 0) throw ValidationError("action mask allows no action");
  return best;
}

double double_dqn_target(double reward, bool done, double gamma, double duration, std::span<const double> q_online_next,
                         std::span<const double> q_target_next, std::span<const std::uint8_t> mask) {
  if (done) return reward;
  if (q_online_next.size() != q_target_next.size()) throw ValidationError("online and target Q sizes differ");
  const int a = argmax_masked(q_online_next, mask);
  return reward + std::pow(gamma, duration) * q_target_next[static_cast<std::size_t>(a)];
}

double double_dqn_target(const Transition& t, const QNetwork& online, const QNetwork& target, double gamma,
                         std::span<const std::uint8_t> mask) {
  if (t.done) return t.reward;
  return double_dqn_target(t.reward, false, gamma, t.duration, online.forward(t.next_state),
                           target.forward(t.next_state), mask);
}

int act(const QNetwork& net, std::span<const double> state, double epsilon, CounterRng& rng,
        std::span<const std::uint8_t> mask) {
  const double u = rng.uniform();
  if (u < epsilon) {
    const auto n = static_cast<std::size_t>(net.output_dim());
    std::size_t count = 0;
    for (std::size_t a = 0; a < n; ++a) count += allowed(mask, a);
    if (count == 0) throw ValidationError("action mask allows no action");
    auto k = rng.below(count);
    for (std::size_t a = 0; a < n; ++a)
      if (allowed(mask, a) && k-- == 0) return static_cast<int>(a);
  }
  return argmax_masked(net.forward(state), mask);
}

double TrainConfig::epsilon(int episode) const {
  if (epsilon_decay_episodes <= 0) return epsilon_end;
  const double frac = std::min(1.0, static_cast<double>(episode) / epsilon_decay_episodes);
  return std::max(epsilon_end, epsilon_start + (epsilon_end - epsilon_start) * frac);
}

double TrainConfig::learning_rate_at(int episode) const {
  if (learning_rate_end < 0.0 || episodes <= 1) return learning_rate;
  const double frac = std::min(1.0, static_cast<double>(episode) / (episodes - 1));
  return learning_rate + (learning_rate_end - learning_rate) * frac;
}

void TrainConfig::validate(int num_actions) const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= epsilon_start && epsilon_start <= 1.0))
    throw ValidationError("epsilon schedule must satisfy 0 <= end <= start <= 1");
  if (replay_capacity < static_cast<std::size_t>(batch_size) || batch_size < 1)
    throw ValidationError("replay capacity must hold at least one mini-batch");
  if (target_sync_steps < 1 || train_every < 1 || episodes < 0 || learn_start < 0 || hidden < 1)
    throw ValidationError("train counts must be positive");
  if (!std::isfinite(reward_offset)) throw ValidationError("reward_offset must be finite");
  if (!(grad_clip > 0.0) || !(learning_rate > 0.0) || !(huber_delta > 0.0))
    throw ValidationError("grad_clip, learning_rate and huber_delta must be > 0");
  if (learning_rate_end == 0.0 || learning_rate_end > learning_rate)
    throw ValidationError("learning_rate_end must be in (0, learning_rate], or negative for a constant rate");
  if (!action_mask.empty()) {
    if (static_cast<int>(action_mask.size()) != num_actions) throw ValidationError("action_mask size mismatch");
    if (std::none_of(action_mask.begin(), action_mask.end(), [](std::uint8_t m) { return m != 0; }))
      throw ValidationError("action_mask allows no action");
  }
}

TrainStepResult train_step(const ReplayBuffer& buffer, TrainerState& nets, const TrainConfig& config,
                           CounterRng& rng) {
  TrainStepResult res;
  const auto n = static_cast<std::size_t>(config.batch_size);
  if (buffer.size() < n) return res;
  std::vector<std::size_t> idx;
  buffer.sample(n, rng, idx);
  const int dim = nets.online.input_dim();
  const int n_act = nets.online.output_dim();
  std::vector<double> s(n * static_cast<std::size_t>(dim)), s2(s.size());
  std::vector<int> actions(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(buffer.state(idx[i]), dim, s.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(dim)));
    std::copy_n(buffer.next_state(idx[i]), dim,
                s2.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(dim)));
    actions[i] = buffer.action(idx[i]);
  }
  std::vector<double> q_on, q_tg;
  nets.online.forward_batch(s2, static_cast<int>(n), q_on);
  nets.target.forward_batch(s2, static_cast<int>(n), q_tg);
  std::vector<double> y(n);
  const std::span<const std::uint8_t> mask = config.action_mask;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> on(q_on.data() + i * static_cast<std::size_t>(n_act), static_cast<std::size_t>(n_act));
    const std::span<const double> tg(q_tg.data() + i * static_cast<std::size_t>(n_act), static_cast<std::size_t>(n_act));
    y[i] = double_dqn_target(buffer.reward(idx[i]), buffer.done(idx[i]), config.gamma, buffer.duration(idx[i]), on, tg,
                             mask);
  }
  std::vector<double> grad;
  res.loss = nets.online.loss(s, actions, y, &grad);
  res.grad_norm = clip_global_norm(grad, config.grad_clip);
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  res.clipped_norm = std::sqrt(sq);
  nets.adam.lr = config.learning_rate;
  nets.adam.step(nets.online.params(), grad);
  ++nets.gradient_steps;
  if (nets.gradient_steps % static_cast<std::uint64_t>(config.target_sync_steps) == 0) nets.target = nets.online;
  res.trained = true;
  return res;
}

TrainResult train(const EpisodeConfig& env_config, const TrainConfig& config, const QNetwork* resume,
                  std::uint64_t resume_steps, const std::function<void(const EpisodeLog&)>& on_episode) {
  CacheEnv env(env_config);
  const int dim = env_config.state_dim();
  const int n_act = env_config.num_actions();
  config.validate(n_act);
  const CounterRng root(config.seed);
  TrainerState st;
  if (resume) {
    if (resume->input_dim() != dim || resume->output_dim() != n_act)
      throw ValidationError("resumed network does not match the environment dimensions");
    st.online = *resume;
  } else {
    st.online = QNetwork::for_env(dim, n_act, config.hidden);
    CounterRng init = root.child("agent").child("init");
    st.online.init(init);
  }
  st.target = st.online;
  st.gradient_steps = resume_steps;
  st.adam.lr = config.learning_rate;

  ReplayBuffer buffer(config.replay_capacity, dim);
  CounterRng explore = root.child("agent");
  CounterRng replay = root.child("replay");
  const std::uint64_t profile_base = root.child("profile").key();
  const std::span<const std::uint8_t> mask = config.action_mask;
  const std::size_t learn_start =
      std::max(static_cast<std::size_t>(config.learn_start), static_cast<std::size_t>(config.batch_size));

  TrainConfig step_config = config;
  TrainResult out;
  std::uint64_t decisions_total = 0;
  Transition tr;
  for (int ep = 0; ep < config.episodes; ++ep) {
    const double eps = config.epsilon(ep);
    step_config.learning_rate = config.learning_rate_at(ep);
    std::vector<double> state;
    try {
      state = env.reset(episode_seed(profile_base, ep));
    } catch (const Error& e) {
      throw StateError("episode " + std::to_string(ep) + ": " + e.what());
    }
    double total_reward = 0.0, loss_sum = 0.0;
    int losses = 0, decisions = 0;
    while (!env.done()) {
      const int a = act(st.online, state, eps, explore, mask);
      StepResult r;
      try {
        r = env.step(a);
      } catch (const Error& e) {
        throw StateError("episode " + std::to_string(ep) + ": " + e.what());
      }
      tr.state = std::move(state);
      tr.action = a;
      tr.reward = r.reward + config.reward_offset * r.duration / env_config.reference_window;
      tr.next_state = r.state;
      tr.done = r.done;
      tr.duration = r.duration;
      buffer.push(tr);
      state = std::move(r.state);
      total_reward += r.reward;
      ++decisions;
      ++decisions_total;
      if (buffer.size() >= learn_start && decisions_total % static_cast<std::uint64_t>(config.train_every) == 0) {
        const TrainStepResult ts = train_step(buffer, st, step_config, replay);
        if (ts.trained) {
          loss_sum += ts.loss;
          ++losses;
        }
      }
    }
    EpisodeLog log{ep, eps, total_reward, env.episode_energy(), decisions, losses ? loss_sum / losses : 0.0,
                   st.gradient_steps};
    out.curve.push_back(log);
    if (on_episode) on_episode(log);
  }
  out.network = std::move(st.online);
  out.gradient_steps = st.gradient_steps;
  return out;
}

namespace {

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > data.size()) throw LoadError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const QNetwork& net, std::uint64_t gradient_steps) {
  std::string b(kMagic, 4);
  put_u32(b, kCheckpointVersion);
  put_u32(b, static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims()) put_u32(b, static_cast<std::uint32_t>(d));
  put_u64(b, gradient_steps);
  for (double p : net.params()) put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(p)));
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write checkpoint " + path);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!f) throw ValidationError("cannot write checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ValidationError("cannot move checkpoint into " + path);
}

QNetwork load_checkpoint(const std::string& path, std::uint64_t* gradient_steps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{data};
  r.need(4);
  if (std::memcmp(data.data(), kMagic, 4) != 0) throw LoadError("bad checkpoint magic in " + path);
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  if (n < 2 || n > 16) throw LoadError("implausible layer count in checkpoint");
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0 || d > (1u << 20)) throw LoadError("implausible layer width in checkpoint");
    dims.push_back(static_cast<int>(d));
  }
  const std::uint64_t steps = r.u64();
  QNetwork net(dims);
  r.need(net.parameter_count() * 4);
  for (double& p : net.params()) p = static_cast<double>(std::bit_cast<float>(r.u32()));
  if (r.pos != data.size()) throw LoadError("trailing bytes after checkpoint payload");
  if (gradient_steps) *gradient_steps = steps;
  return net;
}

int heuristic_window(double delta_hat_ms, int w0) {
  if (!(delta_hat_ms >= 0.0)) throw ValidationError("delta_hat must be >= 0");
  if (w0 < 1) throw ValidationError("w0 must be >= 1");
  int w = w0;
  if (delta_hat_ms > 6.0)
    w = w0 / 4;
  else if (delta_hat_ms > 1.0)
    w = w0 / 2;
  return std::max(1, w);
}

int DqnPolicy::act(const Observation& obs) { return argmax_masked(net_.forward(obs.state), mask_); }

HeuristicPolicy::HeuristicPolicy(int p_partitions, std::vector<int> grid, int w0)
    : p_(p_partitions), grid_(std::move(grid)), w0_(w0) {
  if (grid_.empty()) throw ValidationError("heuristic needs a window grid");
  if (w0 < 1) throw ValidationError("w0 must be >= 1");
}

int HeuristicPolicy::act(const Observation& obs) {
  const int w = heuristic_window(obs.delta_hat_ms, w0_);
  // Largest grid window not above the rule's answer.
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid_.size(); ++i)
    if (grid_[i] <= w) idx = i;
  return static_cast<int>(idx) * p_;
}

StaticPolicy::StaticPolicy(int p_partitions, std::vector<int> grid, int window, int alloc_template) : window_(window) {
  const auto it = std::find(grid.begin(), grid.end(), window);
  if (it == grid.end()) throw ValidationError("static window " + std::to_string(window) + " is not on the grid");
  action_ = encode_action({static_cast<int>(it - grid.begin()), alloc_template}, p_partitions,
                          static_cast<int>(grid.size()));
}

std::string StaticPolicy::name() const { return "static:" + std::to_string(window_); }

std::vector<std::uint8_t> uniform_only_mask(int p_partitions, int n_windows) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(p_partitions * n_windows), 0);
  for (int w = 0; w < n_windows; ++w) m[static_cast<std::size_t>(w * p_partitions)] = 1;
  return m;
}

std::unique_ptr<Policy> make_policy(const std::string& spec, const EpisodeConfig& config,
                                    const std::string& checkpoint) {
  if (spec == "heuristic") return std::make_unique<HeuristicPolicy>(config.p_partitions, config.window_grid);
  if (spec == "random") return std::make_unique<RandomPolicy>(config.num_actions());
  if (spec == "dqn") {
    if (checkpoint.empty()) throw ValidationError("policy dqn needs a checkpoint");
    QNetwork net = load_checkpoint(checkpoint);
    if (net.input_dim() != config.state_dim() || net.output_dim() != config.num_actions())
      throw ValidationError("checkpoint dimensions do not match the episode config");
    return std::make_unique<DqnPolicy>(std::move(net));
  }
  if (spec.rfind("static:", 0) == 0) {
    const std::string w = spec.substr(7);
    std::size_t used = 0;
    int window = 0;
    try {
      window = std::stoi(w, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != w.size()) throw ValidationError("bad static policy window '" + w + "'");
    return std::make_unique<StaticPolicy>(config.p_partitions, config.window_grid, window);
  }
  throw ValidationError("unknown policy '" + spec + "' (expected dqn, heuristic, static:<W> or random)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"epsilon_start", c.epsilon_start},
                     {"epsilon_end", c.epsilon_end},
                     {"epsilon_decay_episodes", c.epsilon_decay_episodes},
                     {"replay_capacity", c.replay_capacity},
                     {"batch_size", c.batch_size},
                     {"target_sync_steps", c.target_sync_steps},
                     {"grad_clip", c.grad_clip},
                     {"learning_rate", c.learning_rate},
                     {"learning_rate_end", c.learning_rate_end},
                     {"huber_delta", c.huber_delta},
                     {"episodes", c.episodes},
                     {"train_every", c.train_every},
                     {"learn_start", c.learn_start},
                     {"hidden", c.hidden},
                     {"reward_offset", c.reward_offset},
                     {"seed", c.seed},
                     {"action_mask", c.action_mask}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{
      "gamma",         "epsilon_start",     "epsilon_end", "epsilon_decay_episodes", "replay_capacity",
      "batch_size",    "target_sync_steps", "grad_clip",   "learning_rate",          "learning_rate_end",
      "huber_delta",   "episodes",          "train_every", "learn_start",            "hidden",
      "reward_offset", "seed",              "action_mask"};
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError("unknown train config key '" + k + "'");
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
    c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
    c.epsilon_decay_episodes = j.value("epsilon_decay_episodes", c.epsilon_decay_episodes);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.target_sync_steps = j.value("target_sync_steps", c.target_sync_steps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.learning_rate_end = j.value("learning_rate_end", c.learning_rate_end);
    c.huber_delta = j.value("huber_delta", c.huber_delta);
    c.episodes = j.value("episodes", c.episodes);
    c.train_every = j.value("train_every", c.train_every);
    c.learn_start = j.value("learn_start", c.learn_start);
    c.hidden = j.value("hidden", c.hidden);
    c.reward_offset = j.value("reward_offset", c.reward_offset);
    c.seed = j.value("seed", c.seed);
    c.action_mask = j.value("action_mask", c.action_mask);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed train config: ") + e.what());
  }
}

}  // namespace wincache
