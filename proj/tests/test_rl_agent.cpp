#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "wincache/desk_profile.hpp"
#include "wincache/errors.hpp"
#include "wincache/rl_agent.hpp"

using namespace wincache;

namespace {

std::vector<double> random_state(int dim, CounterRng& rng) {
  std::vector<double> s(static_cast<std::size_t>(dim));
  for (double& x : s) x = rng.uniform(-1.0, 1.0);
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("wincache_test_" + name);
}

EpisodeConfig small_env() {
  EpisodeConfig c;
  c.params = desk_profile().params;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("network shape matches the 23-256-256-32 layout") {
  const auto net = QNetwork::for_env(23, 32);
  CHECK(net.parameter_count() == 23 * 256 + 256 + 256 * 256 + 256 + 256 * 32 + 32);
  CHECK(net.parameter_count() == 80160);
  CHECK(net.layers() == 3);
}

TEST_CASE("zero weights give a zero Q-vector") {
  const auto net = QNetwork::for_env(23, 32);
  const auto q = net.forward(std::vector<double>(23, 0.7));
  REQUIRE(q.size() == 32);
  for (double v : q) CHECK(v == 0.0);
}

TEST_CASE("hand-computed forward on a 2-2-2 network") {
  QNetwork net({2, 2, 2});
  // W1 [in][out] = [[1, -1], [2, 0.5]], b1 = (0, 0.25)
  double* w1 = net.weight(0);
  w1[0] = 1.0; w1[1] = -1.0; w1[2] = 2.0; w1[3] = 0.5;
  net.bias(0)[0] = 0.0; net.bias(0)[1] = 0.25;
  // W2 = [[1, 0], [3, -2]], b2 = (0.5, 1)
  double* w2 = net.weight(1);
  w2[0] = 1.0; w2[1] = 0.0; w2[2] = 3.0; w2[3] = -2.0;
  net.bias(1)[0] = 0.5; net.bias(1)[1] = 1.0;
  // x = (1, 1): h = relu(1 + 2, -1 + 0.5 + 0.25) = (3, 0); q = (3 + 0.5, 0 + 1)
  auto q = net.forward(std::vector<double>{1.0, 1.0});
  CHECK(q[0] == 3.5);
  CHECK(q[1] == 1.0);
  // x = (-1, 2): h = relu(3, 2.25) = (3, 2.25); q = (3 + 6.75 + 0.5, -4.5 + 1)
  q = net.forward(std::vector<double>{-1.0, 2.0});
  CHECK(q[0] == doctest::Approx(10.25));
  CHECK(q[1] == doctest::Approx(-3.5));
}

TEST_CASE("forward is pure and rejects wrong dimensions") {
  CounterRng rng(5);
  auto net = QNetwork::for_env(23, 32);
  net.init(rng);
  const auto s = random_state(23, rng);
  CHECK(net.forward(s) == net.forward(s));
  CHECK_THROWS_AS(net.forward(std::vector<double>(22, 0.0)), ValidationError);
  CHECK_THROWS_AS(QNetwork({5}), ValidationError);
}

TEST_CASE("double DQN target on toy tables") {
  const std::vector<double> online{1, 5, 2}, target{7, 0, 9};
  // Online argmax is action 1, evaluated under the target network.
  CHECK(double_dqn_target(0.0, false, 0.99, 1.0, online, target) == 0.0);
  CHECK(double_dqn_target(-1.0, true, 0.99, 1.0, online, target) == -1.0);
  // With identical networks the target equals the vanilla max target.
  CHECK(double_dqn_target(0.5, false, 0.99, 1.0, target, target) == doctest::Approx(0.5 + 0.99 * 9));
  // Duration is the discount exponent.
  CHECK(double_dqn_target(0.0, false, 0.99, 0.25, target, target) == doctest::Approx(std::pow(0.99, 0.25) * 9));
  // Masking action 2 out moves the online argmax.
  const std::vector<std::uint8_t> mask{1, 1, 0};
  CHECK(double_dqn_target(0.0, false, 0.5, 1.0, target, online, mask) == doctest::Approx(0.5));
}

TEST_CASE("network target overload matches the table form") {
  CounterRng rng(9);
  auto online = QNetwork::for_env(5, 4, 8), target = QNetwork::for_env(5, 4, 8);
  online.init(rng);
  target.init(rng);
  Transition t{random_state(5, rng), 2, -0.3, random_state(5, rng), false, 0.5};
  const double y = double_dqn_target(t, online, target, 0.9);
  CHECK(y == double_dqn_target(-0.3, false, 0.9, 0.5, online.forward(t.next_state), target.forward(t.next_state)));
  t.done = true;
  CHECK(double_dqn_target(t, online, target, 0.9) == -0.3);
  CHECK(double_dqn_target(t, online, online, 0.9) == -0.3);
}

TEST_CASE("analytic gradient matches central finite differences") {
  CounterRng rng(17);
  auto net = QNetwork::for_env(23, 32, 24);
  net.init(rng);
  const int n = 5;
  std::vector<double> states;
  std::vector<int> actions;
  std::vector<double> targets;
  for (int i = 0; i < n; ++i) {
    const auto s = random_state(23, rng);
    states.insert(states.end(), s.begin(), s.end());
    actions.push_back(static_cast<int>(rng.below(32)));
  }
  // Keep each residual away from the Huber kink at |d| = 1: two quadratic, three linear.
  std::vector<double> q;
  net.forward_batch(states, n, q);
  const double offsets[] = {0.3, -0.4, 2.5, -3.0, 1.7};
  for (int i = 0; i < n; ++i) targets.push_back(q[static_cast<std::size_t>(i * 32 + actions[static_cast<std::size_t>(i)])] + offsets[i]);

  std::vector<double> grad;
  net.loss(states, actions, targets, &grad);
  double diff2 = 0.0, sum2 = 0.0, worst = 0.0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < net.parameter_count(); ++p) {
    const double orig = net.params()[p];
    net.params()[p] = orig + h;
    const double up = net.loss(states, actions, targets, nullptr);
    net.params()[p] = orig - h;
    const double down = net.loss(states, actions, targets, nullptr);
    net.params()[p] = orig;
    const double fd = (up - down) / (2 * h);
    diff2 += (fd - grad[p]) * (fd - grad[p]);
    sum2 += (fd + grad[p]) * (fd + grad[p]);
    if (std::abs(grad[p]) > 1e-4) worst = std::max(worst, std::abs(fd - grad[p]) / std::abs(grad[p]));
  }
  CHECK(std::sqrt(diff2 / sum2) <= 1e-4);
  CHECK(worst <= 1e-4);
}

TEST_CASE("huber loss is continuous with bounded slope") {
  CHECK(huber(1.0) == doctest::Approx(0.5));
  CHECK(huber(1.0 + 1e-12) == doctest::Approx(0.5));
  CHECK(huber(-3.0) == doctest::Approx(2.5));
  CHECK(huber_grad(0.25) == 0.25);
  CHECK(huber_grad(7.0) == 1.0);
  CHECK(huber_grad(-7.0) == -1.0);
}

TEST_CASE("global norm clipping") {
  std::vector<double> g{30.0, 40.0};
  CHECK(clip_global_norm(g, 10.0) == 50.0);
  CHECK(std::hypot(g[0], g[1]) <= 10.0 + 1e-9);
  CHECK(g[0] == doctest::Approx(6.0));
  std::vector<double> small{0.1, 0.2};
  clip_global_norm(small, 10.0);
  CHECK(small[0] == 0.1);
}

TEST_CASE("adam first step moves each parameter by about lr against the gradient") {
  Adam a;
  std::vector<double> p{1.0, -2.0}, g{0.5, -3.0};
  a.step(p, g);
  CHECK(p[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(-2.0 + 1e-4).epsilon(1e-9));
}

TEST_CASE("replay buffer is a strict FIFO at capacity") {
  ReplayBuffer b(3, 2);
  for (int i = 0; i < 5; ++i) b.push({{double(i), 0}, i, double(-i), {0, double(i)}, i == 4, 1.0});
  CHECK(b.size() == 3);
  CHECK(b.at(0).action == 2);
  CHECK(b.at(2).action == 4);
  CHECK(b.at(2).done);
  CHECK(b.at(1).state[0] == 3.0);
  CHECK_THROWS_AS(b.at(3), ValidationError);
  CHECK_THROWS_AS(b.push({{1.0}, 0, 0.0, {1.0, 2.0}, false, 1.0}), ValidationError);
}

TEST_CASE("train_step clips, counts and syncs the target network") {
  CounterRng rng(23);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.target_sync_steps = 3;
  TrainerState st;
  st.online = QNetwork::for_env(6, 4, 16);
  st.online.init(rng);
  st.target = st.online;
  ReplayBuffer b(100, 6);
  CHECK_FALSE(train_step(b, st, cfg, rng).trained);
  for (int i = 0; i < 20; ++i) b.push({random_state(6, rng), i % 4, 500.0 * (i % 2 ? 1 : -1), random_state(6, rng), false, 1.0});
  for (int k = 1; k <= 6; ++k) {
    const auto r = train_step(b, st, cfg, rng);
    CHECK(r.trained);
    CHECK(r.clipped_norm <= 10.0 + 1e-9);
    CHECK(st.gradient_steps == static_cast<std::uint64_t>(k));
    if (k % 3 == 0) {
      CHECK(st.online == st.target);
      const auto s = random_state(6, rng);
      CHECK(st.online.forward(s) == st.target.forward(s));
    } else {
      CHECK_FALSE(st.online == st.target);
    }
  }
}

TEST_CASE("epsilon-greedy action selection") {
  CounterRng init(31);
  auto net = QNetwork::for_env(23, 32, 16);
  net.init(init);
  CounterRng rng(2);
  const auto s = random_state(23, rng);
  const auto q = net.forward(s);
  const int best = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
  for (int i = 0; i < 10; ++i) CHECK(act(net, s, 0.0, rng) == best);

  std::vector<int> counts(32, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(act(net, s, 1.0, rng))];
  for (int c : counts) CHECK(std::abs(c / double(draws) - 1.0 / 32) <= 0.01);

  CounterRng a(7), b(7);
  for (int i = 0; i < 50; ++i) CHECK(act(net, s, 0.5, a) == act(net, s, 0.5, b));

  const auto mask = uniform_only_mask(4);
  for (int i = 0; i < 200; ++i) CHECK(act(net, s, 1.0, rng, mask) % 4 == 0);
}

TEST_CASE("argmax ties go to the lowest id") {
  CHECK(argmax_masked(std::vector<double>{1, 3, 3, 2}) == 1);
  CHECK(argmax_masked(std::vector<double>(32, 0.0)) == 0);
  const std::vector<std::uint8_t> mask{0, 0, 1, 1};
  CHECK(argmax_masked(std::vector<double>{9, 3, 3, 2}, mask) == 2);
  CHECK_THROWS_AS(argmax_masked(std::vector<double>{1, 2}, std::vector<std::uint8_t>{0, 0}), ValidationError);
}

TEST_CASE("epsilon schedule decays linearly and stays in range") {
  TrainConfig c;
  CHECK(c.epsilon(0) == 1.0);
  CHECK(c.epsilon(2500) == doctest::Approx(0.525));
  CHECK(c.epsilon(5000) == doctest::Approx(0.05));
  CHECK(c.epsilon(19999) == doctest::Approx(0.05));
}

TEST_CASE("learning rate decays linearly to its end value") {
  TrainConfig c;
  c.episodes = 101;
  c.learning_rate = 1e-4;
  c.learning_rate_end = -1.0;
  CHECK(c.learning_rate_at(100) == 1e-4);
  c.learning_rate_end = 1e-5;
  CHECK(c.learning_rate_at(0) == 1e-4);
  CHECK(c.learning_rate_at(50) == doctest::Approx(5.5e-5));
  CHECK(c.learning_rate_at(100) == doctest::Approx(1e-5));
  CHECK_NOTHROW(c.validate(32));
  c.learning_rate_end = 2e-4;
  CHECK_THROWS_AS(c.validate(32), ValidationError);
}

TEST_CASE("heuristic threshold rule") {
  CHECK(heuristic_window(0.5, 16) == 16);
  CHECK(heuristic_window(3.0, 16) == 8);
  CHECK(heuristic_window(7.0, 16) == 4);
  CHECK(heuristic_window(1.0, 16) == 16);
  CHECK(heuristic_window(6.0, 16) == 8);
  CHECK(heuristic_window(20.0, 2) == 1);
  CHECK_THROWS_AS(heuristic_window(-1.0, 16), ValidationError);
  CHECK_THROWS_AS(heuristic_window(1.0, 0), ValidationError);

  const std::vector<int> grid{1, 2, 4, 8, 16, 32, 64, 128};
  HeuristicPolicy h(4, grid);
  const std::vector<double> s(23, 0.0);
  CHECK(decode_action(h.act({s, 0.0}), 4).window_index == 4);
  CHECK(decode_action(h.act({s, 3.0}), 4).window_index == 3);
  CHECK(decode_action(h.act({s, 12.0}), 4).window_index == 2);
}

TEST_CASE("checkpoint round trip") {
  CounterRng rng(77);
  auto net = QNetwork::for_env(23, 32);
  net.init(rng);
  const auto path = temp_file("ckpt.bin");
  save_checkpoint(path.string(), net, 1234);
  const auto size = std::filesystem::file_size(path);
  CHECK(size >= 300 * 1024);
  CHECK(size <= 500 * 1024);

  std::uint64_t steps = 0;
  const auto loaded = load_checkpoint(path.string(), &steps);
  CHECK(steps == 1234);
  CHECK(loaded == net.quantized());
  const auto expect = net.quantized();
  for (int i = 0; i < 100; ++i) {
    const auto s = random_state(23, rng);
    CHECK(loaded.forward(s) == expect.forward(s));
  }
  // A second round trip is exact.
  save_checkpoint(path.string(), loaded);
  CHECK(load_checkpoint(path.string()) == loaded);

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  CHECK_THROWS_AS(load_checkpoint(path.string()), LoadError);
  bad = bytes;
  bad[4] = 9;
  write(bad);
  CHECK_THROWS_AS(load_checkpoint(path.string()), LoadError);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(path.string()), LoadError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path.string()), LoadError);
}

TEST_CASE("policy factory") {
  EpisodeConfig c = small_env();
  CHECK(make_policy("heuristic", c)->name() == "heuristic");
  CHECK(make_policy("static:8", c)->name() == "static:8");
  CHECK(make_policy("random", c)->name() == "random");
  CHECK_THROWS_AS(make_policy("static:7", c), ValidationError);
  CHECK_THROWS_AS(make_policy("static:8x", c), ValidationError);
  CHECK_THROWS_AS(make_policy("dqn", c), ValidationError);
  CHECK_THROWS_AS(make_policy("greedy", c), ValidationError);
  StaticPolicy p(4, c.window_grid, 32, 2);
  const auto a = decode_action(p.act({{}, 0.0}), 4);
  CHECK(a.window_index == 5);
  CHECK(a.alloc_template == 2);
}

TEST_CASE("training is deterministic for a fixed seed") {
  EpisodeConfig env = small_env();
  TrainConfig cfg;
  cfg.episodes = 4;
  cfg.hidden = 32;
  cfg.batch_size = 8;
  cfg.learn_start = 8;
  cfg.train_every = 2;
  cfg.seed = 11;
  const auto a = train(env, cfg);
  const auto b = train(env, cfg);
  CHECK(a.gradient_steps > 0);
  CHECK(a.network == b.network);
  REQUIRE(a.curve.size() == 4);
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].total_reward == b.curve[i].total_reward);
  cfg.seed = 12;
  CHECK_FALSE(train(env, cfg).network == a.network);
}

TEST_CASE("training reward improves from the first to the last tenth") {
  EpisodeConfig env = small_env();
  env.epochs = 6;
  TrainConfig cfg;
  cfg.episodes = 300;
  cfg.epsilon_decay_episodes = 150;
  cfg.hidden = 64;
  cfg.seed = 5;
  const auto r = train(env, cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 30; ++i) {
    first += r.curve[static_cast<std::size_t>(i)].total_reward;
    last += r.curve[r.curve.size() - 1 - static_cast<std::size_t>(i)].total_reward;
  }
  CHECK(last >= first);
}

TEST_CASE("training validates its configuration") {
  EpisodeConfig env = small_env();
  TrainConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(train(env, cfg), ValidationError);
  cfg = TrainConfig{};
  cfg.action_mask.assign(32, 0);
  CHECK_THROWS_AS(train(env, cfg), ValidationError);
  cfg.action_mask.assign(5, 1);
  CHECK_THROWS_AS(train(env, cfg), ValidationError);
}
