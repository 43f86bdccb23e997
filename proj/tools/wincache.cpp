// wincache: command-line front end.
//
//   calibrate  fit CalibrationParams from rpc / window / power traces
//   emulate    hit-rate curve of a synthetic workload
//   sweep      cost-model step time and energy over a (W, delay) grid
//   train      train the window controller
//   evaluate   run a policy over simulated episodes
//   detect     replay the congestion detector over an rtt trace
//   run        replay a workload through the pipeline controller
//   report     per-epoch CSVs from run logs
//
// Exit codes: 0 ok, 2 bad input, 3 fit failure, 4 internal invariant breach.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wincache/calibration.hpp"
#include "wincache/controller.hpp"
#include "wincache/cost_model.hpp"
#include "wincache/desk_profile.hpp"
#include "wincache/errors.hpp"
#include "wincache/rl_agent.hpp"
#include "wincache/sim_env.hpp"
#include "wincache/trace_emulator.hpp"

#ifndef WINCACHE_VERSION
#define WINCACHE_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wincache;

namespace {

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string policy = "heuristic";
  std::optional<int> episodes;
  std::vector<int> grid;
  bool dry_run = false;

  std::string params;
  std::string checkpoint;
  std::string resume;
  std::string scenario;
  std::vector<std::string> inputs;
  std::string rpc, window, power;
  bool synthetic = false;
  double noise = 0.01;
  std::vector<double> delays{0, 2, 4, 8, 16};
  int links = 1;
  int batches_per_epoch = 128;
  int warmup = 256;
  int every = 30;
  int owners = 3;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError("unknown " + what + " key '" + k + "'");
}

// Write-then-rename so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw ValidationError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Collects a subcommand's outputs and writes them, manifest last.
class Run {
 public:
  Run(std::string name, const Options& o, std::vector<std::string> argv)
      : name_(std::move(name)), opt_(o), argv_(std::move(argv)), started_(utc_now()) {}

  void config(json c) { config_ = std::move(c); }
  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& file, std::string content) { outputs_.emplace_back(file, std::move(content)); }
  // Files a library call already wrote into dir().
  void written(const std::string& file) { written_.push_back((dir_ / file).string()); }
  const fs::path& dir() const { return dir_; }

  void prepare() {
    if (opt_.dry_run) return;
    if (opt_.out.empty()) throw ValidationError(name_ + " needs --out");
    dir_ = opt_.out;
    fs::create_directories(dir_);
  }

  int finish() {
    if (opt_.dry_run) {
      std::cout << json{{"subcommand", name_}, {"config", config_}, {"dry_run", true}}.dump(2) << '\n';
      return 0;
    }
    json outs = written_;
    for (const auto& [file, content] : outputs_) {
      write_atomic(dir_ / file, content);
      outs.push_back((dir_ / file).string());
    }
    const json manifest{{"subcommand", name_},
                        {"tool_version", WINCACHE_VERSION},
                        {"argv", argv_},
                        {"seed", opt_.seed ? json(*opt_.seed) : json(nullptr)},
                        {"config", config_},
                        {"inputs", inputs_},
                        {"outputs", outs},
                        {"started_at", started_},
                        {"finished_at", utc_now()}};
    write_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
    for (const auto& o : outs) std::cerr << "wrote " << o.get<std::string>() << '\n';
    return 0;
  }

 private:
  std::string name_;
  const Options& opt_;
  std::vector<std::string> argv_;
  std::string started_;
  json config_ = json::object();
  std::vector<std::string> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  std::vector<std::string> written_;
  fs::path dir_;
};

// "params" is a path, an inline object, or absent (desk profile).
CalibrationParams resolve_params(const json* j, const std::string& flag, Run& run) {
  if (!flag.empty()) {
    run.input(flag);
    return load_params(flag);
  }
  if (j && j->is_string()) {
    run.input(j->get<std::string>());
    return load_params(j->get<std::string>());
  }
  if (j && j->is_object()) {
    try {
      return j->get<CalibrationParams>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed params: ") + e.what());
    }
  }
  return desk_profile().params;
}

json config_or_empty(const Options& o, Run& run) {
  if (o.config.empty()) return json::object();
  run.input(o.config);
  return read_json_file(o.config);
}

std::vector<int> window_grid(const Options& o) {
  if (o.grid.empty()) return {kWindowGrid.begin(), kWindowGrid.end()};
  for (int w : o.grid)
    if (w < 1) throw ValidationError("grid windows must be >= 1");
  return o.grid;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

// --- calibrate --------------------------------------------------------------

json fit_report_json(const FitReport& r) {
  json values = json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) values[r.names[i]] = r.values[i];
  return {{"values", values},          {"r_squared", r.r_squared},   {"residual_rms", r.residual_rms},
          {"iterations", r.iterations}, {"degenerate", r.degenerate}, {"at_boundary", r.at_boundary}};
}

int cmd_calibrate(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"p_partitions", "f_bytes", "r_remote", "alpha_overlap", "k_ar", "miss_overlap"},
             "calibration config");
  std::vector<RpcSample> rpc;
  std::vector<WindowSample> win;
  std::vector<PowerSample> pow;
  CalibrationConfig cc;
  if (o.synthetic) {
    const DeskProfile desk = desk_profile();
    cc = desk_calibration_config(desk);
    auto t = desk_traces(desk, o.seed.value_or(0), o.noise);
    rpc = std::move(t.rpc);
    win = std::move(t.window);
    pow = std::move(t.power);
  } else {
    if (o.rpc.empty() || o.window.empty() || o.power.empty())
      throw ValidationError("calibrate needs --rpc, --window and --power (or --synthetic)");
    rpc = read_rpc_trace(o.rpc);
    win = read_window_trace(o.window);
    pow = read_power_trace(o.power);
    for (const auto* p : {&o.rpc, &o.window, &o.power}) run.input(*p);
  }
  cc.p_partitions = cfg.value("p_partitions", cc.p_partitions);
  cc.f_bytes = cfg.value("f_bytes", cc.f_bytes);
  cc.r_remote = cfg.value("r_remote", cc.r_remote);
  cc.alpha_overlap = cfg.value("alpha_overlap", cc.alpha_overlap);
  cc.k_ar = cfg.value("k_ar", cc.k_ar);
  cc.miss_overlap = cfg.value("miss_overlap", cc.miss_overlap);
  run.config({{"p_partitions", cc.p_partitions},
              {"f_bytes", cc.f_bytes},
              {"r_remote", cc.r_remote},
              {"alpha_overlap", cc.alpha_overlap},
              {"k_ar", cc.k_ar},
              {"miss_overlap", cc.miss_overlap},
              {"synthetic", o.synthetic},
              {"noise", o.noise}});
  run.prepare();
  const CalibrationResult r = calibrate(rpc, win, pow, cc);
  json params = r.params;
  run.output("params.json", params.dump(2) + "\n");
  run.output("fit_report.json", json{{"rpc", fit_report_json(r.rpc.report)},
                                     {"hit", fit_report_json(r.hit.report)},
                                     {"rebuild", fit_report_json(r.rebuild.report)}}
                                    .dump(2) + "\n");
  if (o.synthetic && !o.dry_run) {
    // Keep the generated traces so the fit can be redone from files.
    write_rpc_trace((run.dir() / "rpc.jsonl").string(), rpc);
    write_window_trace((run.dir() / "window.jsonl").string(), win);
    write_power_trace((run.dir() / "power.jsonl").string(), pow);
    for (const char* f : {"rpc.jsonl", "window.jsonl", "power.jsonl"}) run.written(f);
  }
  return run.finish();
}

// --- emulate ----------------------------------------------------------------

int cmd_emulate(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"num_nodes", "zipf_s", "p_partitions", "batch_size", "num_batches", "owner_demand", "drift", "seed",
                   "capacity", "weights"},
             "workload");
  WorkloadSpec w = desk_workload();
  json wj = cfg;
  wj.erase("capacity");
  wj.erase("weights");
  from_json(wj, w);
  if (o.seed) w.seed = CounterRng(*o.seed).child("workload").key();
  CacheConfig cache = CacheConfig::uniform(w.owners(), cfg.value("capacity", desk_capacity()));
  if (cfg.contains("weights")) cache.owner_weights = cfg.at("weights").get<std::vector<double>>();
  cache.validate(w.owners());
  const auto grid = window_grid(o);
  json resolved = w;
  resolved["capacity"] = cache.capacity;
  resolved["weights"] = cache.owner_weights;
  resolved["grid"] = grid;
  run.config(resolved);
  run.prepare();
  if (o.dry_run) return run.finish();
  const Trace trace = generate_trace(w);
  run.output("emulation.csv", emulation_csv(measure_hit_curve(trace, grid, cache), w.owners()));
  return run.finish();
}

// --- sweep ------------------------------------------------------------------

int cmd_sweep(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"params", "delays_ms", "links"}, "sweep config");
  const CalibrationParams p = resolve_params(cfg.contains("params") ? &cfg["params"] : nullptr, o.params, run);
  const auto grid = window_grid(o);
  const auto delays = cfg.value("delays_ms", o.delays);
  const int links = cfg.value("links", o.links);
  if (delays.empty()) throw ValidationError("delay grid is empty");
  const int owners = static_cast<int>(p.owners());
  if (links < 1 || links > owners) throw ValidationError("links must be in [1, owners]");
  for (double d : delays)
    if (!(d >= 0.0)) throw ValidationError("delays must be >= 0 ms");
  run.config({{"params", p}, {"grid", grid}, {"delays_ms", delays}, {"links", links}});
  run.prepare();

  std::ostringstream sw, opt;
  sw << "window,delta_ms,sigma,step_time_s,step_energy_j\n";
  opt << "delta_ms,optimal_window,step_energy_j\n";
  for (double d : delays) {
    CongestionVector cv{std::vector<double>(static_cast<std::size_t>(owners), 1.0)};
    const double s = sigma_of_delta(d, p);
    for (int i = 0; i < links; ++i) cv.sigma[static_cast<std::size_t>(i)] = s;
    for (int w : grid) {
      sw << w << ',' << fmt(d) << ',' << fmt(s) << ',' << fmt(step_time(w, cv, p)) << ','
         << fmt(step_energy(w, cv, p)) << '\n';
    }
    const int best = optimal_window(cv, p, grid);
    opt << fmt(d) << ',' << best << ',' << fmt(step_energy(best, cv, p)) << '\n';
  }
  run.output("sweep.csv", sw.str());
  run.output("optimal.csv", opt.str());
  return run.finish();
}

// --- train / evaluate -------------------------------------------------------

EpisodeConfig episode_config(json j, const Options& o, Run& run) {
  EpisodeConfig c;
  c.params = resolve_params(j.contains("params") ? &j["params"] : nullptr, o.params, run);
  j.erase("params");
  if (j.contains("scenario")) throw ValidationError("use --scenario instead of a 'scenario' key");
  from_json(j, c);
  if (!o.grid.empty()) c.window_grid = o.grid;
  if (!o.scenario.empty()) c.profile = scenario_profile(o.scenario, c.owners(), c.total_batches());
  c.validate();
  return c;
}

int cmd_train(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"episode", "train", "uniform_only"}, "train config");
  EpisodeConfig env = episode_config(cfg.value("episode", json::object()), o, run);
  TrainConfig tc;
  from_json(cfg.value("train", json::object()), tc);
  if (o.episodes) tc.episodes = *o.episodes;
  if (o.seed) {
    tc.seed = *o.seed;
    env.seed = CounterRng(*o.seed).child("noise").key();
  }
  if (cfg.value("uniform_only", false)) tc.action_mask = uniform_only_mask(env.p_partitions, static_cast<int>(env.window_grid.size()));
  tc.validate(env.num_actions());

  std::optional<QNetwork> resume;
  std::uint64_t resume_steps = 0;
  if (!o.resume.empty()) {
    run.input(o.resume);
    resume = load_checkpoint(o.resume, &resume_steps);
  }
  json resolved{{"episode", env}, {"train", tc}, {"resume", o.resume}};
  run.config(resolved);
  run.prepare();
  if (o.dry_run) return run.finish();

  std::ostringstream curve;
  const auto t0 = std::chrono::steady_clock::now();
  const int report_every = std::max(1, tc.episodes / 20);
  TrainResult r = train(env, tc, resume ? &*resume : nullptr, resume_steps, [&](const EpisodeLog& l) {
    curve << json{{"episode", l.episode},           {"epsilon", l.epsilon},   {"total_reward", l.total_reward},
                  {"energy_j", l.energy},           {"decisions", l.decisions}, {"mean_loss", l.mean_loss},
                  {"gradient_steps", l.gradient_steps}}
                 .dump()
          << '\n';
    if ((l.episode + 1) % report_every == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "episode %d  eps %.3f  energy %.1f J  steps %llu  %.0f s\n", l.episode + 1, l.epsilon,
                   l.energy, static_cast<unsigned long long>(l.gradient_steps), s);
    }
  });
  const fs::path ck = run.dir() / "checkpoint.bin";
  save_checkpoint(ck.string(), r.network, r.gradient_steps);
  run.written("checkpoint.bin");
  run.output("curve.jsonl", curve.str());
  return run.finish();
}

int cmd_evaluate(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  EpisodeConfig env = episode_config(cfg, o, run);
  if (o.seed) env.seed = CounterRng(*o.seed).child("profile").key();
  const int n = o.episodes.value_or(50);
  if (n < 0) throw ValidationError("--episodes must be >= 0");
  if (!o.checkpoint.empty()) run.input(o.checkpoint);
  auto policy = make_policy(o.policy, env, o.checkpoint);
  run.config({{"episode", env}, {"policy", o.policy}, {"checkpoint", o.checkpoint}, {"episodes", n}});
  run.prepare();
  if (o.dry_run) return run.finish();

  std::vector<DecisionRecord> log;
  const EvalSummary s = evaluate_policy(*policy, env, n, &log);
  std::ostringstream jl;
  for (const auto& d : log)
    jl << json{{"episode", d.episode}, {"decision", d.decision}, {"batch", d.batch},
               {"delta_hat_ms", d.delta_hat_ms}, {"action", d.action}, {"window", d.window},
               {"alloc_template", d.alloc_template}, {"reward", d.reward}, {"energy_j", d.energy}}
              .dump()
       << '\n';
  std::ostringstream csv;
  csv << "policy,episodes,mean_energy_j,stdev_energy_j,decisions";
  for (int w : env.window_grid) csv << ",share_w" << w;
  csv << '\n' << policy->name() << ',' << s.episodes << ',' << fmt(s.mean_energy) << ',' << fmt(s.stdev_energy) << ','
      << s.decisions;
  for (std::size_t i = 0; i < env.window_grid.size(); ++i) {
    const double share = s.decisions && i < s.window_histogram.size()
                              ? static_cast<double>(s.window_histogram[i]) / static_cast<double>(s.decisions)
                              : 0.0;
    csv << ',' << fmt(share);
  }
  csv << '\n';
  std::ostringstream ep;
  ep << "episode,energy_j\n";
  for (std::size_t i = 0; i < s.episode_energy.size(); ++i) ep << i << ',' << fmt(s.episode_energy[i]) << '\n';
  run.output("decisions.jsonl", jl.str());
  run.output("summary.csv", csv.str());
  run.output("episodes.csv", ep.str());
  return run.finish();
}

// --- detect -----------------------------------------------------------------

std::vector<FetchSample> read_rtt_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<FetchSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("trace_kind")) {
        if (j["trace_kind"] != "rtt") throw ValidationError(path + ": trace_kind must be rtt");
        continue;
      }
      out.push_back({j.at("owner").get<int>(), j.at("rtt_s").get<double>(), j.at("t").get<double>()});
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

int cmd_detect(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"params", "owners", "warmup", "every"}, "detect config");
  if (o.inputs.size() != 1) throw ValidationError("detect needs exactly one --input rtt trace");
  const CalibrationParams p = resolve_params(cfg.contains("params") ? &cfg["params"] : nullptr, o.params, run);
  const int owners = cfg.value("owners", static_cast<int>(p.owners()));
  const int warmup = cfg.value("warmup", o.warmup);
  const int every = cfg.value("every", o.every);
  if (warmup < 0 || every < 1) throw ValidationError("warmup must be >= 0 and every >= 1");
  run.input(o.inputs[0]);
  const auto samples = read_rtt_trace(o.inputs[0]);
  run.config({{"params", p}, {"owners", owners}, {"warmup", warmup}, {"every", every}});
  run.prepare();
  const auto rows = replay_detection(samples, owners, p, static_cast<std::size_t>(warmup),
                                     static_cast<std::size_t>(every));
  std::ostringstream csv;
  csv << "samples,t,delta_hat_ms,worst_owner_delta_ms";
  for (int i = 0; i < owners; ++i) csv << ",sigma_" << i;
  for (int i = 0; i < owners; ++i) csv << ",stale_" << i;
  csv << '\n';
  for (const auto& r : rows) {
    csv << r.samples << ',' << fmt(r.t) << ',' << fmt(r.delta_hat_ms) << ',' << fmt(r.worst_delta_ms);
    for (double s : r.sigma) csv << ',' << fmt(s);
    for (bool s : r.stale) csv << ',' << (s ? 1 : 0);
    csv << '\n';
  }
  run.output("detect.csv", csv.str());
  return run.finish();
}

// --- run --------------------------------------------------------------------

int cmd_run(const Options& o, Run& run) {
  json cfg = config_or_empty(o, run);
  check_keys(cfg, {"workload", "pipeline", "profile", "params"}, "run config");
  const CalibrationParams p = resolve_params(cfg.contains("params") ? &cfg["params"] : nullptr, o.params, run);

  WorkloadSpec w = desk_workload();
  w.num_batches = 1024;
  json wj = cfg.value("workload", json::object());
  check_keys(wj, {"num_nodes", "zipf_s", "p_partitions", "batch_size", "num_batches", "owner_demand", "drift", "seed"},
             "workload");
  from_json(wj, w);

  PipelineConfig pc;
  pc.capacity = desk_capacity();
  const json pj = cfg.value("pipeline", json::object());
  check_keys(pj, {"queue_depth", "capacity", "initial_window", "warmup_batches", "batches_per_epoch", "sample_time_s",
                  "rtt_noise", "fetch_window_capacity", "weights_override"},
             "pipeline");
  try {
    pc.queue_depth = pj.value("queue_depth", pc.queue_depth);
    pc.capacity = pj.value("capacity", pc.capacity);
    pc.initial_window = pj.value("initial_window", pc.initial_window);
    pc.warmup_batches = pj.value("warmup_batches", pc.warmup_batches);
    pc.batches_per_epoch = pj.value("batches_per_epoch", pc.batches_per_epoch);
    pc.sample_time_s = pj.value("sample_time_s", pc.sample_time_s);
    pc.rtt_noise = pj.value("rtt_noise", 0.03);
    pc.fetch_window_capacity = pj.value("fetch_window_capacity", pc.fetch_window_capacity);
    pc.weights_override = pj.value("weights_override", pc.weights_override);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed pipeline config: ") + e.what());
  }
  pc.p_partitions = w.p_partitions;
  if (!o.grid.empty()) pc.window_grid = o.grid;
  if (o.seed) {
    w.seed = CounterRng(*o.seed).child("workload").key();
    pc.seed = CounterRng(*o.seed).child("noise").key();
  }
  pc.validate();

  CongestionProfile profile = fixed_profile(Archetype::none, 0.0, w.owners(), w.num_batches);
  if (!o.scenario.empty()) {
    if (cfg.contains("profile")) throw ValidationError("give either --scenario or a 'profile' key, not both");
    profile = scenario_profile(o.scenario, w.owners(), w.num_batches);
  } else if (cfg.contains("profile")) {
    profile = cfg["profile"].get<CongestionProfile>();
  }
  profile.validate(w.owners());

  EpisodeConfig ec;
  ec.p_partitions = pc.p_partitions;
  ec.window_grid = pc.window_grid;
  ec.params = p;
  if (!o.checkpoint.empty()) run.input(o.checkpoint);
  auto policy = make_policy(o.policy, ec, o.checkpoint);

  json pipeline{{"queue_depth", pc.queue_depth},
                {"capacity", pc.capacity},
                {"initial_window", pc.initial_window},
                {"warmup_batches", pc.warmup_batches},
                {"batches_per_epoch", pc.batches_per_epoch},
                {"sample_time_s", pc.sample_time_s},
                {"rtt_noise", pc.rtt_noise},
                {"fetch_window_capacity", pc.fetch_window_capacity},
                {"weights_override", pc.weights_override},
                {"window_grid", pc.window_grid},
                {"seed", pc.seed}};
  run.config({{"workload", w}, {"pipeline", pipeline}, {"profile", profile}, {"params", p},
              {"policy", o.policy}, {"checkpoint", o.checkpoint}});
  run.prepare();
  if (o.dry_run) return run.finish();

  const Trace trace = generate_trace(w);
  const RunLog log = run_pipeline(trace, *policy, pc, p, profile);
  run.output("run.jsonl", log.jsonl());
  run.output("epochs.csv", log.epoch_csv(pc.batches_per_epoch));
  return run.finish();
}

// --- report -----------------------------------------------------------------

int cmd_report(const Options& o, Run& run) {
  if (o.inputs.empty()) throw ValidationError("report needs at least one --input run log");
  if (o.batches_per_epoch < 1) throw ValidationError("--batches-per-epoch must be >= 1");
  std::vector<std::pair<std::string, RunLog>> logs;
  for (const auto& path : o.inputs) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    run.input(path);
    try {
      logs.emplace_back(fs::path(path).parent_path().filename().string(), parse_run_log(in));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": " + e.what());
    }
    if (logs.back().first.empty()) logs.back().first = fs::path(path).stem().string();
  }
  run.config({{"batches_per_epoch", o.batches_per_epoch}});
  run.prepare();
  std::ostringstream energy, window, hit;
  energy << "run,epoch,energy_j,cumulative_energy_j\n";
  window << "run,epoch,window\n";
  hit << "run,epoch,hit_rate\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const std::string name = std::to_string(i) + ":" + logs[i].first;
    double cum = 0.0;
    for (const auto& r : logs[i].second.epochs(o.batches_per_epoch)) {
      cum += r.energy_j;
      energy << name << ',' << r.epoch << ',' << fmt(r.energy_j) << ',' << fmt(cum) << '\n';
      window << name << ',' << r.epoch << ',' << r.window << '\n';
      hit << name << ',' << r.epoch << ',' << fmt(r.hit_rate) << '\n';
    }
  }
  run.output("energy_over_epochs.csv", energy.str());
  run.output("window_over_epochs.csv", window.str());
  run.output("hit_rate_over_epochs.csv", hit.str());
  return run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive cache-window controller toolkit"};
  app.set_version_flag("--version", WINCACHE_VERSION);
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "root seed; every random stream derives from it");
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--dry-run", o.dry_run, "validate inputs and print the resolved config");
  };
  auto with_params = [&](CLI::App* sub) {
    sub->add_option("--params", o.params, "CalibrationParams JSON (default: desk profile)");
  };
  auto with_policy = [&](CLI::App* sub) {
    sub->add_option("--policy", o.policy, "dqn, heuristic, random or static:<W>");
    sub->add_option("--checkpoint", o.checkpoint, "network checkpoint for --policy dqn");
    sub->add_option("--scenario", o.scenario, "clean, moderate, oscillating or asymmetric");
    sub->add_option("--grid", o.grid, "window grid");
  };

  auto* cal = app.add_subcommand("calibrate", "fit model parameters from traces");
  common(cal);
  cal->add_option("--rpc", o.rpc, "rpc trace (JSONL)");
  cal->add_option("--window", o.window, "window trace (JSONL)");
  cal->add_option("--power", o.power, "power trace (JSONL)");
  cal->add_flag("--synthetic", o.synthetic, "generate desk-profile traces from --seed instead of reading files");
  cal->add_option("--noise", o.noise, "relative noise of synthetic traces");

  auto* emu = app.add_subcommand("emulate", "hit-rate curve of a synthetic workload");
  common(emu);
  emu->add_option("--grid", o.grid, "window grid");

  auto* sw = app.add_subcommand("sweep", "step time and energy over windows and delays");
  common(sw);
  with_params(sw);
  sw->add_option("--grid", o.grid, "window grid");
  sw->add_option("--delays", o.delays, "one-way delays in ms");
  sw->add_option("--links", o.links, "number of congested owners");

  auto* tr = app.add_subcommand("train", "train the controller network");
  common(tr);
  with_params(tr);
  tr->add_option("--episodes", o.episodes, "training episodes");
  tr->add_option("--resume", o.resume, "continue from this checkpoint");
  tr->add_option("--grid", o.grid, "window grid");

  auto* ev = app.add_subcommand("evaluate", "run a policy over simulated episodes");
  common(ev);
  with_params(ev);
  with_policy(ev);
  ev->add_option("--episodes", o.episodes, "evaluation episodes (default 50)");

  auto* de = app.add_subcommand("detect", "replay the congestion detector over an rtt trace");
  common(de);
  with_params(de);
  de->add_option("--input", o.inputs, "rtt trace, JSONL of {owner, rtt_s, t}")->expected(1);
  de->add_option("--warmup", o.warmup, "samples that set the baseline");
  de->add_option("--every", o.every, "samples between report rows");

  auto* rn = app.add_subcommand("run", "replay a workload through the pipeline controller");
  common(rn);
  with_params(rn);
  with_policy(rn);

  auto* rp = app.add_subcommand("report", "per-epoch CSVs from run logs");
  common(rp);
  rp->add_option("--input", o.inputs, "run.jsonl files")->required();
  rp->add_option("--batches-per-epoch", o.batches_per_epoch, "batches per epoch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) o.seed = seed;
  Run run(sub->get_name(), o, std::vector<std::string>(argv, argv + argc));
  try {
    const std::string n = sub->get_name();
    if (n == "calibrate") return cmd_calibrate(o, run);
    if (n == "emulate") return cmd_emulate(o, run);
    if (n == "sweep") return cmd_sweep(o, run);
    if (n == "train") return cmd_train(o, run);
    if (n == "evaluate") return cmd_evaluate(o, run);
    if (n == "detect") return cmd_detect(o, run);
    if (n == "run") return cmd_run(o, run);
    if (n == "report") return cmd_report(o, run);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const FitError& e) {
    std::cerr << "fit failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}
