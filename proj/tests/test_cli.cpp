#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "wincache/cost_model.hpp"
#include "wincache/desk_profile.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wincache;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("wincache_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

const Scratch& scratch() {
  static Scratch s;
  return s;
}

int cli(const std::string& args, std::string* err = nullptr) {
  const std::string errfile = scratch() / "stderr.txt";
  const std::string cmd = std::string(WINCACHE_CLI) + " " + args + " > /dev/null 2> " + errfile;
  const int status = std::system(cmd.c_str());
  if (err) {
    std::ifstream in(errfile);
    *err = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::vector<std::vector<std::string>> csv_rows(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

json last_jsonl(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

}  // namespace

TEST_CASE("calibrate fits synthetic traces and refits them from disk") {
  const auto& s = scratch();
  REQUIRE(cli("calibrate --synthetic --seed 3 --out " + (s / "cal")) == 0);
  CHECK(fs::exists(s / "cal/manifest.json"));
  const auto manifest = json::parse(slurp(s / "cal/manifest.json"));
  CHECK(manifest["subcommand"] == "calibrate");
  CHECK(manifest["seed"] == 3);
  const CalibrationParams fitted = load_params(s / "cal/params.json");
  CHECK(fitted.alpha_rpc == doctest::Approx(4.67e-3).epsilon(0.02));

  put(s / "cal.json", R"({"p_partitions":4,"f_bytes":2048,"r_remote":25000,"alpha_overlap":0.5,"k_ar":0.002,"miss_overlap":3})");
  REQUIRE(cli("calibrate --config " + (s / "cal.json") + " --rpc " + (s / "cal/rpc.jsonl") + " --window " +
              (s / "cal/window.jsonl") + " --power " + (s / "cal/power.jsonl") + " --out " + (s / "refit")) == 0);
  CHECK(slurp(s / "cal/params.json") == slurp(s / "refit/params.json"));
}

TEST_CASE("calibrate exit codes") {
  const auto& s = scratch();
  std::string err;
  CHECK(cli("calibrate --rpc " + (s / "none.jsonl") + " --window x --power y --out " + (s / "x"), &err) == 2);
  CHECK(cli("calibrate --out " + (s / "x")) == 2);

  REQUIRE(cli("calibrate --synthetic --seed 1 --out " + (s / "cal1")) == 0);
  // One delay level leaves the delay regressor unidentifiable.
  std::istringstream in(slurp(s / "cal1/rpc.jsonl"));
  std::ostringstream flat;
  std::string line;
  std::getline(in, line);
  flat << line << '\n';
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j["delta_ms"] = 0.0;
    flat << j.dump() << '\n';
  }
  put(s / "flat_rpc.jsonl", flat.str());
  CHECK(cli("calibrate --rpc " + (s / "flat_rpc.jsonl") + " --window " + (s / "cal1/window.jsonl") + " --power " +
                (s / "cal1/power.jsonl") + " --out " + (s / "bad"),
            &err) == 3);
  CHECK(err.find("gamma_c") != std::string::npos);
}

TEST_CASE("train smoke run, resume and config errors") {
  const auto& s = scratch();
  put(s / "train.json", R"({"train":{"episodes":200,"epsilon_decay_episodes":100}})");
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(cli("train --config " + (s / "train.json") + " --seed 5 --out " + (s / "tr")) == 0);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60.0);
  const auto first = last_jsonl(s / "tr/curve.jsonl");
  CHECK(first["episode"] == 199);
  const auto steps = first["gradient_steps"].get<std::uint64_t>();
  CHECK(steps > 0);

  REQUIRE(cli("train --config " + (s / "train.json") + " --seed 5 --episodes 20 --resume " + (s / "tr/checkpoint.bin") +
              " --out " + (s / "tr2")) == 0);
  std::istringstream curve(slurp(s / "tr2/curve.jsonl"));
  std::string line;
  std::getline(curve, line);
  CHECK(json::parse(line)["gradient_steps"].get<std::uint64_t>() >= steps);
  CHECK(last_jsonl(s / "tr2/curve.jsonl")["gradient_steps"].get<std::uint64_t>() > steps);

  std::string err;
  put(s / "bad_train.json", R"({"train":{"episodez":3}})");
  CHECK(cli("train --config " + (s / "bad_train.json") + " --out " + (s / "x"), &err) == 2);
  CHECK(err.find("episodez") != std::string::npos);
  put(s / "bad_episode.json", R"({"episode":{"epochz":3}})");
  CHECK(cli("train --config " + (s / "bad_episode.json") + " --out " + (s / "x"), &err) == 2);
  CHECK(err.find("epochz") != std::string::npos);
}

TEST_CASE("dry run validates without writing") {
  const auto& s = scratch();
  CHECK(cli("train --dry-run --episodes 10 --out " + (s / "dry")) == 0);
  CHECK(cli("run --dry-run --policy heuristic --out " + (s / "dry")) == 0);
  CHECK(cli("evaluate --dry-run --policy static:8 --out " + (s / "dry")) == 0);
  CHECK_FALSE(fs::exists(s / "dry"));
  CHECK(cli("evaluate --dry-run --policy static:7 --out " + (s / "dry")) == 2);
}

TEST_CASE("sweep agrees with the cost model") {
  const auto& s = scratch();
  REQUIRE(cli("sweep --out " + (s / "sw")) == 0);
  const auto p = desk_profile().params;
  const auto opt = csv_rows(s / "sw/optimal.csv");
  REQUIRE(opt.size() == 5);
  CHECK(opt[0][0] == "0");
  CHECK(std::stoi(opt[0][1]) == optimal_window(CongestionVector{{1, 1, 1}}, p));

  std::map<int, double> last;
  for (const auto& r : csv_rows(s / "sw/sweep.csv")) {
    const int w = std::stoi(r[0]);
    const double t = std::stod(r[3]);
    if (last.count(w)) CHECK(t >= last[w]);
    last[w] = t;
  }
  CHECK(last.size() == 8);

  put(s / "empty.json", R"({"delays_ms":[]})");
  CHECK(cli("sweep --config " + (s / "empty.json") + " --out " + (s / "x")) == 2);
}

TEST_CASE("evaluate policies and edge cases") {
  const auto& s = scratch();
  std::string err;
  CHECK(cli("evaluate --policy bogus --out " + (s / "x"), &err) == 2);
  CHECK(err.find("bogus") != std::string::npos);
  CHECK(cli("evaluate --policy dqn --out " + (s / "x")) == 2);

  REQUIRE(cli("evaluate --policy static:16 --episodes 0 --out " + (s / "ev0")) == 0);
  const auto empty = csv_rows(s / "ev0/summary.csv");
  REQUIRE(empty.size() == 1);
  CHECK(empty[0][1] == "0");
  CHECK(slurp(s / "ev0/decisions.jsonl").empty());

  REQUIRE(cli("evaluate --policy heuristic --scenario moderate --episodes 2 --seed 4 --out " + (s / "ev")) == 0);
  const auto row = csv_rows(s / "ev/summary.csv").at(0);
  CHECK(row[0] == "heuristic");
  CHECK(std::stod(row[2]) > 0.0);
  const auto d = last_jsonl(s / "ev/decisions.jsonl");
  for (const char* k : {"episode", "decision", "action", "window", "reward", "energy_j", "delta_hat_ms"})
    CHECK(d.contains(k));
}

TEST_CASE("detect replays an rtt trace") {
  const auto& s = scratch();
  std::ostringstream t;
  t << R"({"trace_kind":"rtt","schema_version":1})" << '\n';
  for (int i = 0; i < 400; ++i) {
    const int o = i % 3;
    const double rtt = 0.010 * ((i > 300 && o == 2) ? 2.0 : 1.0);
    t << json{{"owner", o}, {"rtt_s", rtt}, {"t", 0.01 * (i + 1)}}.dump() << '\n';
  }
  put(s / "rtt.jsonl", t.str());
  REQUIRE(cli("detect --input " + (s / "rtt.jsonl") + " --out " + (s / "det")) == 0);
  const auto rows = csv_rows(s / "det/detect.csv");
  REQUIRE(rows.size() == 4);
  CHECK(std::stod(rows[0][2]) == 0.0);
  CHECK(std::stod(rows[0][3]) == 0.0);
  CHECK(std::stod(rows.back()[3]) > 1.0);
  CHECK(std::stod(rows.back()[6]) > 1.0);
  CHECK(std::stod(rows.back()[4]) == 1.0);

  put(s / "short.jsonl", t.str().substr(0, 200));
  CHECK(cli("detect --input " + (s / "short.jsonl") + " --out " + (s / "x")) == 2);
}

TEST_CASE("run and report") {
  const auto& s = scratch();
  REQUIRE(cli("run --policy heuristic --scenario oscillating --seed 2 --out " + (s / "run1")) == 0);
  REQUIRE(cli("run --policy static:16 --seed 2 --out " + (s / "run2")) == 0);
  REQUIRE(cli("report --input " + (s / "run1/run.jsonl") + " " + (s / "run2/run.jsonl") + " --out " + (s / "rep")) == 0);

  const auto energy = csv_rows(s / "rep/energy_over_epochs.csv");
  REQUIRE(energy.size() == 16);
  std::map<std::string, double> cum;
  for (const auto& r : energy) {
    CHECK(std::stod(r[3]) >= cum[r[0]]);
    cum[r[0]] = std::stod(r[3]);
  }
  const auto epochs = csv_rows(s / "run1/epochs.csv");
  const auto windows = csv_rows(s / "rep/window_over_epochs.csv");
  for (std::size_t i = 0; i < epochs.size(); ++i) CHECK(windows[i][2] == epochs[i][4]);

  put(s / "mixed.jsonl", R"({"episode":0,"decision":0})" "\n");
  CHECK(cli("report --input " + (s / "run1/run.jsonl") + " " + (s / "mixed.jsonl") + " --out " + (s / "x")) == 2);
}

TEST_CASE("seeded commands are byte-identical across runs") {
  const auto& s = scratch();
  for (const std::string cmd : {"run --policy heuristic --scenario moderate", "evaluate --policy random --episodes 3",
                                "calibrate --synthetic"}) {
    CAPTURE(cmd);
    REQUIRE(cli(cmd + " --seed 11 --out " + (s / "a")) == 0);
    REQUIRE(cli(cmd + " --seed 11 --out " + (s / "b")) == 0);
    for (const auto& e : fs::directory_iterator(s.dir / "a")) {
      if (e.path().filename() == "manifest.json") continue;
      CHECK(slurp(e.path().string()) == slurp((s.dir / "b" / e.path().filename()).string()));
    }
    fs::remove_all(s.dir / "a");
    fs::remove_all(s.dir / "b");
  }
}
