#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "socialtraj/cli.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/eval.hpp"

using namespace socialtraj;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
};

std::string binary() {
  const char* b = std::getenv("SOCIALTRAJ_BIN");
  return b ? b : "socialtraj";
}

// Runs the installed binary; stderr is folded into the captured output.
Result run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Same through the library entry point.
Result run_in_process(std::vector<std::string> args) {
  args.insert(args.begin(), "socialtraj");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str() + err.str();
  return r;
}

std::string read(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = read(e.path());
  return m;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("socialtraj_cli_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

const char* kTinyTrain = " --channels 4,4,4,4 --batch-size 4 --seed 2";

}  // namespace

TEST_CASE("help and usage errors") {
  auto r = run("--help");
  CHECK(r.code == 0);
  CHECK(r.out.find("synth") != std::string::npos);
  r = run("train --help");
  CHECK(r.code == 0);
  CHECK(r.out.find("command-line flag > --config file") != std::string::npos);
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("synth --n 3").code == 2);  // no --out
  CHECK(run("synth --bogus 1 --out /tmp/x").code == 2);
  CHECK(run_in_process({"predict", "--k", "1", "--checkpoint", "x", "--data", "y", "--out", "z"}).code == 3);
}

TEST_CASE("synth writes the requested clips deterministically") {
  TempDir tmp("synth");
  auto r = run("synth --kind merge --alpha 0.785 --n 100 --seed 1 --out " + tmp / "a");
  REQUIRE(r.code == 0);
  const auto clips = read_clips(tmp / "a");
  CHECK(clips.size() == 100);
  for (const auto& c : clips) {
    REQUIRE(c.meta.true_alpha.has_value());
    CHECK(*c.meta.true_alpha == 0.785);
    CHECK(c.meta.kind == "merge");
  }
  REQUIRE(run("synth --kind merge --alpha 0.785 --n 100 --seed 1 --out " + tmp / "b").code == 0);
  CHECK(dir_contents(tmp.path / "a") == dir_contents(tmp.path / "b"));
  REQUIRE(run("synth --kind merge --alpha 0.785 --n 100 --seed 2 --out " + tmp / "c").code == 0);
  CHECK(dir_contents(tmp.path / "a") != dir_contents(tmp.path / "c"));

  r = run("synth --alpha 3.0 --out " + tmp / "d");
  CHECK(r.code == 2);
  CHECK(r.out.find("alpha") != std::string::npos);
  CHECK(run("synth --alpha -0.1 --out " + tmp / "d").code == 2);
  CHECK(run("synth --kind roundabout --out " + tmp / "d").code == 2);

  REQUIRE(run("synth --kind mixed --n 7 --out " + tmp / "m").code == 0);
  std::map<std::string, int> kinds;
  for (const auto& c : read_clips(tmp / "m")) ++kinds[c.meta.kind];
  CHECK(kinds["merge"] == 3);
  CHECK(kinds["follow"] == 2);
  CHECK(kinds["overtake"] == 2);
}

TEST_CASE("config file values sit between flags and defaults") {
  TempDir tmp("config");
  {
    std::ofstream f(tmp / "synth.cfg");
    f << "# synthetic run\nn = 4\nalpha = 0.5\nkind = follow\n";
  }
  REQUIRE(run("synth --config " + tmp / "synth.cfg" + " --n 2 --out " + tmp / "a").code == 0);
  const auto clips = read_clips(tmp / "a");
  CHECK(clips.size() == 2);
  CHECK(*clips[0].meta.true_alpha == 0.5);
  CHECK(clips[0].meta.kind == "follow");
  CHECK(run("synth --config " + tmp / "missing.cfg" + " --out " + tmp / "b").code == 3);
}

TEST_CASE("train, resume, predict, evaluate and ablate end to end") {
  TempDir tmp("pipeline");
  REQUIRE(run("synth --kind mixed --n 12 --spread 0.5 --seed 3 --out " + tmp / "data").code == 0);

  const auto t0 = std::chrono::steady_clock::now();
  auto r = run("train --data " + tmp / "data" + " --out " + tmp / "run" + " --epochs 6" + kTinyTrain);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(r.code == 0);
  CHECK(secs < 300.0);
  CHECK(fs::exists(tmp / "run/checkpoint.strj"));
  auto log = lines(read(tmp / "run/loss_log.tsv"));
  REQUIRE(log.size() == 7);
  CHECK(log[0] == "epoch\tloss\teffective_steps\tmean_posterior_var");
  int prev_steps = 0;
  for (int i = 1; i < 7; ++i) {
    std::istringstream is(log[i]);
    int epoch = -1, steps = 0;
    double loss = 0.0;
    is >> epoch >> loss >> steps;
    CHECK(epoch == i - 1);
    CHECK(steps >= prev_steps);
    prev_steps = steps;
  }
  const auto jlog = json::parse(read(tmp / "run/loss_log.json"));
  CHECK(jlog.at("format") == "socialtraj.loss_log");
  CHECK(jlog.at("epochs").size() == 6);

  // Resume continues the epoch numbering.
  r = run("train --data " + tmp / "data" + " --out " + tmp / "run" + " --resume " + tmp / "run/checkpoint.strj" +
          " --epochs 8");
  REQUIRE(r.code == 0);
  log = lines(read(tmp / "run/loss_log.tsv"));
  REQUIRE(log.size() == 9);
  CHECK(log[7].rfind("6\t", 0) == 0);
  CHECK(log[8].rfind("7\t", 0) == 0);
  CHECK(json::parse(read(tmp / "run/loss_log.json")).at("epochs").size() == 8);

  // Both step counts succeed and report their latency.
  const std::string ck = tmp / "run/checkpoint.strj";
  const std::string common = " --checkpoint " + ck + " --data " + tmp / "data" + " --k 2 --n-per-alpha 2 --seed 4";
  r = run("predict" + common + " --steps 120 --out " + tmp / "p120.json");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("120 steps; mean latency") != std::string::npos);
  r = run("predict" + common + " --steps 200 --out " + tmp / "p200.json");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("200 steps; mean latency") != std::string::npos);
  const auto preds = predictions_from_json(read(tmp / "p200.json"));
  REQUIRE(!preds.empty());
  CHECK(preds[0].steps == 200);
  CHECK(preds[0].samples.size() == 4);
  CHECK(preds[0].best_index.has_value());
  // Deterministic given the flags, apart from the measured latency.
  REQUIRE(run("predict" + common + " --steps 200 --out " + tmp / "p200b.json").code == 0);
  const auto again = predictions_from_json(read(tmp / "p200b.json"));
  REQUIRE(again.size() == preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(again[i].mean == preds[i].mean);
    CHECK(again[i].alphas == preds[i].alphas);
  }

  r = run("evaluate --predictions " + tmp / "p200.json" + " --data " + tmp / "data" + " --out " + tmp / "eval");
  REQUIRE(r.code == 0);
  const auto table = lines(read(tmp / "eval.tsv"));
  REQUIRE(table.size() == 2);
  CHECK(table[0].rfind("name\tmin_ade", 0) == 0);
  CHECK(json::parse(read(tmp / "eval.json")).at("rows").size() == 1);

  // Predictions equal to the ground truth score zero everywhere.
  const auto test_clips = split_dataset(read_clips(tmp / "data"), 0).test;
  std::vector<ClipPrediction> perfect;
  for (const auto& c : test_clips) {
    ClipPrediction p;
    p.source = c.meta.source;
    p.samples = {c.target_future, c.target_future};
    p.alphas = {0.5, 0.5};
    p.mean = c.target_future;
    perfect.push_back(p);
  }
  {
    std::ofstream f(tmp / "perfect.json");
    f << predictions_to_json(perfect);
  }
  r = run("evaluate --predictions " + tmp / "perfect.json" + " --data " + tmp / "data" + " --out " + tmp / "zero");
  REQUIRE(r.code == 0);
  const auto z = json::parse(read(tmp / "zero.json")).at("rows");
  for (const char* key : {"ade", "fde", "min_ade", "min_fde"}) CHECK(z[0].at(key).get<double>() == 0.0);
  for (const auto& [h, v] : z[0].at("rmse_at").items()) CHECK(v.get<double>() == 0.0);

  // Full grid with only the full family: 7 rows, two of them skipped.
  r = run("ablate --full " + ck + " --data " + tmp / "data" + " --variants all --k 2 --n-per-alpha 2 --out " +
          tmp / "abl");
  REQUIRE(r.code == 0);
  const auto abl = lines(read(tmp / "abl.tsv"));
  REQUIRE(abl.size() == 8);
  int skipped = 0;
  for (const auto& l : abl) skipped += l.find("skipped") != std::string::npos;
  CHECK(skipped == 2);
  CHECK(run("ablate --full " + ck + " --data " + tmp / "data" + " --variants fixed-30 --out " + tmp / "x").code == 2);

  // Module errors surface as nonzero exits.
  CHECK(run("predict --checkpoint " + tmp / "nope.strj" + " --data " + tmp / "data" + " --out " + tmp / "q.json")
            .code == 3);
  {
    std::ofstream f(tmp / "junk.strj");
    f << "junk";
  }
  CHECK(run("predict --checkpoint " + tmp / "junk.strj" + " --data " + tmp / "data" + " --out " + tmp / "q.json")
            .code == 1);
  CHECK(run("predict --checkpoint " + ck + " --data " + tmp / "data" + " --steps 0 --out " + tmp / "q.json").code ==
        2);
}

TEST_CASE("unreadable inputs are path errors") {
  TempDir tmp("paths");
  CHECK(run("train --data " + tmp / "absent" + " --out " + tmp / "run").code == 3);
  CHECK(run("estimate-svo --data " + tmp / "absent" + " --out " + tmp / "svo").code == 3);
  CHECK(run("evaluate --predictions " + tmp / "absent.json" + " --data " + tmp / "absent" + " --out " + tmp / "e")
            .code == 3);
}

TEST_CASE("estimate-svo writes a posterior trace") {
  TempDir tmp("svo");
  REQUIRE(run("synth --kind merge --alpha 0.2 --n 4 --noise 0 --seed 5 --out " + tmp / "data").code == 0);
  auto r = run("estimate-svo --data " + tmp / "data" + " --out " + tmp / "svo --seed 1");
  REQUIRE(r.code == 0);
  const auto rows = lines(read(tmp / "svo.tsv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "stream\tframe\tmu\tsigma2\tmean\tvariance\taccept_rate");
  const auto j = json::parse(read(tmp / "svo.json"));
  CHECK(j.at("format") == "socialtraj.svo_trace");
  REQUIRE(j.at("rows").size() == 4);
  for (const auto& row : j.at("rows")) {
    CHECK(row.at("mean").get<double>() >= 0.0);
    CHECK(row.at("mean").get<double>() <= kHalfPi);
    CHECK(row.at("accept_rate").get<double>() > 0.0);
  }
  // Same flags, same bytes.
  REQUIRE(run("estimate-svo --data " + tmp / "data" + " --out " + tmp / "svo2 --seed 1").code == 0);
  CHECK(read(tmp / "svo.tsv") == read(tmp / "svo2.tsv"));
  REQUIRE(run("estimate-svo --data " + tmp / "data" + " --out " + tmp / "svo3 --by-source --no-hmc").code == 0);
  CHECK(lines(read(tmp / "svo3.tsv")).size() == 5);
}
