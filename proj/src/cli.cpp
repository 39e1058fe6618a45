#include "socialtraj/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/eval.hpp"
#include "socialtraj/predict.hpp"
#include "socialtraj/svo.hpp"
#include "socialtraj/train.hpp"

namespace socialtraj {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kPrecedence =
    "Settings resolve as: command-line flag > --config file (key = value) > built-in default.";

// String-valued options whose values are merged over a config file.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "key = value file; keys match the long flag names with '-' as '_'");
  }

  void add(const std::string& key, const std::string& help, const std::string& def = "") {
    std::string flag = "--" + key;
    for (char& c : flag)
      if (c == '_') c = '-';
    const std::string text = def.empty() ? help : help + " [default: " + def + "]";
    opts_[key] = app_->add_option(flag, raw_[key], text);
  }

  void add_flag(const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    for (char& c : flag)
      if (c == '_') c = '-';
    flags_[key] = app_->add_flag(flag, help);
  }

  KeyValueConfig resolve() const {
    KeyValueConfig kv;
    if (!config_path_.empty()) kv = KeyValueConfig::load(config_path_);
    for (const auto& [k, opt] : opts_)
      if (opt->count() > 0) kv.set(k, raw_.at(k));
    for (const auto& [k, opt] : flags_)
      if (opt->count() > 0) kv.set(k, "true");
    return kv;
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, std::string> raw_;
  std::map<std::string, CLI::Option*> opts_;
  std::map<std::string, CLI::Option*> flags_;
};

std::string required(const KeyValueConfig& kv, const std::string& key) {
  const std::string v = kv.get_string(key, "");
  if (v.empty()) {
    std::string flag = key;
    for (char& c : flag)
      if (c == '_') c = '-';
    throw UsageError("missing required setting --" + flag);
  }
  return v;
}

std::uint64_t get_seed(const KeyValueConfig& kv, const std::string& key = "seed") {
  const long s = kv.get_int(key, 0);
  if (s < 0) throw UsageError("--" + key + " must be non-negative");
  return static_cast<std::uint64_t>(s);
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw PathError("cannot write '" + path + "'");
  os << text;
  if (!os) throw PathError("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PathError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<Clip> select_split(const KeyValueConfig& kv) {
  const auto clips = read_clips(required(kv, "data"));
  const std::string which = kv.get_string("split", "test");
  if (which == "all") return clips;
  const DatasetSplit s = split_dataset(clips, get_seed(kv, "split_seed"));
  if (which == "train") return s.train;
  if (which == "validation") return s.validation;
  if (which == "test") return s.test;
  throw UsageError("--split must be all, train, validation or test");
}

PredictConfig predict_config(const KeyValueConfig& kv) {
  PredictConfig pc;
  pc.k = static_cast<int>(kv.get_int("k", pc.k));
  pc.n_per_alpha = static_cast<int>(kv.get_int("n_per_alpha", pc.n_per_alpha));
  pc.steps = static_cast<int>(kv.get_int("steps", pc.steps));
  pc.seed = get_seed(kv);
  pc.validate();
  return pc;
}

Model load_model(const std::string& path, bool use_ema) {
  const TrainState st = load_checkpoint(path);
  return use_ema ? ema_model(st) : st.model;
}

// --- commands ----------------------------------------------------------------

void cmd_synth(const KeyValueConfig& kv, std::ostream& out) {
  const double alpha = kv.get_double("alpha", kPi / 4.0);
  if (!(alpha >= 0.0 && alpha <= kHalfPi)) throw UsageError("--alpha must lie in [0, pi/2]");
  const long n = kv.get_int("n", 100);
  if (n < 1) throw UsageError("--n must be >= 1");
  SyntheticScenarioSpec spec;
  spec.true_alpha = alpha;
  spec.noise_std = kv.get_double("noise", 0.05);
  spec.alpha_spread = kv.get_double("spread", 0.0);
  spec.seed = get_seed(kv);
  if (spec.noise_std < 0.0 || spec.alpha_spread < 0.0) throw UsageError("--noise and --spread must be >= 0");
  const std::string kind = kv.get_string("kind", "merge");
  std::vector<Clip> clips;
  if (kind == "mixed") {
    for (int k = 0; k < 3; ++k) {
      spec.scenario_kind = static_cast<ScenarioKind>(k);
      const int count = static_cast<int>(n / 3 + (k < n % 3 ? 1 : 0));
      auto c = generate_synthetic(spec, count);
      clips.insert(clips.end(), c.begin(), c.end());
    }
  } else {
    try {
      spec.scenario_kind = scenario_kind_from_string(kind);
    } catch (const std::exception&) {
      throw UsageError("--kind must be merge, follow, overtake or mixed");
    }
    clips = generate_synthetic(spec, static_cast<int>(n));
  }
  const std::string dir = required(kv, "out");
  write_clips(dir, clips);
  out << "wrote " << clips.size() << " clips to " << dir << "\n";
}

void cmd_train(const KeyValueConfig& kv, std::ostream& out) {
  const auto clips = read_clips(required(kv, "data"));
  const std::string out_dir = required(kv, "out");
  const DatasetSplit split = split_dataset(clips, get_seed(kv, "split_seed"));
  TrainState st;
  const std::string resume = kv.get_string("resume", "");
  if (!resume.empty()) {
    st = load_checkpoint(resume);
    // Only the schedule length may change on resume.
    st.cfg.epochs = static_cast<int>(kv.get_int("epochs", st.cfg.epochs));
    st.cfg.validate();
  } else {
    TrainConfig cfg;
    cfg.apply(kv);
    st = init_training(cfg, split.train);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw PathError("cannot create '" + out_dir + "'");
  const PosteriorCache cache = build_posterior_cache(split.train, st.model);
  const fs::path log_path = fs::path(out_dir) / "loss_log.tsv";
  std::ofstream log;
  if (!resume.empty() && fs::exists(log_path)) {
    log.open(log_path, std::ios::app);
  } else {
    log.open(log_path, std::ios::trunc);
    log << "epoch\tloss\teffective_steps\tmean_posterior_var\n";
  }
  if (!log) throw PathError("cannot write '" + log_path.string() + "'");
  json jlog = json::array();
  const fs::path jlog_path = fs::path(out_dir) / "loss_log.json";
  if (!resume.empty() && fs::exists(jlog_path)) {
    try {
      jlog = json::parse(read_file(jlog_path.string())).at("epochs");
    } catch (const json::exception& e) {
      throw MalformedInputError(std::string("loss log: ") + e.what());
    }
  }
  while (st.epoch < st.cfg.epochs) {
    const EpochStats s = train_epoch(st, split.train, cache);
    log << s.epoch << '\t' << s.loss << '\t' << s.t_eff << '\t' << s.mean_posterior_var << '\n';
    log.flush();
    jlog.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"effective_steps", s.t_eff},
                    {"mean_posterior_var", s.mean_posterior_var}});
    out << "epoch " << s.epoch << " loss " << s.loss << " steps " << s.t_eff << "\n";
  }
  save_checkpoint((fs::path(out_dir) / "checkpoint.strj").string(), st);
  write_file(jlog_path.string(),
             json{{"format", "socialtraj.loss_log"}, {"version", 1}, {"epochs", jlog}}.dump(1));
  out << "saved " << (fs::path(out_dir) / "checkpoint.strj").string() << "\n";
}

void cmd_estimate(const KeyValueConfig& kv, std::ostream& out) {
  const auto clips = read_clips(required(kv, "data"));
  if (clips.empty()) throw UsageError("no clips in --data");
  SvoEstimateConfig cfg;
  cfg.gamma = kv.get_double("gamma", cfg.gamma);
  cfg.run_hmc = !kv.get_bool("no_hmc", false);
  cfg.hmc.seed = get_seed(kv);
  const RewardModel model;
  const EncoderParams enc = EncoderParams::init(0);
  std::map<std::string, std::vector<Clip>> streams;
  if (kv.get_bool("by_source", false)) {
    for (const auto& c : clips) streams[c.meta.source].push_back(c);
  } else {
    streams["all"] = clips;
  }
  std::ostringstream tsv;
  tsv << "stream\tframe\tmu\tsigma2\tmean\tvariance\taccept_rate\n";
  json rows = json::array();
  for (const auto& [name, stream] : streams) {
    for (const auto& p : estimate_svo(stream, cfg, model, enc)) {
      tsv << name << '\t' << p.frame << '\t' << p.posterior.mu << '\t' << p.posterior.sigma2 << '\t'
          << p.posterior.mean() << '\t' << p.posterior.variance() << '\t' << p.accept_rate << '\n';
      rows.push_back({{"stream", name}, {"frame", p.frame}, {"mu", p.posterior.mu},
                      {"sigma2", p.posterior.sigma2}, {"mean", p.posterior.mean()},
                      {"variance", p.posterior.variance()}, {"accept_rate", p.accept_rate},
                      {"flagged", p.posterior.flagged}});
    }
  }
  const std::string prefix = required(kv, "out");
  write_file(prefix + ".tsv", tsv.str());
  write_file(prefix + ".json", json{{"format", "socialtraj.svo_trace"}, {"version", 1}, {"rows", rows}}.dump(1));
  out << "wrote " << prefix << ".tsv\n";
}

void cmd_predict(const KeyValueConfig& kv, std::ostream& out) {
  const Model model = load_model(required(kv, "checkpoint"), !kv.get_bool("no_ema", false));
  const auto clips = select_split(kv);
  PredictConfig pc = predict_config(kv);
  std::vector<ClipPrediction> preds;
  double total = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    pc.seed = get_seed(kv) + i;
    const auto t0 = std::chrono::steady_clock::now();
    const PredictionEnsemble ens = predict_ensemble(clips[i], model, pc);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total += dt;
    ClipPrediction rec = to_record(clips[i].meta.source, ens, dt);
    rec.best_index = select_best(ens, clips[i].target_future).index;
    preds.push_back(std::move(rec));
  }
  write_file(required(kv, "out"), predictions_to_json(preds));
  out << "predicted " << preds.size() << " clips with " << pc.steps << " steps; mean latency "
      << (preds.empty() ? 0.0 : total / preds.size()) << " s\n";
}

void cmd_evaluate(const KeyValueConfig& kv, std::ostream& out) {
  const auto preds = predictions_from_json(read_file(required(kv, "predictions")));
  const auto clips = select_split(kv);
  std::map<std::string, const Clip*> by_source;
  for (const auto& c : clips) by_source[c.meta.source] = &c;
  std::vector<Positions> truths;
  for (const auto& p : preds) {
    auto it = by_source.find(p.source);
    if (it == by_source.end()) throw MalformedInputError("no ground truth for prediction '" + p.source + "'");
    truths.push_back(it->second->target_future);
  }
  const MetricReport r = evaluate(preds, truths);
  const std::vector<std::pair<std::string, MetricReport>> rows{{kv.get_string("name", "model"), r}};
  const std::string prefix = required(kv, "out");
  write_file(prefix + ".tsv", metric_table(rows));
  write_file(prefix + ".json", metric_json(rows));
  out << metric_table(rows);
}

void cmd_ablate(const KeyValueConfig& kv, std::ostream& out) {
  const auto clips = select_split(kv);
  const bool use_ema = !kv.get_bool("no_ema", false);
  std::map<std::string, Model> models;
  for (const std::string fam : {"full", "no-plan", "vanilla"}) {
    std::string key = fam;
    for (char& c : key)
      if (c == '-') c = '_';
    const std::string path = kv.get_string(key, "");
    if (!path.empty() && fs::exists(path)) models[fam] = load_model(path, use_ema);
  }
  std::vector<std::string> variants;
  const std::string v = kv.get_string("variants", "all");
  if (v == "all") {
    variants = default_variants();
  } else {
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) variants.push_back(tok);
  }
  const auto rows = run_ablation_grid(clips, models, variants, predict_config(kv));
  const std::string prefix = required(kv, "out");
  write_file(prefix + ".tsv", ablation_table(rows));
  write_file(prefix + ".json", ablation_json(rows));
  out << ablation_table(rows);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Social-value-aware trajectory prediction"};
  app.footer(kPrecedence);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  auto* synth = app.add_subcommand("synth", "Generate synthetic clips");
  Settings s_synth(synth);
  s_synth.add("kind", "merge, follow, overtake or mixed", "merge");
  s_synth.add("alpha", "true SVO angle in [0, pi/2]", "0.785398");
  s_synth.add("spread", "per-clip alpha drawn from alpha +- spread", "0");
  s_synth.add("n", "number of clips", "100");
  s_synth.add("noise", "position noise std (m)", "0.05");
  s_synth.add("seed", "random seed", "0");
  s_synth.add("out", "output clip directory");

  auto* train = app.add_subcommand("train", "Train the denoiser and encoder");
  Settings s_train(train);
  s_train.add("data", "clip directory");
  s_train.add("out", "output directory for checkpoint.strj and loss logs");
  s_train.add("resume", "checkpoint to continue from");
  s_train.add("epochs", "total epochs", "100");
  s_train.add("batch_size", "minibatch size", "64");
  s_train.add("lr", "learning rate", "0.0002");
  s_train.add("weight_decay", "decoupled weight decay", "0.01");
  s_train.add("ema_decay", "EMA decay", "0.9999");
  s_train.add("grad_clip", "global gradient norm clip", "1.0");
  s_train.add("gamma", "IRL discount", "0.95");
  s_train.add("channels", "denoiser widths, comma separated", "64,128,256,512");
  s_train.add("variant", "full, no-plan or vanilla", "full");
  s_train.add("curriculum", "curriculum step scheduling (true/false)", "true");
  s_train.add("seed", "random seed", "0");
  s_train.add("split_seed", "dataset split seed", "0");

  auto* est = app.add_subcommand("estimate-svo", "Recursive SVO posterior over a clip stream");
  Settings s_est(est);
  s_est.add("data", "clip directory");
  s_est.add("out", "output prefix (.tsv and .json)");
  s_est.add("gamma", "IRL discount", "0.95");
  s_est.add("seed", "HMC seed", "0");
  s_est.add_flag("no_hmc", "skip HMC diagnostics");
  s_est.add_flag("by_source", "one stream per clip source instead of a single stream");

  auto* pred = app.add_subcommand("predict", "Sample trajectory ensembles");
  Settings s_pred(pred);
  s_pred.add("checkpoint", "trained checkpoint");
  s_pred.add("data", "clip directory");
  s_pred.add("split", "all, train, validation or test", "test");
  s_pred.add("split_seed", "dataset split seed", "0");
  s_pred.add("steps", "diffusion steps (strided from 200)", "200");
  s_pred.add("k", "SVO draws", "10");
  s_pred.add("n_per_alpha", "chains per SVO draw", "3");
  s_pred.add("seed", "random seed", "0");
  s_pred.add("out", "prediction file (JSON)");
  s_pred.add_flag("no_ema", "use raw weights instead of the EMA shadow");

  auto* evl = app.add_subcommand("evaluate", "Score predictions against ground truth");
  Settings s_eval(evl);
  s_eval.add("predictions", "prediction file from predict");
  s_eval.add("data", "clip directory");
  s_eval.add("split", "all, train, validation or test", "test");
  s_eval.add("split_seed", "dataset split seed", "0");
  s_eval.add("name", "row label", "model");
  s_eval.add("out", "output prefix (.tsv and .json)");

  auto* abl = app.add_subcommand("ablate", "Run the ablation grid");
  Settings s_abl(abl);
  s_abl.add("full", "checkpoint of the full model");
  s_abl.add("no_plan", "checkpoint trained without the ego plan");
  s_abl.add("vanilla", "checkpoint trained without social inputs");
  s_abl.add("data", "clip directory");
  s_abl.add("split", "all, train, validation or test", "test");
  s_abl.add("split_seed", "dataset split seed", "0");
  s_abl.add("variants", "'all' or a comma list", "all");
  s_abl.add("k", "SVO draws", "10");
  s_abl.add("n_per_alpha", "chains per SVO draw", "3");
  s_abl.add("seed", "random seed", "0");
  s_abl.add("out", "output prefix (.tsv and .json)");
  s_abl.add_flag("no_ema", "use raw weights instead of the EMA shadow");

  for (auto* sub : {synth, train, est, pred, evl, abl}) sub->footer(kPrecedence);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) cmd_synth(s_synth.resolve(), out);
    if (train->parsed()) cmd_train(s_train.resolve(), out);
    if (est->parsed()) cmd_estimate(s_est.resolve(), out);
    if (pred->parsed()) cmd_predict(s_pred.resolve(), out);
    if (evl->parsed()) cmd_evaluate(s_eval.resolve(), out);
    if (abl->parsed()) cmd_ablate(s_abl.resolve(), out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PathError& e) {
    err << "path error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace socialtraj
