#include "socialtraj/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace socialtraj {

using json = nlohmann::json;

namespace {

void check_pair(const Positions& pred, const Positions& truth, const char* what) {
  if (pred.rows() != truth.rows() || pred.cols() != 2 || truth.cols() != 2 || pred.rows() == 0)
    throw ShapeError(std::string(what) + ": prediction and truth shapes differ");
}

}  // namespace

double ade(const Positions& pred, const Positions& truth) {
  check_pair(pred, truth, "ade");
  return (pred - truth).rowwise().norm().mean();
}

double fde(const Positions& pred, const Positions& truth) {
  check_pair(pred, truth, "fde");
  const auto n = pred.rows() - 1;
  return (pred.row(n) - truth.row(n)).norm();
}

double rmse_horizon(const std::vector<Positions>& preds, const std::vector<Positions>& truths,
                    int horizon_s) {
  if (preds.empty()) throw UndefinedMetricError("rmse_horizon: no clips");
  if (preds.size() != truths.size()) throw ShapeError("rmse_horizon: clip count mismatch");
  if (horizon_s < 1 || horizon_s > 5) throw std::invalid_argument("rmse_horizon: horizon must lie in 1..5 s");
  const int steps = horizon_s * static_cast<int>(kClipHz);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_pair(preds[i], truths[i], "rmse_horizon");
    if (preds[i].rows() < steps) throw std::invalid_argument("rmse_horizon: horizon beyond prediction");
    sum += (preds[i].topRows(steps) - truths[i].topRows(steps)).squaredNorm();
  }
  return std::sqrt(sum / (static_cast<double>(steps) * preds.size()));
}

ClipPrediction to_record(const std::string& source, const PredictionEnsemble& ens, double latency_s) {
  ClipPrediction r;
  r.source = source;
  r.samples = ens.samples;
  r.alphas = ens.alphas;
  r.mean = ens.mean;
  for (std::size_t t = 0; t < ens.total.size(); ++t) {
    r.trace_total.push_back(ens.total[t].trace());
    r.trace_aleatoric.push_back(ens.aleatoric[t].trace());
    r.trace_epistemic.push_back(ens.epistemic[t].trace());
  }
  r.steps = ens.steps;
  r.latency_s = latency_s;
  return r;
}

MetricReport evaluate(const std::vector<ClipPrediction>& preds, const std::vector<Positions>& truths) {
  if (preds.empty()) throw UndefinedMetricError("evaluate: no predictions");
  if (preds.size() != truths.size()) throw ShapeError("evaluate: prediction/truth count mismatch");
  MetricReport r;
  std::vector<Positions> means;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.ade += ade(preds[i].mean, truths[i]);
    r.fde += fde(preds[i].mean, truths[i]);
    const BestSample b = select_best(preds[i].samples, truths[i]);
    r.min_ade += b.min_ade;
    r.min_fde += b.min_fde;
    means.push_back(preds[i].mean);
  }
  const double n = static_cast<double>(preds.size());
  r.ade /= n;
  r.fde /= n;
  r.min_ade /= n;
  r.min_fde /= n;
  const int max_h = static_cast<int>(truths[0].rows()) / static_cast<int>(kClipHz);
  for (int h = 1; h <= std::min(5, max_h); ++h) r.rmse_at[h] = rmse_horizon(means, truths, h);
  r.n_clips = static_cast<int>(preds.size());
  return r;
}

// --- prediction records ------------------------------------------------------

namespace {

json mat_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back({m(i, 0), m(i, 1)});
  return rows;
}

Mat mat_from(const json& j) {
  Mat m(j.size(), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    m(i, 0) = j[i].at(0).get<double>();
    m(i, 1) = j[i].at(1).get<double>();
  }
  return m;
}

}  // namespace

std::string predictions_to_json(const std::vector<ClipPrediction>& preds) {
  json recs = json::array();
  for (const auto& p : preds) {
    json samples = json::array(), alphas = json::array();
    for (const auto& s : p.samples) samples.push_back(mat_json(s));
    for (double a : p.alphas) alphas.push_back(std::isnan(a) ? json(nullptr) : json(a));
    json r = {{"source", p.source},
              {"steps", p.steps},
              {"latency_s", p.latency_s},
              {"alphas", alphas},
              {"samples", samples},
              {"mean", mat_json(p.mean)},
              {"trace_total", p.trace_total},
              {"trace_aleatoric", p.trace_aleatoric},
              {"trace_epistemic", p.trace_epistemic}};
    r["best_index"] = p.best_index ? json(*p.best_index) : json(nullptr);
    recs.push_back(r);
  }
  return json{{"format", "socialtraj.predictions"}, {"version", 1}, {"records", recs}}.dump(1);
}

std::vector<ClipPrediction> predictions_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "socialtraj.predictions") throw MalformedInputError("not a prediction file");
    if (j.at("version") != 1) throw MalformedInputError("unsupported prediction file version");
    std::vector<ClipPrediction> out;
    for (const auto& r : j.at("records")) {
      ClipPrediction p;
      p.source = r.at("source").get<std::string>();
      p.steps = r.at("steps").get<int>();
      p.latency_s = r.at("latency_s").get<double>();
      for (const auto& a : r.at("alphas"))
        p.alphas.push_back(a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>());
      for (const auto& s : r.at("samples")) p.samples.push_back(mat_from(s));
      p.mean = mat_from(r.at("mean"));
      p.trace_total = r.at("trace_total").get<std::vector<double>>();
      p.trace_aleatoric = r.at("trace_aleatoric").get<std::vector<double>>();
      p.trace_epistemic = r.at("trace_epistemic").get<std::vector<double>>();
      if (!r.at("best_index").is_null()) p.best_index = r.at("best_index").get<int>();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw MalformedInputError(std::string("prediction file: ") + e.what());
  }
}

// --- ablation grid -----------------------------------------------------------

std::vector<std::string> default_variants() {
  return {"vanilla", "fixed-0", "fixed-45", "fixed-90", "no-plan", "full-120", "full-200"};
}

namespace {

struct VariantPlan {
  std::string family;
  int steps = kReferenceSteps;
  bool fixed = false;
  double alpha = 0.0;
};

VariantPlan plan_for(const std::string& v) {
  if (v == "vanilla") return {"vanilla"};
  if (v == "no-plan") return {"no-plan"};
  if (v == "full-120") return {"full", 120};
  if (v == "full-200") return {"full", 200};
  if (v == "fixed-0") return {"full", kReferenceSteps, true, 0.0};
  if (v == "fixed-45") return {"full", kReferenceSteps, true, kPi / 4.0};
  if (v == "fixed-90") return {"full", kReferenceSteps, true, kHalfPi};
  throw UsageError("unknown ablation variant '" + v + "'");
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const std::vector<Clip>& clips,
                                           const std::map<std::string, Model>& models,
                                           const std::vector<std::string>& variants,
                                           const PredictConfig& base) {
  if (clips.empty()) throw UndefinedMetricError("ablation: no clips");
  std::vector<AblationRow> rows;
  std::vector<Positions> truths;
  for (const auto& c : clips) truths.push_back(c.target_future);
  for (const auto& v : variants) {
    const VariantPlan plan = plan_for(v);
    AblationRow row;
    row.variant = v;
    row.steps = plan.steps;
    auto it = models.find(plan.family);
    if (it == models.end()) {
      row.skipped = true;
      row.reason = "no '" + plan.family + "' checkpoint";
      rows.push_back(row);
      continue;
    }
    PredictConfig pc = base;
    pc.steps = plan.steps;
    if (plan.fixed) {
      pc.override_svo = true;
      pc.svo_source = SvoSource::kFixed;
      pc.fixed_alpha = plan.alpha;
    }
    std::vector<ClipPrediction> preds;
    double latency = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      pc.seed = base.seed + i;
      const auto t0 = std::chrono::steady_clock::now();
      const PredictionEnsemble ens = predict_ensemble(clips[i], it->second, pc);
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      latency += dt;
      preds.push_back(to_record(clips[i].meta.source, ens, dt));
    }
    row.report = evaluate(preds, truths);
    row.latency_s = latency / clips.size();
    rows.push_back(row);
  }
  return rows;
}

// --- tables ------------------------------------------------------------------

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

void metric_cells(std::ostringstream& os, const MetricReport& r, char d) {
  os << d << num(r.ade) << d << num(r.fde);
  for (int h = 1; h <= 5; ++h) {
    auto it = r.rmse_at.find(h);
    os << d << (it == r.rmse_at.end() ? std::string("nan") : num(it->second));
  }
  os << d << r.n_clips;
}

const char* kMetricTail = "ade\tfde\trmse_1s\trmse_2s\trmse_3s\trmse_4s\trmse_5s\tn_clips";

std::string with_delim(std::string s, char d) {
  for (char& c : s)
    if (c == '\t') c = d;
  return s;
}

json report_json(const MetricReport& r) {
  json rm = json::object();
  for (const auto& [h, v] : r.rmse_at) rm[std::to_string(h)] = v;
  return {{"ade", r.ade},         {"fde", r.fde},     {"min_ade", r.min_ade},
          {"min_fde", r.min_fde}, {"rmse_at", rm},    {"n_clips", r.n_clips}};
}

}  // namespace

std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows, char d) {
  std::ostringstream os;
  os << with_delim(std::string("name\tmin_ade\tmin_fde\t") + kMetricTail, d) << '\n';
  for (const auto& [name, r] : rows) {
    os << name << d << num(r.min_ade) << d << num(r.min_fde);
    metric_cells(os, r, d);
    os << '\n';
  }
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows, char d, bool with_latency) {
  std::ostringstream os;
  os << with_delim(std::string("variant\tmin_ade\tmin_fde\tsteps") + (with_latency ? "\tlatency_s\t" : "\t") +
                       kMetricTail + "\tstatus",
                   d)
     << '\n';
  for (const auto& r : rows) {
    os << r.variant << d;
    if (r.skipped) {
      os << "nan" << d << "nan" << d << r.steps;
      if (with_latency) os << d << "nan";
      for (int i = 0; i < 8; ++i) os << d << "nan";
      os << d << "skipped: " << r.reason << '\n';
      continue;
    }
    os << num(r.report.min_ade) << d << num(r.report.min_fde) << d << r.steps;
    if (with_latency) os << d << num(r.latency_s);
    metric_cells(os, r.report, d);
    os << d << "ok\n";
  }
  return os.str();
}

std::string metric_json(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  json arr = json::array();
  for (const auto& [name, r] : rows) {
    json j = report_json(r);
    j["name"] = name;
    arr.push_back(j);
  }
  return json{{"format", "socialtraj.metrics"}, {"version", 1}, {"rows", arr}}.dump(1);
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j = {{"variant", r.variant}, {"steps", r.steps}, {"skipped", r.skipped}};
    if (r.skipped) {
      j["reason"] = r.reason;
    } else {
      j["report"] = report_json(r.report);
      j["latency_s"] = r.latency_s;
    }
    arr.push_back(j);
  }
  return json{{"format", "socialtraj.ablation"}, {"version", 1}, {"rows", arr}}.dump(1);
}

}  // namespace socialtraj
