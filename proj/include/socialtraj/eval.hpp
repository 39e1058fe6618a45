#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/predict.hpp"
#include "socialtraj/train.hpp"

namespace socialtraj {

double ade(const Positions& pred, const Positions& truth);
double fde(const Positions& pred, const Positions& truth);

// Pooled over clips and the steps up to horizon_s seconds.
double rmse_horizon(const std::vector<Positions>& preds, const std::vector<Positions>& truths,
                    int horizon_s);

struct MetricReport {
  double ade = 0.0;  // of the ensemble mean
  double fde = 0.0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::map<int, double> rmse_at;  // horizon seconds -> meters
  int n_clips = 0;
};

// Per-clip prediction record, the unit exchanged between predict and evaluate.
struct ClipPrediction {
  std::string source;
  std::vector<Mat> samples;
  std::vector<double> alphas;
  Mat mean;
  std::vector<double> trace_total, trace_aleatoric, trace_epistemic;
  int steps = 0;
  double latency_s = 0.0;
  std::optional<int> best_index;
};

ClipPrediction to_record(const std::string& source, const PredictionEnsemble& ens, double latency_s);

MetricReport evaluate(const std::vector<ClipPrediction>& preds, const std::vector<Positions>& truths);

std::string predictions_to_json(const std::vector<ClipPrediction>& preds);
std::vector<ClipPrediction> predictions_from_json(const std::string& text);

struct AblationRow {
  std::string variant;
  MetricReport report;
  int steps = 0;
  double latency_s = 0.0;  // mean per clip
  bool skipped = false;
  std::string reason;
};

// Default variant list, in table order.
std::vector<std::string> default_variants();

// Checkpoint families: "full", "no-plan", "vanilla". Missing families skip
// their variants with a reason.
std::vector<AblationRow> run_ablation_grid(const std::vector<Clip>& clips,
                                           const std::map<std::string, Model>& models,
                                           const std::vector<std::string>& variants,
                                           const PredictConfig& base);

// Delimited tables with a header row, and JSON mirrors.
std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows, char delim = '\t');
std::string ablation_table(const std::vector<AblationRow>& rows, char delim = '\t',
                           bool with_latency = true);
std::string metric_json(const std::vector<std::pair<std::string, MetricReport>>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace socialtraj
