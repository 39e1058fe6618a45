#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/svo.hpp"
#include "socialtraj/train.hpp"

namespace socialtraj {

using Cov2 = Eigen::Matrix2d;

struct CovarianceSplit {
  Mat mean;  // T_f x 2
  std::vector<Cov2> total, aleatoric, epistemic;
};

// groups[g][j] is sample j (T_f x 2) of alpha-group g. Aleatoric is the mean
// within-group covariance, epistemic the covariance of group means, total their sum.
CovarianceSplit decompose_covariance(const std::vector<std::vector<Mat>>& groups);

struct PredictConfig {
  int k = 10;
  int n_per_alpha = 3;
  int steps = kReferenceSteps;
  std::uint64_t seed = 0;
  HmcConfig hmc;
  // Overrides the model's SVO source (fixed-alpha ablations).
  bool override_svo = false;
  SvoSource svo_source = SvoSource::kPosteriorSample;
  double fixed_alpha = kPi / 4.0;
  // Bound on the implied clean sample during reverse steps (standardized
  // units); <= 0 disables.
  double x0_clip = 5.0;
  // Multiplies the posterior scale before drawing.
  double posterior_scale = 1.0;

  void validate() const;
};

struct PredictionEnsemble {
  std::vector<Mat> samples;     // K * n_per_alpha trajectories, draw-major
  std::vector<double> alphas;   // alpha of each sample (NaN when unused)
  std::vector<int> group;       // alpha-group of each sample
  Mat mean;
  std::vector<Cov2> total, aleatoric, epistemic;
  SvoPosterior posterior;
  bool degenerate = false;  // a single alpha group, epistemic forced to zero
  int steps = 0;
  double hmc_accept = 0.0;
};

PredictionEnsemble predict_ensemble(const Clip& clip, const Model& model, const PredictConfig& cfg);

struct BestSample {
  int index = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
};

BestSample select_best(const std::vector<Mat>& samples, const Positions& truth);
BestSample select_best(const PredictionEnsemble& ens, const Positions& truth);

}  // namespace socialtraj
