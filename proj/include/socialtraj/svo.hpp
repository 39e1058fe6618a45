#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/encoder.hpp"

namespace socialtraj {

// Evenly spaced actions lo, lo + spacing, ... (count points). Each action
// stands for a cell of width `spacing`, so the grid covers an interval of
// length count * spacing.
struct ActionGrid {
  double lo = -3.0;
  double spacing = 1.0;
  int count = 7;

  double value(int k) const { return lo + spacing * k; }
  double length() const { return spacing * count; }
  // Cell-centered grid covering [a, b] with cells of width h.
  static ActionGrid covering(double a, double b, double h);
};

struct FeatureStandardization {
  double mean_i = 0.0;
  double std_i = 1.0;
  double mean_g = 0.0;
  double std_g = 1.0;
};

// Frozen constants measured on the reference synthetic population: 200 clips
// of each scenario kind, alpha uniform on [0, pi/2], seed 0, all candidate
// actions at every history step. The generator uses them too, so they are the
// fixed point of fit-then-regenerate.
FeatureStandardization reference_standardization();

struct RewardModel {
  double w1 = 0.5;  // speed tracking
  double w2 = 0.1;  // comfort
  double w3 = 1.0;  // headway hinge
  double w4 = 0.2;  // closing speed
  double h_safe = 10.0;
  // Features are evaluated at the state reached by holding the action this long.
  double preview_s = 2.0;
  double lane_half_width = 2.0;
  double neighbor_radius = 30.0;
  // Frames behind the lateral-rate estimate of neighbors.
  int lateral_rate_frames = 2;
  FeatureStandardization standardization = reference_standardization();
  // Boltzmann rationality multiplying the reward in the likelihood.
  double rationality = 100.0;
  // Per-feature gates 1 + tanh(u . c_t); zero vectors leave features unchanged.
  Vec gate_i;
  Vec gate_g;
  ActionGrid actions;
};

struct NeighborState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double vy = 0.0;  // lateral rate
};

struct RewardFeatures {
  double r_i = 0.0;
  double r_g = 0.0;
};

// Unstandardized features of taking `action` from `sv` with desired speed v_des.
RewardFeatures raw_reward_features(const KinematicState& sv, double action, double v_des,
                                   const std::vector<NeighborState>& neighbors,
                                   const RewardModel& model);

// Ego and neighbor histories at history step t. Lateral rates are the
// least-squares slope over the last rate_frames steps inside the history.
std::vector<NeighborState> neighbors_at(const Clip& clip, int t, int rate_frames = 1);
double desired_speed(const Clip& clip);

RewardFeatures standardize(const RewardFeatures& raw, const Vec& c_t, const RewardModel& model);

RewardFeatures reward_features(const Vec& c_t, const Clip& clip, int t, const RewardModel& model);
RewardFeatures reward_features(const Vec& c_t, const Clip& clip, int t, double action,
                               const RewardModel& model);

double step_reward(const RewardFeatures& f, double alpha);

double svo_angle_from_expectations(double e_g, double e_i);

FeatureStandardization fit_standardization(const std::vector<Clip>& clips,
                                           const RewardModel& model);

// --- Laplace-approximated partition function ---------------------------------

// Reward of a whole action sequence, given as grid indices.
using SequenceReward = std::function<double(const std::vector<int>&)>;

struct LaplaceResult {
  double log_z = 0.0;
  double max_reward = 0.0;
  std::vector<int> mode;
  bool clamped = false;  // some curvature was non-negative and got clamped
  int sweeps = 0;
};

inline constexpr double kCurvatureFloor = 1e-6;

// Coordinate ascent to the reward-maximizing sequence, then per step a
// quadratic model at each local maximum of the conditional reward profile
// (slope and curvature from second differences, one-sided at grid edges),
// summed over that maximum's basin of the action lattice. With a single
// maximum this is the plain expansion around the mode.
LaplaceResult laplace_log_partition(const SequenceReward& reward, const ActionGrid& grid,
                                    int n_steps);

// Standardized features of every candidate action and of the observed action
// at each step of a window of the target history.
struct ClipEvidence {
  int t_begin = 0;
  std::vector<RewardFeatures> observed;
  std::vector<std::vector<RewardFeatures>> candidates;

  int steps() const { return static_cast<int>(observed.size()); }
};

ClipEvidence clip_evidence(const Clip& clip, const RewardModel& model, const EncoderParams& encoder,
                           int t_begin = 0, int t_end = kHistoryLen);

// Discounted, rationality-scaled reward of a candidate sequence in a window.
SequenceReward evidence_reward(const ClipEvidence& ev, double alpha, double gamma,
                               const RewardModel& model);

double log_partition_laplace(const ClipEvidence& ev, double alpha, double gamma,
                             const RewardModel& model, LaplaceResult* diag = nullptr);
double log_likelihood(const ClipEvidence& ev, double alpha, double gamma, const RewardModel& model,
                      LaplaceResult* diag = nullptr);
double log_likelihood(const Clip& clip, double alpha, double gamma, const RewardModel& model,
                      const EncoderParams& encoder);

// --- Truncated-Gaussian posterior --------------------------------------------

inline constexpr int kPosteriorGrid = 512;

// TN_[lo,hi](mu, sigma2): mu and sigma2 are the location and squared scale of
// the truncated normal (equal to its moments only when truncation is negligible).
struct SvoPosterior {
  double mu = kPi / 4.0;
  double sigma2 = 0.25;
  double lo = 0.0;
  double hi = kHalfPi;
  int k = 0;
  bool flagged = false;  // last update found no usable likelihood

  double log_density(double alpha) const;  // unnormalized
  double mean() const;
  double variance() const;
};

SvoPosterior default_prior();

using LogLikelihoodFn = std::function<double(double)>;

SvoPosterior bayes_update(const SvoPosterior& prior, const LogLikelihoodFn& loglik);
SvoPosterior bayes_update(const SvoPosterior& prior, const Clip& clip, double gamma,
                          const RewardModel& model, const EncoderParams& encoder);

// Quadrature moments of TN(mu, sigma2) on n evenly spaced points in [a, b].
std::array<double, 2> tn_grid_moments(double mu, double sigma2, double a, double b, int n);

// --- HMC ---------------------------------------------------------------------

struct HmcConfig {
  int n_samples = 200;
  int burn_in = 200;
  int leapfrog_steps = 10;
  double step_size0 = 1.0;
  double adapt_rate = 0.01;
  double target_accept = 0.65;
  // Per-iteration step size is drawn from [1-jitter, 1+jitter] times the
  // adapted value; breaks periodic orbits of a fixed trajectory length.
  double jitter = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Returns log density at alpha and writes its derivative.
using LogDensityFn = std::function<double(double, double*)>;

struct HmcResult {
  std::vector<double> draws;
  double accept_rate = 0.0;  // mean acceptance probability over retained iterations
  double step_size = 0.0;    // adapted step size used after burn-in
  int nonfinite_rejections = 0;
};

HmcResult hmc_sample(const LogDensityFn& target, double lo, double hi, double init,
                     const HmcConfig& cfg);
HmcResult hmc_sample(const SvoPosterior& posterior, const HmcConfig& cfg);

// --- Streams -----------------------------------------------------------------

struct SvoEstimateConfig {
  SvoPosterior prior = default_prior();
  double gamma = 0.95;
  bool run_hmc = true;
  HmcConfig hmc;
};

struct SvoTracePoint {
  int frame = 0;
  SvoPosterior posterior;
  double accept_rate = 0.0;
};

std::vector<SvoTracePoint> estimate_svo(const std::vector<Clip>& stream, const SvoEstimateConfig& cfg,
                                        const RewardModel& model, const EncoderParams& encoder);

// Grid argmax of sum of log-likelihoods minus lambda * alpha^2.
double regularized_mle(const std::vector<ClipEvidence>& evidence, double gamma,
                       const RewardModel& model, double lambda, int grid_points = 257);

}  // namespace socialtraj
