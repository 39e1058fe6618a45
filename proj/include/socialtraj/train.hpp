#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/diffusion.hpp"
#include "socialtraj/encoder.hpp"
#include "socialtraj/svo.hpp"

namespace socialtraj {

enum class SvoSource { kPosteriorSample, kFixed, kNone };

std::string to_string(SvoSource s);
SvoSource svo_source_from_string(const std::string& s);

// How a model family builds its conditioning. Stored with the checkpoint.
struct VariantFlags {
  SvoSource svo_source = SvoSource::kPosteriorSample;
  double fixed_alpha = kPi / 4.0;
  bool no_plan = false;
  // Drops every social input: ego context, plan and SVO.
  bool vanilla = false;
};

struct TrainConfig {
  int batch_size = 64;
  double lr = 2e-4;
  double weight_decay = 0.01;
  double ema_decay = 0.9999;
  double grad_clip = 1.0;
  int epochs = 100;
  std::uint64_t seed = 0;
  bool curriculum_enabled = true;
  double gamma = 0.95;
  DenoiserConfig denoiser;
  VariantFlags variant;

  void validate() const;
  // Keys: batch_size, lr, weight_decay, ema_decay, grad_clip, epochs, seed,
  // curriculum, gamma, channels (comma list), variant (full|no-plan|vanilla).
  void apply(const KeyValueConfig& kv);
};

// Standardization constants fitted on the training split.
struct Normalization {
  std::array<double, 4> enc_mean{0, 0, 0, 0};
  std::array<double, 4> enc_std{1, 1, 1, 1};
  Mat future_mean = Mat::Zero(kFutureLen, 2);
  Mat future_std = Mat::Ones(kFutureLen, 2);
  Mat plan_mean = Mat::Zero(kFutureLen, 2);
  Mat plan_std = Mat::Ones(kFutureLen, 2);
};

inline constexpr double kNormStdFloor = 1e-2;

Normalization fit_normalization(const std::vector<Clip>& clips);

struct Model {
  EncoderParams encoder;
  DenoiserParams denoiser;
  Normalization norm;
  RewardModel reward;
  VariantFlags variant;
  double gamma = 0.95;
  int last_t_eff = kReferenceSteps;

  static Model init(const TrainConfig& cfg, const Normalization& norm);
  std::vector<NamedParam> named();
};

// Records what prepare_conditioning needs for the backward pass.
struct ConditioningTape {
  EncoderTape history, ego;
  Vec plan_in;  // standardized flattened plan
  Vec svo_in;   // [cos, sin]
  bool ego_used = false, plan_used = false, svo_used = false;
};

// Inverse-CDF draw from a truncated-normal posterior.
double draw_alpha(const SvoPosterior& posterior, Rng& rng);

// `alpha` is used for kFixed; for kPosteriorSample a draw is taken from
// `posterior` with `rng`. Writes the alpha actually used to *alpha_used.
ConditioningSet prepare_conditioning(const Clip& clip, const Model& model, SvoSource source,
                                     double alpha, const SvoPosterior* posterior, Rng* rng,
                                     bool no_plan, ConditioningTape* tape = nullptr,
                                     double* alpha_used = nullptr);

// Same with the model's own variant flags.
ConditioningSet prepare_conditioning(const Clip& clip, const Model& model,
                                     const SvoPosterior* posterior, Rng* rng,
                                     ConditioningTape* tape = nullptr,
                                     double* alpha_used = nullptr);

// Accumulates encoder and embedding gradients from d(loss)/d(static part).
void conditioning_backward(const ConditioningTape& tape, const Vec& d_static, Model& model);

Mat standardize_future(const Positions& future, const Normalization& norm);
Positions destandardize_future(const Mat& x, const Normalization& norm);

inline constexpr int kCurriculumWindows = 3;

// Posterior after 0..3 history sub-windows of 5 steps, updated recursively.
std::vector<SvoPosterior> window_posteriors(const Clip& clip, const Model& model,
                                            const SvoPosterior& prior = default_prior());

struct OptimizerState {
  std::vector<Mat> m, v, ema;
  long step = 0;
};

struct TrainState {
  Model model;
  OptimizerState opt;
  TrainConfig cfg;
  int epoch = 0;  // completed epochs
};

TrainState init_training(const TrainConfig& cfg, const std::vector<Clip>& train_clips);

// Posterior cache for the training split, one row per clip.
using PosteriorCache = std::vector<std::vector<SvoPosterior>>;
PosteriorCache build_posterior_cache(const std::vector<Clip>& clips, const Model& model);

// Curriculum window count and step count used by the next epoch.
int curriculum_window(int epoch, int epochs);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  int t_eff = kReferenceSteps;
  double mean_posterior_var = 0.0;
  int steps = 0;
};

// One AdamW step from the gradients held in the params (clipped to global
// norm cfg.grad_clip), then the EMA update.
void optimizer_step(TrainState& st);

EpochStats train_epoch(TrainState& st, const std::vector<Clip>& clips, const PosteriorCache& cache);

// Model with the EMA shadow weights swapped in.
Model ema_model(const TrainState& st);

// Rounds every persistent value to float precision.
void round_state(TrainState& st);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TrainState& st);
TrainState load_checkpoint(const std::string& path);

}  // namespace socialtraj
