#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"
#include "socialtraj/encoder.hpp"
#include "socialtraj/nn.hpp"

namespace socialtraj {

inline constexpr int kReferenceSteps = 200;

struct NoiseSchedule {
  int T_s = 0;
  std::vector<double> beta;       // [0] unused (0), [1..T_s]
  std::vector<double> alpha_bar;  // [0] = 1
  // Timestep fed to the network for step t, on the reference 200-step clock.
  std::vector<double> net_t;

  double alpha(int t) const { return 1.0 - beta[t]; }
};

NoiseSchedule cosine_schedule(int T_s, double s = 0.008, int ref_steps = kReferenceSteps);

// Evenly strided subset of `steps` steps of base (always keeps step T_s).
NoiseSchedule respace(const NoiseSchedule& base, int steps);

void validate_schedule(const NoiseSchedule& sched);

Mat q_sample(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& sched);

Mat reverse_step(const Mat& x_t, int t, const Mat& eps_hat, const NoiseSchedule& sched,
                 const Mat& zeta);

int curriculum_steps(double posterior_var, int lo_steps = 100, int hi_steps = 200);

Vec timestep_embedding(double t, int dim = 64);

struct ConditioningSet {
  Vec history_ctx;
  Vec ego_ctx;
  Vec plan_emb;
  Vec svo_emb;
  Vec t_emb;

  // Everything except t_emb, in fusion order.
  Vec static_part() const;
};

struct DenoiserConfig {
  std::vector<int> channels{64, 128, 256, 512};
  std::vector<int> dilations{1, 2, 4, 8};
  int cond_dim = 64;
  int ctx_dim = 64;
  int plan_dim = 64;
  int svo_dim = 16;
  int t_dim = 64;

  int static_dim() const { return 2 * ctx_dim + plan_dim + svo_dim; }
  int fused_in() const { return static_dim() + t_dim; }
};

struct DenoiserParams {
  DenoiserConfig cfg;
  Param W_plan, b_plan;  // plan_dim x (2 * kFutureLen)
  Param W_svo, b_svo;    // svo_dim x 2
  Param W_fuse, b_fuse;  // cond_dim x fused_in
  std::vector<nn::ResBlock> enc;
  nn::ResBlock mid;
  std::vector<nn::ResBlock> dec;
  nn::Conv1d out;

  static DenoiserParams init(const DenoiserConfig& cfg, std::uint64_t seed);
  std::vector<NamedParam> named(const std::string& prefix = "denoiser.");
  void zero_grad();
};

// T_f x 2 trajectories <-> 2 x (B * T_f) activation layout.
Mat stack_trajectories(const std::vector<Mat>& xs);
std::vector<Mat> unstack_trajectories(const Mat& X, int length = kFutureLen);

struct DenoiserTape {
  Mat Z, pre, e;
  std::vector<nn::ResBlock::Tape> enc, dec;
  nn::ResBlock::Tape mid;
  Mat cols_out;
  std::vector<int> enc_ch;
};

// X: 2 x (B * T_f) noisy trajectories; Z: fused_in x B conditioning inputs.
Mat denoiser_forward(const DenoiserParams& p, const Mat& X, const Mat& Z, DenoiserTape* tape);
// Accumulates parameter gradients, returns d(loss)/dZ.
Mat denoiser_backward(DenoiserParams& p, const DenoiserTape& tape, const Mat& dOut);

Vec fused_input(const ConditioningSet& cond);

// Single-item noise prediction; t is on the reference clock.
Mat denoise_eps(const Mat& x_t, double t, ConditioningSet cond, const DenoiserParams& params);

// Rewrites eps_hat so the implied clean sample lies in [-limit, limit].
// Keeps the near-singular last steps of a clipped schedule from amplifying
// small prediction errors.
Mat clip_eps_to_x0(const Mat& x_t, int t, const Mat& eps_hat, const NoiseSchedule& sched,
                   double limit);

// Batched reverse chains; chain i draws from Rng(seed, chain_ids[i]).
// x0_clip <= 0 runs the plain chain.
std::vector<Mat> sample_batch(const Mat& static_cond, const NoiseSchedule& sched,
                              const DenoiserParams& params, std::uint64_t seed,
                              const std::vector<std::uint64_t>& chain_ids, double x0_clip = 0.0);

Mat sample(const ConditioningSet& cond, const NoiseSchedule& sched, const DenoiserParams& params,
           std::uint64_t seed, double x0_clip = 0.0);

struct LossItem {
  Mat x0;               // T_f x 2, standardized
  Vec static_cond;      // static conditioning vector
  std::uint64_t stream; // per-item random stream id
};

// Replaces the network prediction (test hook): (x_t, t, eps) -> eps_hat.
using EpsOverride = std::function<Mat(const Mat&, int, const Mat&)>;

struct LossResult {
  double loss = 0.0;  // mean over items of the summed squared error
  Mat d_static;       // static_dim x B, gradient wrt static conditioning
  std::vector<int> t; // drawn steps
};

LossResult diffusion_loss(const std::vector<LossItem>& batch, const NoiseSchedule& sched,
                          DenoiserParams& params, std::uint64_t seed, bool with_grad,
                          const EpsOverride* hook = nullptr);

}  // namespace socialtraj
