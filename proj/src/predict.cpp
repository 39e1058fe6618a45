#include "socialtraj/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "socialtraj/eval.hpp"

namespace socialtraj {

CovarianceSplit decompose_covariance(const std::vector<std::vector<Mat>>& groups) {
  if (groups.empty() || groups[0].empty()) throw std::invalid_argument("decompose_covariance: no samples");
  const int T = static_cast<int>(groups[0][0].rows());
  const int G = static_cast<int>(groups.size());
  CovarianceSplit out;
  out.mean = Mat::Zero(T, 2);
  out.total.assign(T, Cov2::Zero());
  out.aleatoric.assign(T, Cov2::Zero());
  out.epistemic.assign(T, Cov2::Zero());
  std::vector<Mat> gmean(G);
  for (int g = 0; g < G; ++g) {
    if (groups[g].empty()) throw std::invalid_argument("decompose_covariance: empty group");
    gmean[g] = Mat::Zero(T, 2);
    for (const auto& s : groups[g]) {
      if (s.rows() != T || s.cols() != 2) throw ShapeError("decompose_covariance: sample shape");
      gmean[g] += s;
    }
    gmean[g] /= static_cast<double>(groups[g].size());
    out.mean += gmean[g];
  }
  out.mean /= G;
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector2d m = out.mean.row(t).transpose();
    for (int g = 0; g < G; ++g) {
      const Eigen::Vector2d mg = gmean[g].row(t).transpose();
      Cov2 within = Cov2::Zero();
      for (const auto& s : groups[g]) {
        const Eigen::Vector2d d = s.row(t).transpose() - mg;
        within += d * d.transpose();
      }
      out.aleatoric[t] += within / static_cast<double>(groups[g].size());
      const Eigen::Vector2d d = mg - m;
      out.epistemic[t] += d * d.transpose();
    }
    out.aleatoric[t] /= G;
    out.epistemic[t] /= G;
    out.total[t] = out.aleatoric[t] + out.epistemic[t];
  }
  return out;
}

void PredictConfig::validate() const {
  if (k < 2) throw ConfigError("predict: k must be >= 2");
  if (n_per_alpha < 2) throw ConfigError("predict: n_per_alpha must be >= 2");
  if (steps < 1 || steps > kReferenceSteps)
    throw ConfigError("predict: steps must lie in [1, " + std::to_string(kReferenceSteps) + "]");
  if (!(posterior_scale > 0.0)) throw ConfigError("predict: posterior_scale must be positive");
  hmc.validate();
}

PredictionEnsemble predict_ensemble(const Clip& clip, const Model& model, const PredictConfig& cfg) {
  cfg.validate();
  validate_clip(clip);
  PredictionEnsemble ens;
  ens.steps = cfg.steps;
  ens.posterior = window_posteriors(clip, model).back();
  ens.posterior.sigma2 *= cfg.posterior_scale * cfg.posterior_scale;

  SvoSource source = cfg.override_svo ? cfg.svo_source : model.variant.svo_source;
  if (model.variant.vanilla) source = SvoSource::kNone;
  std::vector<double> draws(cfg.k, std::numeric_limits<double>::quiet_NaN());
  if (source == SvoSource::kPosteriorSample) {
    HmcConfig h = cfg.hmc;
    h.seed = cfg.seed;
    const HmcResult res = hmc_sample(ens.posterior, h);
    ens.hmc_accept = res.accept_rate;
    const int n = static_cast<int>(res.draws.size());
    for (int i = 0; i < cfg.k; ++i) draws[i] = res.draws[static_cast<long>(i) * n / cfg.k];
  } else if (source == SvoSource::kFixed) {
    const double a = cfg.override_svo ? cfg.fixed_alpha : model.variant.fixed_alpha;
    std::fill(draws.begin(), draws.end(), a);
  }
  const bool all_same = std::all_of(draws.begin(), draws.end(), [&](double a) {
    return (std::isnan(a) && std::isnan(draws[0])) || a == draws[0];
  });
  ens.degenerate = all_same;

  const int total = cfg.k * cfg.n_per_alpha;
  Mat static_cond(model.denoiser.cfg.static_dim(), total);
  for (int g = 0; g < cfg.k; ++g) {
    const SvoSource s = source == SvoSource::kNone ? SvoSource::kNone : SvoSource::kFixed;
    const ConditioningSet cs = prepare_conditioning(clip, model, s, draws[g], nullptr, nullptr,
                                                    model.variant.no_plan);
    const Vec sp = cs.static_part();
    for (int j = 0; j < cfg.n_per_alpha; ++j) static_cond.col(g * cfg.n_per_alpha + j) = sp;
  }
  std::vector<std::uint64_t> ids(total);
  for (int i = 0; i < total; ++i) ids[i] = static_cast<std::uint64_t>(i);
  const NoiseSchedule sched = respace(cosine_schedule(kReferenceSteps), cfg.steps);
  const auto raw = sample_batch(static_cond, sched, model.denoiser, cfg.seed, ids, cfg.x0_clip);

  std::vector<std::vector<Mat>> groups(all_same ? 1 : cfg.k);
  for (int i = 0; i < total; ++i) {
    const int g = i / cfg.n_per_alpha;
    ens.samples.push_back(destandardize_future(raw[i], model.norm));
    ens.alphas.push_back(draws[g]);
    ens.group.push_back(all_same ? 0 : g);
    groups[all_same ? 0 : g].push_back(ens.samples.back());
  }
  auto split = decompose_covariance(groups);
  ens.mean = std::move(split.mean);
  ens.total = std::move(split.total);
  ens.aleatoric = std::move(split.aleatoric);
  ens.epistemic = std::move(split.epistemic);
  return ens;
}

BestSample select_best(const std::vector<Mat>& samples, const Positions& truth) {
  if (samples.empty()) throw std::invalid_argument("select_best: no samples");
  BestSample b;
  b.min_ade = std::numeric_limits<double>::infinity();
  b.min_fde = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    const double a = ade(samples[i], truth);
    if (a < b.min_ade) {
      b.min_ade = a;
      b.index = i;
    }
    b.min_fde = std::min(b.min_fde, fde(samples[i], truth));
  }
  return b;
}

BestSample select_best(const PredictionEnsemble& ens, const Positions& truth) {
  return select_best(ens.samples, truth);
}

}  // namespace socialtraj
