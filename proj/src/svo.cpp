#include "socialtraj/svo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace socialtraj {

ActionGrid ActionGrid::covering(double a, double b, double h) {
  ActionGrid g;
  g.count = std::max(1, static_cast<int>(std::lround((b - a) / h)));
  g.spacing = (b - a) / g.count;
  g.lo = a + 0.5 * g.spacing;
  return g;
}

FeatureStandardization reference_standardization() {
  FeatureStandardization s;
  s.mean_i = -8.6323;
  s.std_i = 7.7924;
  s.mean_g = -1.4538;
  s.std_g = 1.9956;
  return s;
}

RewardFeatures raw_reward_features(const KinematicState& sv, double action, double v_des,
                                   const std::vector<NeighborState>& neighbors,
                                   const RewardModel& model) {
  const double T = model.preview_s;
  double v1 = sv.v + action * T;
  double x1 = sv.x + sv.v * T + 0.5 * action * T * T;
  if (v1 < 0.0) {
    // stops before the preview horizon ends
    const double t_stop = -sv.v / action;
    v1 = 0.0;
    x1 = sv.x + sv.v * t_stop + 0.5 * action * t_stop * t_stop;
  }
  RewardFeatures f;
  f.r_i = -model.w1 * (v1 - v_des) * (v1 - v_des) - model.w2 * action * action;
  if (neighbors.empty()) return f;

  double gap = std::numeric_limits<double>::infinity();
  const NeighborState* leader = nullptr;
  const NeighborState* nearest = nullptr;
  double nearest_d = model.neighbor_radius;
  for (const auto& n : neighbors) {
    const double nx = n.x + n.v * T;
    const double ny = n.y + n.vy * T;
    if (nx > x1 && std::abs(ny - sv.y) < model.lane_half_width && nx - x1 < gap) {
      gap = nx - x1;
      leader = &n;
    }
    const double d = std::hypot(nx - x1, ny - sv.y);
    if (d <= nearest_d) {
      nearest_d = d;
      nearest = &n;
    }
  }
  const NeighborState* partner = leader ? leader : nearest;
  if (leader) f.r_g -= model.w3 * std::max(0.0, model.h_safe - gap);
  if (partner) f.r_g -= model.w4 * std::abs(v1 - partner->v);
  return f;
}

std::vector<NeighborState> neighbors_at(const Clip& clip, int t, int rate_frames) {
  std::vector<NeighborState> out;
  auto add = [&](const Trajectory& tr) {
    if (t >= tr.size()) return;
    NeighborState n;
    const auto& s = tr.states[t];
    n.x = s.x;
    n.y = s.y;
    n.v = s.v;
    // least-squares slope over up to rate_frames + 1 frames ending at t
    int a = std::max(0, t - std::max(1, rate_frames)), b = t;
    if (a == b) b = std::min(tr.size() - 1, a + 1);
    if (b > a) {
      const double tm = 0.5 * (a + b);
      double num = 0.0, den = 0.0;
      for (int i = a; i <= b; ++i) {
        num += (i - tm) * tr.states[i].y;
        den += (i - tm) * (i - tm);
      }
      n.vy = num / den / tr.dt;
    }
    out.push_back(n);
  };
  if (clip.ego_history.size() > 0) add(clip.ego_history);
  for (const auto& nb : clip.neighbor_histories) add(nb);
  return out;
}

double desired_speed(const Clip& clip) { return clip.target_history.states.front().v; }

RewardFeatures standardize(const RewardFeatures& raw, const Vec& c_t, const RewardModel& model) {
  const auto& s = model.standardization;
  RewardFeatures f;
  f.r_i = (raw.r_i - s.mean_i) / s.std_i;
  f.r_g = (raw.r_g - s.mean_g) / s.std_g;
  if (model.gate_i.size() > 0 && model.gate_i.size() == c_t.size())
    f.r_i *= 1.0 + std::tanh(model.gate_i.dot(c_t));
  if (model.gate_g.size() > 0 && model.gate_g.size() == c_t.size())
    f.r_g *= 1.0 + std::tanh(model.gate_g.dot(c_t));
  return f;
}

RewardFeatures reward_features(const Vec& c_t, const Clip& clip, int t, double action,
                               const RewardModel& model) {
  if (t < 0 || t >= clip.target_history.size())
    throw std::out_of_range("reward_features: step outside history");
  const auto raw = raw_reward_features(clip.target_history.states[t], action, desired_speed(clip),
                                       neighbors_at(clip, t, model.lateral_rate_frames), model);
  return standardize(raw, c_t, model);
}

RewardFeatures reward_features(const Vec& c_t, const Clip& clip, int t, const RewardModel& model) {
  if (t < 0 || t >= clip.target_history.size())
    throw std::out_of_range("reward_features: step outside history");
  return reward_features(c_t, clip, t, clip.target_history.states[t].a, model);
}

double step_reward(const RewardFeatures& f, double alpha) {
  return f.r_i * std::cos(alpha) + f.r_g * std::sin(alpha);
}

double svo_angle_from_expectations(double e_g, double e_i) {
  if (e_g == 0.0 && e_i == 0.0)
    throw UndefinedOrientationError("svo angle undefined when both expectations are zero");
  double a = std::atan2(e_g, e_i);
  if (a < 0.0) a += 2.0 * kPi;
  return a;
}

FeatureStandardization fit_standardization(const std::vector<Clip>& clips,
                                           const RewardModel& model) {
  double si = 0, sii = 0, sg = 0, sgg = 0;
  long n = 0;
  for (const auto& clip : clips) {
    const double vd = desired_speed(clip);
    for (int t = 0; t < clip.target_history.size(); ++t) {
      const auto nbs = neighbors_at(clip, t, model.lateral_rate_frames);
      for (int k = 0; k < model.actions.count; ++k) {
        const auto f = raw_reward_features(clip.target_history.states[t], model.actions.value(k), vd,
                                           nbs, model);
        si += f.r_i;
        sii += f.r_i * f.r_i;
        sg += f.r_g;
        sgg += f.r_g * f.r_g;
        ++n;
      }
    }
  }
  FeatureStandardization s;
  if (n == 0) return s;
  s.mean_i = si / n;
  s.mean_g = sg / n;
  s.std_i = std::sqrt(std::max(0.0, sii / n - s.mean_i * s.mean_i));
  s.std_g = std::sqrt(std::max(0.0, sgg / n - s.mean_g * s.mean_g));
  if (s.std_i < 1e-9) s.std_i = 1.0;
  if (s.std_g < 1e-9) s.std_g = 1.0;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

LaplaceResult laplace_log_partition(const SequenceReward& reward, const ActionGrid& grid,
                                    int n_steps) {
  LaplaceResult res;
  const int n = grid.count;
  res.mode.assign(n_steps, n / 2);
  double best = reward(res.mode);
  bool changed = true;
  while (changed && res.sweeps < 100) {
    changed = false;
    ++res.sweeps;
    for (int j = 0; j < n_steps; ++j) {
      std::vector<int> trial = res.mode;
      for (int k = 0; k < n; ++k) {
        if (k == res.mode[j]) continue;
        trial[j] = k;
        const double r = reward(trial);
        if (r > best) {
          best = r;
          res.mode[j] = k;
          changed = true;
        }
      }
    }
  }
  res.max_reward = best;
  res.log_z = best;

  // Each step: expand around every local maximum of the conditional reward
  // profile and sum that expansion over the maximum's basin of the lattice.
  std::vector<double> terms, r(n);
  for (int j = 0; j < n_steps; ++j) {
    if (n == 1) {
      res.log_z += std::log(grid.spacing);
      continue;
    }
    std::vector<int> s = res.mode;
    for (int k = 0; k < n; ++k) {
      s[j] = k;
      r[k] = reward(s);
    }
    std::vector<int> peaks;
    for (int k = 0; k < n; ++k)
      if ((k == 0 || r[k] > r[k - 1]) && (k == n - 1 || r[k] >= r[k + 1])) peaks.push_back(k);
    terms.clear();
    int basin_lo = 0;
    for (std::size_t p = 0; p < peaks.size(); ++p) {
      const int m = peaks[p];
      int basin_hi = n - 1;
      if (p + 1 < peaks.size()) {
        basin_hi = m;
        for (int k = m; k <= peaks[p + 1]; ++k)
          if (r[k] < r[basin_hi]) basin_hi = k;
      }
      double g = 0.0, c = 0.0;
      if (n == 2) {
        g = r[1] - r[0];
      } else if (m == 0) {
        c = -(r[2] - 2.0 * r[1] + r[0]);
        g = (r[1] - r[0]) + 0.5 * c;
      } else if (m == n - 1) {
        c = -(r[n - 3] - 2.0 * r[n - 2] + r[n - 1]);
        g = -((r[n - 2] - r[n - 1]) + 0.5 * c);
      } else {
        c = -(r[m + 1] - 2.0 * r[m] + r[m - 1]);
        g = 0.5 * (r[m + 1] - r[m - 1]);
      }
      if (!(c > kCurvatureFloor)) {
        c = kCurvatureFloor;
        res.clamped = true;
      }
      for (int k = basin_lo; k <= basin_hi; ++k) {
        const double d = k - m;
        terms.push_back(r[m] - best + g * d - 0.5 * c * d * d);
      }
      basin_lo = basin_hi + 1;
    }
    res.log_z += log_sum_exp(terms) + std::log(grid.spacing);
  }
  return res;
}

ClipEvidence clip_evidence(const Clip& clip, const RewardModel& model, const EncoderParams& encoder,
                           int t_begin, int t_end) {
  const int H = clip.target_history.size();
  t_end = std::min(t_end, H);
  if (t_begin < 0 || t_begin >= t_end) throw std::invalid_argument("clip_evidence: empty window");
  Mat ctx;
  const bool gated = (model.gate_i.size() > 0 && model.gate_i.cwiseAbs().maxCoeff() > 0.0) ||
                     (model.gate_g.size() > 0 && model.gate_g.cwiseAbs().maxCoeff() > 0.0);
  if (gated) ctx = attention(embed(clip.target_history, encoder), encoder).C;

  ClipEvidence ev;
  ev.t_begin = t_begin;
  const double vd = desired_speed(clip);
  for (int t = t_begin; t < t_end; ++t) {
    const Vec c_t = gated ? Vec(ctx.row(t).transpose()) : Vec();
    const auto nbs = neighbors_at(clip, t, model.lateral_rate_frames);
    const auto& st = clip.target_history.states[t];
    ev.observed.push_back(standardize(raw_reward_features(st, st.a, vd, nbs, model), c_t, model));
    std::vector<RewardFeatures> cand;
    for (int k = 0; k < model.actions.count; ++k)
      cand.push_back(
          standardize(raw_reward_features(st, model.actions.value(k), vd, nbs, model), c_t, model));
    ev.candidates.push_back(std::move(cand));
  }
  return ev;
}

SequenceReward evidence_reward(const ClipEvidence& ev, double alpha, double gamma,
                               const RewardModel& model) {
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  std::vector<std::vector<double>> table(ev.steps());
  double w = model.rationality;
  for (int t = 0; t < ev.steps(); ++t) {
    for (const auto& f : ev.candidates[t]) table[t].push_back(w * (f.r_i * ca + f.r_g * sa));
    w *= gamma;
  }
  return [table = std::move(table)](const std::vector<int>& idx) {
    double r = 0.0;
    for (std::size_t t = 0; t < idx.size(); ++t) r += table[t][idx[t]];
    return r;
  };
}

double log_partition_laplace(const ClipEvidence& ev, double alpha, double gamma,
                             const RewardModel& model, LaplaceResult* diag) {
  auto res = laplace_log_partition(evidence_reward(ev, alpha, gamma, model), model.actions,
                                   ev.steps());
  if (diag) *diag = res;
  return res.log_z;
}

double log_likelihood(const ClipEvidence& ev, double alpha, double gamma, const RewardModel& model,
                      LaplaceResult* diag) {
  double r = 0.0, w = model.rationality;
  for (int t = 0; t < ev.steps(); ++t) {
    r += w * step_reward(ev.observed[t], alpha);
    w *= gamma;
  }
  return r - log_partition_laplace(ev, alpha, gamma, model, diag);
}

double log_likelihood(const Clip& clip, double alpha, double gamma, const RewardModel& model,
                      const EncoderParams& encoder) {
  return log_likelihood(clip_evidence(clip, model, encoder), alpha, gamma, model);
}

// ---------------------------------------------------------------------------

namespace {

// Trapezoid-weighted grid on [a, b].
struct QuadGrid {
  std::vector<double> x, w;
  QuadGrid(double a, double b, int n) : x(n), w(n) {
    const double h = (b - a) / (n - 1);
    for (int i = 0; i < n; ++i) {
      x[i] = a + h * i;
      w[i] = (i == 0 || i == n - 1) ? 0.5 * h : h;
    }
  }
};

std::array<double, 2> weighted_moments(const QuadGrid& g, const std::vector<double>& logp) {
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logp) m = std::max(m, l);
  double z = 0, s1 = 0;
  std::vector<double> p(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) {
    p[i] = g.w[i] * std::exp(logp[i] - m);
    z += p[i];
    s1 += p[i] * g.x[i];
  }
  const double mean = s1 / z;
  double s2 = 0;
  for (std::size_t i = 0; i < logp.size(); ++i) s2 += p[i] * (g.x[i] - mean) * (g.x[i] - mean);
  return {mean, s2 / z};
}

std::array<double, 2> tn_moments_on(const QuadGrid& g, double mu, double sigma2) {
  std::vector<double> lp(g.x.size());
  for (std::size_t i = 0; i < lp.size(); ++i) lp[i] = -(g.x[i] - mu) * (g.x[i] - mu) / (2 * sigma2);
  return weighted_moments(g, lp);
}

// Finds TN location/scale whose grid moments equal (m, v).
std::array<double, 2> refit_tn(const QuadGrid& g, double m, double v, double lo, double hi) {
  const double sd_t = std::sqrt(v);
  auto resid = [&](double mu, double ls) {
    const auto mm = tn_moments_on(g, mu, std::exp(2 * ls));
    return std::array<double, 2>{(mm[0] - m) / sd_t, (mm[1] - v) / v};
  };
  auto norm = [](const std::array<double, 2>& r) { return std::hypot(r[0], r[1]); };
  double mu = m, ls = 0.5 * std::log(v);
  auto r = resid(mu, ls);
  for (int it = 0; it < 200 && norm(r) > 1e-13; ++it) {
    const double hm = 1e-6 * std::exp(ls), hl = 1e-6;
    const auto rmp = resid(mu + hm, ls), rmm = resid(mu - hm, ls);
    const auto rlp = resid(mu, ls + hl), rlm = resid(mu, ls - hl);
    const double j00 = (rmp[0] - rmm[0]) / (2 * hm), j10 = (rmp[1] - rmm[1]) / (2 * hm);
    const double j01 = (rlp[0] - rlm[0]) / (2 * hl), j11 = (rlp[1] - rlm[1]) / (2 * hl);
    const double det = j00 * j11 - j01 * j10;
    if (!std::isfinite(det) || std::abs(det) < 1e-300) break;
    const double dmu = -(j11 * r[0] - j01 * r[1]) / det;
    const double dls = -(-j10 * r[0] + j00 * r[1]) / det;
    double step = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      const double nls = ls + step * dls;
      if (nls > 5.0 || nls < -30.0) continue;
      const auto nr = resid(mu + step * dmu, nls);
      if (norm(nr) < norm(r)) {
        mu += step * dmu;
        ls = nls;
        r = nr;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (mu < lo || mu > hi) {
    // location pinned to the support edge; match the mean with the scale alone
    mu = std::clamp(mu, lo, hi);
    double a = -30.0, b = 5.0;
    const bool increasing = (mu == lo);
    for (int it = 0; it < 200; ++it) {
      const double c = 0.5 * (a + b);
      const double mc = tn_moments_on(g, mu, std::exp(2 * c))[0];
      if ((mc < m) == increasing)
        a = c;
      else
        b = c;
    }
    ls = 0.5 * (a + b);
  }
  return {mu, std::exp(2 * ls)};
}

}  // namespace

std::array<double, 2> tn_grid_moments(double mu, double sigma2, double a, double b, int n) {
  return tn_moments_on(QuadGrid(a, b, n), mu, sigma2);
}

double SvoPosterior::log_density(double alpha) const {
  if (alpha < lo || alpha > hi) return -std::numeric_limits<double>::infinity();
  return -(alpha - mu) * (alpha - mu) / (2.0 * sigma2);
}

namespace {
std::array<double, 2> posterior_moments(const SvoPosterior& p) {
  const double s = std::sqrt(p.sigma2);
  const double a = std::max(p.lo, p.mu - 12 * s), b = std::min(p.hi, p.mu + 12 * s);
  if (b - a < 1e-300) return {p.mu, 0.0};
  return tn_grid_moments(p.mu, p.sigma2, a, b, 4097);
}
}  // namespace

double SvoPosterior::mean() const { return posterior_moments(*this)[0]; }
double SvoPosterior::variance() const { return posterior_moments(*this)[1]; }

SvoPosterior default_prior() { return SvoPosterior{}; }

SvoPosterior bayes_update(const SvoPosterior& prior, const LogLikelihoodFn& loglik) {
  double a = prior.lo, b = prior.hi;
  std::array<double, 2> mom{};
  QuadGrid grid(a, b, kPosteriorGrid);
  for (int refine = 0;; ++refine) {
    grid = QuadGrid(a, b, kPosteriorGrid);
    std::vector<double> lp(kPosteriorGrid);
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kPosteriorGrid; ++i) {
      const double l = loglik(grid.x[i]);
      lp[i] = std::isnan(l) ? -std::numeric_limits<double>::infinity()
                            : prior.log_density(grid.x[i]) + l;
      best = std::max(best, lp[i]);
    }
    if (!std::isfinite(best)) {
      SvoPosterior out = prior;
      out.flagged = true;
      return out;
    }
    mom = weighted_moments(grid, lp);
    const double h = (b - a) / (kPosteriorGrid - 1);
    const double sd = std::sqrt(mom[1]);
    // Resolve posteriors narrower than a few grid cells on a zoomed grid.
    if (sd >= 8 * h || refine >= 4 || h < 1e-9) break;
    const double half = 12 * std::max(sd, h);
    a = std::max(prior.lo, mom[0] - half);
    b = std::min(prior.hi, mom[0] + half);
  }
  SvoPosterior out = prior;
  out.flagged = false;
  if (!(mom[1] > 0.0)) mom[1] = 1e-18;
  const auto fit = refit_tn(grid, mom[0], mom[1], prior.lo, prior.hi);
  out.mu = fit[0];
  out.sigma2 = fit[1];
  out.k = prior.k + 1;
  return out;
}

SvoPosterior bayes_update(const SvoPosterior& prior, const Clip& clip, double gamma,
                          const RewardModel& model, const EncoderParams& encoder) {
  const ClipEvidence ev = clip_evidence(clip, model, encoder);
  return bayes_update(prior, [&](double a) { return log_likelihood(ev, a, gamma, model); });
}

// ---------------------------------------------------------------------------

void HmcConfig::validate() const {
  if (n_samples < 1 || burn_in < 0 || leapfrog_steps < 1)
    throw ConfigError("hmc: sample, burn-in and leapfrog counts must be positive");
  if (!(step_size0 > 0.0)) throw ConfigError("hmc: step_size0 must be positive");
  if (!(adapt_rate > 0.0)) throw ConfigError("hmc: adapt_rate must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ConfigError("hmc: target_accept must lie in (0, 1)");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("hmc: jitter must lie in [0, 1)");
}

namespace {

// Folds x into [lo, hi] by mirror reflection; flips p once per wall bounce.
void reflect(double& x, double& p, double lo, double hi) {
  if (x >= lo && x <= hi) return;
  const double w = hi - lo;
  const double t = (x - lo) / w;
  const double n = std::floor(t);
  const double r = t - n;
  const bool odd = std::fmod(std::abs(n), 2.0) == 1.0;
  x = odd ? lo + (1.0 - r) * w : lo + r * w;
  if (odd) p = -p;
}

}  // namespace

HmcResult hmc_sample(const LogDensityFn& target, double lo, double hi, double init,
                     const HmcConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 0x686d63);
  HmcResult res;
  double q = std::clamp(init, lo, hi);
  double gq = 0.0;
  double lq = target(q, &gq);
  if (!std::isfinite(lq) || !std::isfinite(gq)) throw NumericError("hmc: initial point not evaluable");

  double log_eps = std::log(cfg.step_size0);
  std::vector<double> burn_log_eps;
  double log_eps_final = log_eps;
  double acc_sum = 0.0;
  const int total = cfg.burn_in + cfg.n_samples;
  for (int it = 0; it < total; ++it) {
    const bool burning = it < cfg.burn_in;
    const double base = burning ? log_eps : log_eps_final;
    const double eps = std::exp(base) * rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    const double p0 = rng.gauss();
    double p = p0, x = q, gx = gq, lx = lq;
    bool finite = true;
    p += 0.5 * eps * gx;
    for (int l = 0; l < cfg.leapfrog_steps; ++l) {
      x += eps * p;
      reflect(x, p, lo, hi);
      lx = target(x, &gx);
      if (!std::isfinite(gx) || !std::isfinite(lx)) {
        finite = false;
        break;
      }
      p += (l + 1 < cfg.leapfrog_steps ? 1.0 : 0.5) * eps * gx;
    }
    double accept = 0.0;
    if (finite) {
      const double dh = (-lx + 0.5 * p * p) - (-lq + 0.5 * p0 * p0);
      accept = dh <= 0.0 ? 1.0 : std::exp(-dh);
      if (!std::isfinite(accept)) accept = 0.0;
    } else {
      ++res.nonfinite_rejections;
    }
    if (rng.uniform() < accept) {
      q = x;
      lq = lx;
      gq = gx;
    }
    if (burning) {
      log_eps += (accept - cfg.target_accept) / (1.0 + cfg.adapt_rate * it);
      burn_log_eps.push_back(log_eps);
      if (it + 1 == cfg.burn_in) {
        const std::size_t half = burn_log_eps.size() / 2;
        double s = 0.0;
        for (std::size_t i = half; i < burn_log_eps.size(); ++i) s += burn_log_eps[i];
        log_eps_final = s / static_cast<double>(burn_log_eps.size() - half);
      }
    } else {
      res.draws.push_back(q);
      acc_sum += accept;
    }
  }
  if (cfg.burn_in == 0) log_eps_final = log_eps;
  res.accept_rate = acc_sum / cfg.n_samples;
  res.step_size = std::exp(log_eps_final);
  return res;
}

HmcResult hmc_sample(const SvoPosterior& posterior, const HmcConfig& cfg) {
  const double mu = posterior.mu, s2 = posterior.sigma2;
  return hmc_sample(
      [mu, s2](double a, double* g) {
        *g = -(a - mu) / s2;
        return -(a - mu) * (a - mu) / (2 * s2);
      },
      posterior.lo, posterior.hi, posterior.mu, cfg);
}

std::vector<SvoTracePoint> estimate_svo(const std::vector<Clip>& stream, const SvoEstimateConfig& cfg,
                                        const RewardModel& model, const EncoderParams& encoder) {
  if (stream.empty()) throw std::invalid_argument("estimate_svo: empty clip stream");
  std::vector<SvoTracePoint> out;
  SvoPosterior post = cfg.prior;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Clip& clip = stream[i];
    post = bayes_update(post, clip, cfg.gamma, model, encoder);
    SvoTracePoint pt;
    pt.frame = static_cast<int>(std::lround(clip.meta.t0 / clip.dt)) + kHistoryLen - 1;
    pt.posterior = post;
    if (cfg.run_hmc) {
      HmcConfig h = cfg.hmc;
      h.seed = cfg.hmc.seed + i;
      pt.accept_rate = hmc_sample(post, h).accept_rate;
    }
    out.push_back(pt);
  }
  return out;
}

double regularized_mle(const std::vector<ClipEvidence>& evidence, double gamma,
                       const RewardModel& model, double lambda, int grid_points) {
  double best = -std::numeric_limits<double>::infinity(), arg = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double a = kHalfPi * i / (grid_points - 1);
    double l = -lambda * a * a;
    for (const auto& ev : evidence) l += log_likelihood(ev, a, gamma, model);
    if (l > best) {
      best = l;
      arg = a;
    }
  }
  return arg;
}

}  // namespace socialtraj
