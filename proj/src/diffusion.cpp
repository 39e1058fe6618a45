#include "socialtraj/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace socialtraj {

NoiseSchedule cosine_schedule(int T_s, double s, int ref_steps) {
  if (T_s < 1) throw std::invalid_argument("cosine_schedule: T_s must be >= 1");
  auto f = [&](double t) {
    const double c = std::cos((t / T_s + s) / (1.0 + s) * kHalfPi);
    return c * c;
  };
  NoiseSchedule sc;
  sc.T_s = T_s;
  sc.beta.assign(T_s + 1, 0.0);
  sc.alpha_bar.assign(T_s + 1, 1.0);
  sc.net_t.assign(T_s + 1, 0.0);
  const double f0 = f(0.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= T_s; ++t) {
    const double raw = f(t) / f0;
    double beta = 1.0 - raw / prev_raw;
    if (beta > 0.999) {
      beta = 0.999;
      sc.alpha_bar[t] = sc.alpha_bar[t - 1] * (1.0 - beta);
    } else {
      sc.alpha_bar[t] = raw;
    }
    sc.beta[t] = beta;
    sc.net_t[t] = static_cast<double>(t) * ref_steps / T_s;
    prev_raw = raw;
  }
  return sc;
}

NoiseSchedule respace(const NoiseSchedule& base, int steps) {
  if (steps < 1 || steps > base.T_s)
    throw std::invalid_argument("respace: step count outside [1, T_s]");
  if (steps == base.T_s) return base;
  NoiseSchedule sc;
  sc.T_s = steps;
  sc.beta.assign(steps + 1, 0.0);
  sc.alpha_bar.assign(steps + 1, 1.0);
  sc.net_t.assign(steps + 1, 0.0);
  int prev = 0;
  for (int i = 1; i <= steps; ++i) {
    const int tau = static_cast<int>(std::lround(static_cast<double>(i) * base.T_s / steps));
    double beta = 1.0 - base.alpha_bar[tau] / base.alpha_bar[prev];
    beta = std::min(beta, 0.999);
    sc.beta[i] = beta;
    sc.alpha_bar[i] = sc.alpha_bar[i - 1] * (1.0 - beta);
    sc.net_t[i] = base.net_t[tau];
    prev = tau;
  }
  return sc;
}

void validate_schedule(const NoiseSchedule& sched) {
  if (sched.alpha_bar.empty() || sched.alpha_bar[0] != 1.0)
    throw NumericError("schedule: alpha_bar[0] must be 1");
  for (int t = 1; t <= sched.T_s; ++t) {
    if (!(sched.beta[t] > 0.0 && sched.beta[t] <= 0.999))
      throw NumericError("schedule: beta outside (0, 0.999] at step " + std::to_string(t));
    if (!(sched.alpha_bar[t] < sched.alpha_bar[t - 1]))
      throw NumericError("schedule: alpha_bar not decreasing at step " + std::to_string(t));
  }
}

Mat q_sample(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T_s) throw std::out_of_range("q_sample: step outside [1, T_s]");
  const double ab = sched.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Mat reverse_step(const Mat& x_t, int t, const Mat& eps_hat, const NoiseSchedule& sched,
                 const Mat& zeta) {
  if (t < 1 || t > sched.T_s) throw std::out_of_range("reverse_step: step outside [1, T_s]");
  const double a = sched.alpha(t);
  const double coef = (1.0 - a) / std::sqrt(1.0 - sched.alpha_bar[t]);
  Mat out = (x_t - coef * eps_hat) / std::sqrt(a);
  if (t > 1) out += std::sqrt(sched.beta[t]) * zeta;
  return out;
}

int curriculum_steps(double posterior_var, int lo_steps, int hi_steps) {
  constexpr double v_hi = 0.25, v_lo = 0.01;
  if (posterior_var >= v_hi) return lo_steps;
  if (posterior_var <= v_lo) return hi_steps;
  const double frac = (v_hi - posterior_var) / (v_hi - v_lo);
  return static_cast<int>(std::lround(lo_steps + frac * (hi_steps - lo_steps)));
}

Vec timestep_embedding(double t, int dim) {
  Vec e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(t * freq);
    e(half + i) = std::cos(t * freq);
  }
  return e;
}

Vec ConditioningSet::static_part() const {
  Vec v(history_ctx.size() + ego_ctx.size() + plan_emb.size() + svo_emb.size());
  v << history_ctx, ego_ctx, plan_emb, svo_emb;
  return v;
}

Vec fused_input(const ConditioningSet& cond) {
  Vec s = cond.static_part();
  Vec z(s.size() + cond.t_emb.size());
  z << s, cond.t_emb;
  return z;
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, std::uint64_t seed) {
  if (cfg.channels.size() != 4 || cfg.dilations.size() != 4)
    throw ConfigError("denoiser: expected 4 channel widths and 4 dilations");
  DenoiserParams p;
  p.cfg = cfg;
  Rng rng(seed, 0x64656e);
  nn::init_uniform(p.W_plan, cfg.plan_dim, 2 * kFutureLen, 2 * kFutureLen, rng);
  nn::init_uniform(p.b_plan, cfg.plan_dim, 1, 2 * kFutureLen, rng);
  nn::init_uniform(p.W_svo, cfg.svo_dim, 2, 2, rng);
  nn::init_uniform(p.b_svo, cfg.svo_dim, 1, 2, rng);
  nn::init_uniform(p.W_fuse, cfg.cond_dim, cfg.fused_in(), cfg.fused_in(), rng);
  nn::init_uniform(p.b_fuse, cfg.cond_dim, 1, cfg.fused_in(), rng);
  const auto& ch = cfg.channels;
  const auto& dl = cfg.dilations;
  p.enc.resize(4);
  int cin = 2;
  for (int i = 0; i < 4; ++i) {
    p.enc[i].init(cin, ch[i], dl[i], cfg.cond_dim, rng);
    cin = ch[i];
  }
  p.mid.init(ch[3], ch[3], 1, cfg.cond_dim, rng);
  p.dec.resize(3);
  for (int j = 0; j < 3; ++j) {
    const int level = 2 - j;  // skip level joined by this decoder block
    p.dec[j].init(ch[level + 1] + ch[level], ch[level], dl[level], cfg.cond_dim, rng);
  }
  p.out.init(ch[0], 2, 1, 1, rng);
  p.out.W.w.setZero();
  p.out.b.w.setZero();
  return p;
}

std::vector<NamedParam> DenoiserParams::named(const std::string& prefix) {
  std::vector<NamedParam> res{{prefix + "W_plan", &W_plan}, {prefix + "b_plan", &b_plan},
                              {prefix + "W_svo", &W_svo},   {prefix + "b_svo", &b_svo},
                              {prefix + "W_fuse", &W_fuse}, {prefix + "b_fuse", &b_fuse}};
  for (std::size_t i = 0; i < enc.size(); ++i)
    enc[i].append_named(res, prefix + "enc" + std::to_string(i) + ".");
  mid.append_named(res, prefix + "mid.");
  for (std::size_t j = 0; j < dec.size(); ++j)
    dec[j].append_named(res, prefix + "dec" + std::to_string(j) + ".");
  res.push_back({prefix + "out.W", &out.W});
  res.push_back({prefix + "out.b", &out.b});
  return res;
}

void DenoiserParams::zero_grad() {
  for (auto& np : named()) np.p->zero_grad();
}

Mat stack_trajectories(const std::vector<Mat>& xs) {
  if (xs.empty()) return Mat(2, 0);
  const int L = static_cast<int>(xs[0].rows());
  Mat X(2, L * static_cast<int>(xs.size()));
  for (std::size_t b = 0; b < xs.size(); ++b) {
    if (xs[b].rows() != L || xs[b].cols() != 2) throw ShapeError("stack_trajectories: bad shape");
    X.middleCols(b * L, L) = xs[b].transpose();
  }
  return X;
}

std::vector<Mat> unstack_trajectories(const Mat& X, int length) {
  std::vector<Mat> out;
  for (int b = 0; b < X.cols() / length; ++b) out.push_back(X.middleCols(b * length, length).transpose());
  return out;
}

namespace {

void check_finite(const Mat& m, int layer) {
  if (!m.allFinite())
    throw NumericError("denoiser: non-finite activation at layer " + std::to_string(layer));
}

Mat vcat(const Mat& a, const Mat& b) {
  Mat c(a.rows() + b.rows(), a.cols());
  c << a, b;
  return c;
}

}  // namespace

Mat denoiser_forward(const DenoiserParams& p, const Mat& X, const Mat& Z, DenoiserTape* tape) {
  const int B = static_cast<int>(Z.cols());
  if (B < 1 || X.rows() != 2 || X.cols() % B != 0) throw ShapeError("denoiser: inconsistent batch");
  if (Z.rows() != p.cfg.fused_in()) throw ShapeError("denoiser: conditioning size mismatch");
  const int L = static_cast<int>(X.cols()) / B;
  DenoiserTape local;
  DenoiserTape& tp = tape ? *tape : local;
  tp.Z = Z;
  tp.pre = p.W_fuse.w * Z;
  tp.pre.colwise() += p.b_fuse.w.col(0);
  tp.e = nn::silu(tp.pre);
  check_finite(tp.e, 0);
  tp.enc.resize(4);
  tp.dec.resize(3);
  std::vector<Mat> skips(4);
  Mat h = X;
  int layer = 1;
  for (int i = 0; i < 4; ++i) {
    h = p.enc[i].forward(h, tp.e, L, &tp.enc[i]);
    check_finite(h, layer++);
    skips[i] = h;
  }
  h = p.mid.forward(h, tp.e, L, &tp.mid);
  check_finite(h, layer++);
  for (int j = 0; j < 3; ++j) {
    h = p.dec[j].forward(vcat(h, skips[2 - j]), tp.e, L, &tp.dec[j]);
    check_finite(h, layer++);
  }
  Mat y = p.out.forward(h, L, &tp.cols_out);
  check_finite(y, layer);
  return y;
}

Mat denoiser_backward(DenoiserParams& p, const DenoiserTape& tp, const Mat& dOut) {
  const int B = static_cast<int>(tp.Z.cols());
  const int L = static_cast<int>(dOut.cols()) / B;
  const auto& ch = p.cfg.channels;
  Mat de = Mat::Zero(p.cfg.cond_dim, B);
  Mat dh = p.out.backward(dOut, tp.cols_out, L);
  std::vector<Mat> dskip(4);
  for (int j = 2; j >= 0; --j) {
    const int level = 2 - j;
    Mat dcat = p.dec[j].backward(dh, tp.e, tp.dec[j], L, de);
    const int top = ch[level + 1];
    dskip[level] = dcat.bottomRows(ch[level]);
    dh = dcat.topRows(top);
  }
  dh = p.mid.backward(dh, tp.e, tp.mid, L, de);
  for (int i = 3; i >= 0; --i) {
    if (i < 3) dh += dskip[i];
    dh = p.enc[i].backward(dh, tp.e, tp.enc[i], L, de);
  }
  const Mat dpre = nn::silu_backward(tp.pre, de);
  p.W_fuse.g.noalias() += dpre * tp.Z.transpose();
  p.b_fuse.g += dpre.rowwise().sum();
  return p.W_fuse.w.transpose() * dpre;
}

Mat denoise_eps(const Mat& x_t, double t, ConditioningSet cond, const DenoiserParams& params) {
  if (x_t.rows() != kFutureLen || x_t.cols() != 2) throw ShapeError("denoise_eps: x_t must be 25 x 2");
  cond.t_emb = timestep_embedding(t, params.cfg.t_dim);
  const Vec z = fused_input(cond);
  const Mat y = denoiser_forward(params, stack_trajectories({x_t}), z, nullptr);
  return y.transpose();
}

namespace {

Mat conditioning_at(const Mat& static_cond, double net_t, int t_dim) {
  const int B = static_cast<int>(static_cond.cols());
  Mat Z(static_cond.rows() + t_dim, B);
  Z.topRows(static_cond.rows()) = static_cond;
  Z.bottomRows(t_dim) = timestep_embedding(net_t, t_dim).replicate(1, B);
  return Z;
}

void fill_gauss(Mat& X, int chain, int L, Rng& rng) {
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < 2; ++c) X(c, chain * L + l) = rng.gauss();
}

}  // namespace

Mat clip_eps_to_x0(const Mat& x_t, int t, const Mat& eps_hat, const NoiseSchedule& sched,
                   double limit) {
  const double ab = sched.alpha_bar[t];
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const Mat x0 = ((x_t - sb * eps_hat) / sa).cwiseMax(-limit).cwiseMin(limit);
  return (x_t - sa * x0) / sb;
}

std::vector<Mat> sample_batch(const Mat& static_cond, const NoiseSchedule& sched,
                              const DenoiserParams& params, std::uint64_t seed,
                              const std::vector<std::uint64_t>& chain_ids, double x0_clip) {
  const int B = static_cast<int>(static_cond.cols());
  if (static_cast<int>(chain_ids.size()) != B) throw ShapeError("sample_batch: chain id count");
  const int L = kFutureLen;
  std::vector<Rng> rngs;
  for (int i = 0; i < B; ++i) rngs.emplace_back(seed, chain_ids[i], 0x736d70);
  Mat X(2, B * L), zeta = Mat::Zero(2, B * L);
  for (int i = 0; i < B; ++i) fill_gauss(X, i, L, rngs[i]);
  for (int t = sched.T_s; t >= 1; --t) {
    const Mat Z = conditioning_at(static_cond, sched.net_t[t], params.cfg.t_dim);
    Mat eps = denoiser_forward(params, X, Z, nullptr);
    if (x0_clip > 0.0) eps = clip_eps_to_x0(X, t, eps, sched, x0_clip);
    if (t > 1)
      for (int i = 0; i < B; ++i) fill_gauss(zeta, i, L, rngs[i]);
    X = reverse_step(X, t, eps, sched, zeta);
  }
  return unstack_trajectories(X, L);
}

Mat sample(const ConditioningSet& cond, const NoiseSchedule& sched, const DenoiserParams& params,
           std::uint64_t seed, double x0_clip) {
  const Mat s = cond.static_part();
  return sample_batch(s, sched, params, seed, {0}, x0_clip)[0];
}

LossResult diffusion_loss(const std::vector<LossItem>& batch, const NoiseSchedule& sched,
                          DenoiserParams& params, std::uint64_t seed, bool with_grad,
                          const EpsOverride* hook) {
  if (batch.empty()) throw std::invalid_argument("diffusion_loss: empty batch");
  const int B = static_cast<int>(batch.size());
  const int L = kFutureLen;
  std::vector<Mat> xt(B), eps(B);
  LossResult res;
  res.t.resize(B);
  for (int i = 0; i < B; ++i) {
    Rng rng(seed, batch[i].stream, 0x6c6f73);
    res.t[i] = rng.integer(1, sched.T_s);
    eps[i].resize(L, 2);
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < 2; ++c) eps[i](l, c) = rng.gauss();
    xt[i] = q_sample(batch[i].x0, res.t[i], eps[i], sched);
  }
  if (hook) {
    for (int i = 0; i < B; ++i) res.loss += ((*hook)(xt[i], res.t[i], eps[i]) - eps[i]).squaredNorm();
    res.loss /= B;
    return res;
  }
  const int sd = params.cfg.static_dim();
  Mat Z(params.cfg.fused_in(), B);
  for (int i = 0; i < B; ++i) {
    if (batch[i].static_cond.size() != sd) throw ShapeError("diffusion_loss: conditioning size");
    Z.col(i).head(sd) = batch[i].static_cond;
    Z.col(i).tail(params.cfg.t_dim) = timestep_embedding(sched.net_t[res.t[i]], params.cfg.t_dim);
  }
  DenoiserTape tape;
  const Mat pred = denoiser_forward(params, stack_trajectories(xt), Z, with_grad ? &tape : nullptr);
  const Mat target = stack_trajectories(eps);
  const Mat diff = pred - target;
  // Per-item sums, added in item order.
  for (int i = 0; i < B; ++i) res.loss += diff.middleCols(i * L, L).squaredNorm();
  res.loss /= B;
  if (with_grad) {
    const Mat dZ = denoiser_backward(params, tape, 2.0 * diff / B);
    res.d_static = dZ.topRows(sd);
  }
  return res;
}

}  // namespace socialtraj
