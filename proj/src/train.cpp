#include "socialtraj/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

namespace socialtraj {

std::string to_string(SvoSource s) {
  switch (s) {
    case SvoSource::kPosteriorSample: return "posterior";
    case SvoSource::kFixed: return "fixed";
    case SvoSource::kNone: return "none";
  }
  return "posterior";
}

SvoSource svo_source_from_string(const std::string& s) {
  if (s == "posterior") return SvoSource::kPosteriorSample;
  if (s == "fixed") return SvoSource::kFixed;
  if (s == "none") return SvoSource::kNone;
  throw UsageError("unknown svo source '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must lie in (0, 1)");
  if (!(grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must lie in (0, 1]");
  if (denoiser.channels.size() != 4) throw ConfigError("train: channels needs 4 widths");
  for (int c : denoiser.channels)
    if (c < 1) throw ConfigError("train: channel widths must be positive");
}

void TrainConfig::apply(const KeyValueConfig& kv) {
  batch_size = static_cast<int>(kv.get_int("batch_size", batch_size));
  lr = kv.get_double("lr", lr);
  weight_decay = kv.get_double("weight_decay", weight_decay);
  ema_decay = kv.get_double("ema_decay", ema_decay);
  grad_clip = kv.get_double("grad_clip", grad_clip);
  epochs = static_cast<int>(kv.get_int("epochs", epochs));
  seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(seed)));
  curriculum_enabled = kv.get_bool("curriculum", curriculum_enabled);
  gamma = kv.get_double("gamma", gamma);
  if (kv.has("channels")) {
    std::vector<int> ch;
    std::stringstream ss(kv.get_string("channels", ""));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        ch.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ConfigError("train: bad channel width '" + tok + "'");
      }
    }
    denoiser.channels = ch;
  }
  if (kv.has("variant")) {
    const std::string v = kv.get_string("variant", "full");
    variant = VariantFlags{};
    if (v == "no-plan") {
      variant.no_plan = true;
    } else if (v == "vanilla") {
      variant.vanilla = true;
      variant.svo_source = SvoSource::kNone;
      variant.no_plan = true;
    } else if (v != "full") {
      throw ConfigError("train: unknown variant '" + v + "'");
    }
  }
  validate();
}

Normalization fit_normalization(const std::vector<Clip>& clips) {
  if (clips.empty()) throw std::invalid_argument("fit_normalization: no clips");
  Normalization n;
  std::array<double, 4> s{}, s2{};
  long count = 0;
  for (const auto& c : clips)
    for (const auto* tr : {&c.target_history, &c.ego_history})
      for (const auto& st : tr->states) {
        const double f[4] = {st.x, st.y, st.v, st.a};
        for (int j = 0; j < 4; ++j) {
          s[j] += f[j];
          s2[j] += f[j] * f[j];
        }
        ++count;
      }
  for (int j = 0; j < 4; ++j) {
    n.enc_mean[j] = s[j] / count;
    n.enc_std[j] = std::max(kNormStdFloor, std::sqrt(std::max(0.0, s2[j] / count - n.enc_mean[j] * n.enc_mean[j])));
  }
  auto fit = [&](auto get, Mat& mean, Mat& sd) {
    mean = Mat::Zero(kFutureLen, 2);
    Mat sq = Mat::Zero(kFutureLen, 2);
    for (const auto& c : clips) {
      const Positions& p = get(c);
      mean += p;
      sq += p.cwiseAbs2();
    }
    mean /= static_cast<double>(clips.size());
    sq /= static_cast<double>(clips.size());
    sd = (sq - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(kNormStdFloor);
  };
  fit([](const Clip& c) -> const Positions& { return c.target_future; }, n.future_mean, n.future_std);
  fit([](const Clip& c) -> const Positions& { return c.ego_plan; }, n.plan_mean, n.plan_std);
  return n;
}

Model Model::init(const TrainConfig& cfg, const Normalization& norm) {
  cfg.validate();
  Model m;
  const int d = cfg.denoiser.ctx_dim;
  m.encoder = EncoderParams::init(cfg.seed, d, d, d);
  m.denoiser = DenoiserParams::init(cfg.denoiser, cfg.seed);
  m.norm = norm;
  m.variant = cfg.variant;
  m.gamma = cfg.gamma;
  m.last_t_eff = 0;
  return m;
}

std::vector<NamedParam> Model::named() {
  auto out = encoder.named();
  for (auto& p : denoiser.named()) out.push_back(p);
  return out;
}

double draw_alpha(const SvoPosterior& post, Rng& rng) {
  const double u = rng.uniform();
  const double sd = std::sqrt(std::max(0.0, post.sigma2));
  if (!(sd > 1e-12)) return std::clamp(post.mu, post.lo, post.hi);
  const double za = (post.lo - post.mu) / sd, zb = (post.hi - post.mu) / sd;
  const double r2 = std::sqrt(2.0);
  using boost::math::erfc;
  using boost::math::erfc_inv;
  double z;
  if (za > 0.0) {
    // Upper tail: work with survival probabilities.
    const double qa = 0.5 * erfc(za / r2), qb = 0.5 * erfc(zb / r2);
    const double q = qa - u * (qa - qb);
    z = q > 0.0 ? r2 * erfc_inv(2.0 * q) : za;
  } else {
    const double pa = 0.5 * erfc(-za / r2), pb = 0.5 * erfc(-zb / r2);
    const double p = pa + u * (pb - pa);
    z = p > 0.0 ? -r2 * erfc_inv(2.0 * p) : za;
  }
  return std::clamp(post.mu + sd * z, post.lo, post.hi);
}

namespace {

Mat normalized_history(const Trajectory& tr, const Normalization& n) {
  Mat S = history_matrix(tr);
  for (int j = 0; j < 4; ++j) S.col(j) = (S.col(j).array() - n.enc_mean[j]) / n.enc_std[j];
  return S;
}

Vec flatten_rows(const Mat& m) {
  Vec v(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
  return v;
}

}  // namespace

Mat standardize_future(const Positions& future, const Normalization& norm) {
  if (future.rows() != kFutureLen || future.cols() != 2) throw ShapeError("future must be 25 x 2");
  return (future - norm.future_mean).cwiseQuotient(norm.future_std);
}

Positions destandardize_future(const Mat& x, const Normalization& norm) {
  return x.cwiseProduct(norm.future_std) + norm.future_mean;
}

ConditioningSet prepare_conditioning(const Clip& clip, const Model& model, SvoSource source,
                                     double alpha, const SvoPosterior* posterior, Rng* rng,
                                     bool no_plan, ConditioningTape* tape, double* alpha_used) {
  const auto& cfg = model.denoiser.cfg;
  const bool vanilla = model.variant.vanilla;
  ConditioningTape local;
  ConditioningTape& tp = tape ? *tape : local;
  ConditioningSet cs;
  cs.history_ctx = encode(normalized_history(clip.target_history, model.norm), model.encoder, &tp.history);
  tp.ego_used = !vanilla;
  cs.ego_ctx = tp.ego_used ? encode(normalized_history(clip.ego_history, model.norm), model.encoder, &tp.ego)
                           : Vec::Zero(cfg.ctx_dim);
  tp.plan_used = !vanilla && !no_plan;
  if (tp.plan_used) {
    if (clip.ego_plan.rows() != kFutureLen || clip.ego_plan.cols() != 2)
      throw ShapeError("prepare_conditioning: ego plan must be 25 x 2");
    tp.plan_in = flatten_rows((clip.ego_plan - model.norm.plan_mean).cwiseQuotient(model.norm.plan_std));
    cs.plan_emb = model.denoiser.W_plan.w * tp.plan_in + model.denoiser.b_plan.w.col(0);
  } else {
    cs.plan_emb = Vec::Zero(cfg.plan_dim);
  }
  tp.svo_used = !vanilla && source != SvoSource::kNone;
  double a = std::numeric_limits<double>::quiet_NaN();
  if (tp.svo_used) {
    if (source == SvoSource::kFixed) {
      a = alpha;
    } else {
      if (!posterior || !rng) throw std::invalid_argument("prepare_conditioning: posterior draw needs a posterior and rng");
      a = draw_alpha(*posterior, *rng);
    }
    tp.svo_in = Vec(2);
    tp.svo_in << std::cos(a), std::sin(a);
    cs.svo_emb = model.denoiser.W_svo.w * tp.svo_in + model.denoiser.b_svo.w.col(0);
  } else {
    cs.svo_emb = Vec::Zero(cfg.svo_dim);
  }
  if (alpha_used) *alpha_used = a;
  for (const Vec* v : {&cs.history_ctx, &cs.ego_ctx, &cs.plan_emb, &cs.svo_emb})
    if (!v->allFinite()) throw NumericError("prepare_conditioning: non-finite conditioning");
  return cs;
}

ConditioningSet prepare_conditioning(const Clip& clip, const Model& model,
                                     const SvoPosterior* posterior, Rng* rng,
                                     ConditioningTape* tape, double* alpha_used) {
  return prepare_conditioning(clip, model, model.variant.svo_source, model.variant.fixed_alpha,
                              posterior, rng, model.variant.no_plan, tape, alpha_used);
}

void conditioning_backward(const ConditioningTape& tp, const Vec& d, Model& model) {
  const auto& cfg = model.denoiser.cfg;
  const int c = cfg.ctx_dim;
  encoder_backward(tp.history, d.segment(0, c), model.encoder);
  if (tp.ego_used) encoder_backward(tp.ego, d.segment(c, c), model.encoder);
  if (tp.plan_used) {
    const Vec dp = d.segment(2 * c, cfg.plan_dim);
    model.denoiser.W_plan.g.noalias() += dp * tp.plan_in.transpose();
    model.denoiser.b_plan.g.col(0) += dp;
  }
  if (tp.svo_used) {
    const Vec ds = d.segment(2 * c + cfg.plan_dim, cfg.svo_dim);
    model.denoiser.W_svo.g.noalias() += ds * tp.svo_in.transpose();
    model.denoiser.b_svo.g.col(0) += ds;
  }
}

std::vector<SvoPosterior> window_posteriors(const Clip& clip, const Model& model,
                                            const SvoPosterior& prior) {
  const int w = kHistoryLen / kCurriculumWindows;
  std::vector<SvoPosterior> out{prior};
  for (int k = 0; k < kCurriculumWindows; ++k) {
    const ClipEvidence ev = clip_evidence(clip, model.reward, model.encoder, k * w, (k + 1) * w);
    out.push_back(bayes_update(out.back(), [&](double a) {
      return log_likelihood(ev, a, model.gamma, model.reward);
    }));
  }
  return out;
}

PosteriorCache build_posterior_cache(const std::vector<Clip>& clips, const Model& model) {
  PosteriorCache cache(clips.size());
  parallel_for(static_cast<int>(clips.size()),
               [&](int i) { cache[i] = window_posteriors(clips[i], model); });
  return cache;
}

int curriculum_window(int epoch, int epochs) {
  const int ramp = std::max(1, (epochs + 1) / 2);
  return std::min(kCurriculumWindows, epoch * (kCurriculumWindows + 1) / ramp);
}

namespace {

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_mat(Mat& m) { m = m.unaryExpr([](double x) { return to_f32(x); }); }

}  // namespace

void round_state(TrainState& st) {
  for (auto& np : st.model.named()) round_mat(np.p->w);
  for (auto* group : {&st.opt.m, &st.opt.v, &st.opt.ema})
    for (auto& m : *group) round_mat(m);
}

TrainState init_training(const TrainConfig& cfg, const std::vector<Clip>& train_clips) {
  TrainState st;
  st.cfg = cfg;
  st.model = Model::init(cfg, fit_normalization(train_clips));
  for (auto& np : st.model.named()) {
    st.opt.m.push_back(Mat::Zero(np.p->w.rows(), np.p->w.cols()));
    st.opt.v.push_back(Mat::Zero(np.p->w.rows(), np.p->w.cols()));
  }
  round_state(st);
  for (auto& np : st.model.named()) st.opt.ema.push_back(np.p->w);
  return st;
}

Model ema_model(const TrainState& st) {
  Model m = st.model;
  auto params = m.named();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].p->w = st.opt.ema[i];
  return m;
}

void optimizer_step(TrainState& st) {
  const TrainConfig& cfg = st.cfg;
  auto params = st.model.named();
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double gnorm2 = 0.0;
  for (auto& np : params) gnorm2 += np.p->g.squaredNorm();
  const double gnorm = std::sqrt(gnorm2);
  const double scale = gnorm > cfg.grad_clip ? cfg.grad_clip / gnorm : 1.0;
  ++st.opt.step;
  const double t = static_cast<double>(st.opt.step);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  const double ema_d = std::min(cfg.ema_decay, (1.0 + t) / (10.0 + t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat& w = params[p].p->w;
    const Mat g = params[p].p->g * scale;
    Mat& m = st.opt.m[p];
    Mat& v = st.opt.v[p];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    const Mat step = (m / c1).array() / ((v / c2).array().sqrt() + eps);
    w -= cfg.lr * (step + cfg.weight_decay * w);
    st.opt.ema[p] = ema_d * st.opt.ema[p] + (1.0 - ema_d) * w;
  }
  round_state(st);
}

EpochStats train_epoch(TrainState& st, const std::vector<Clip>& clips, const PosteriorCache& cache) {
  const TrainConfig& cfg = st.cfg;
  cfg.validate();
  const int n = static_cast<int>(clips.size());
  if (n == 0) throw std::invalid_argument("train_epoch: empty split");
  if (static_cast<int>(cache.size()) != n) throw std::invalid_argument("train_epoch: cache size mismatch");
  Model& model = st.model;
  const int e = st.epoch;

  EpochStats stats;
  stats.epoch = e;
  const int k = cfg.curriculum_enabled ? curriculum_window(e, cfg.epochs) : kCurriculumWindows;
  double var_sum = 0.0;
  for (int i = 0; i < n; ++i) var_sum += cache[i][k].sigma2;
  stats.mean_posterior_var = var_sum / n;
  if (cfg.curriculum_enabled) {
    stats.t_eff = std::max(model.last_t_eff, curriculum_steps(stats.mean_posterior_var));
  } else {
    stats.t_eff = kReferenceSteps;
  }
  model.last_t_eff = stats.t_eff;
  const NoiseSchedule sched = respace(cosine_schedule(kReferenceSteps), stats.t_eff);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed, static_cast<std::uint64_t>(e), 0x6f7264);
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

  auto params = model.named();
  double loss_sum = 0.0;
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int end = std::min(n, start + cfg.batch_size);
    const int bsz = end - start;
    for (auto& np : params) np.p->zero_grad();
    std::vector<LossItem> items(bsz);
    std::vector<ConditioningTape> tapes(bsz);
    for (int j = 0; j < bsz; ++j) {
      const int id = order[start + j];
      Rng rng(cfg.seed, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(id));
      const ConditioningSet cs = prepare_conditioning(clips[id], model, &cache[id][k], &rng, &tapes[j]);
      items[j].x0 = standardize_future(clips[id].target_future, model.norm);
      items[j].static_cond = cs.static_part();
      items[j].stream = (static_cast<std::uint64_t>(e) << 32) | static_cast<std::uint64_t>(id);
    }
    const LossResult res = diffusion_loss(items, sched, model.denoiser, cfg.seed, true);
    for (int j = 0; j < bsz; ++j) conditioning_backward(tapes[j], res.d_static.col(j), model);
    double gnorm2 = 0.0;
    for (auto& np : params) gnorm2 += np.p->g.squaredNorm();
    if (!std::isfinite(res.loss) || !std::isfinite(gnorm2)) {
      std::string ids;
      for (int j = 0; j < bsz; ++j) ids += (j ? "," : "") + std::to_string(order[start + j]);
      throw NumericError("train: non-finite loss at epoch " + std::to_string(e) + " step " +
                         std::to_string(st.opt.step) + " (batch clips " + ids + ")");
    }
    optimizer_step(st);
    loss_sum += res.loss * bsz;
    ++stats.steps;
  }
  stats.loss = loss_sum / n;
  st.epoch = e + 1;
  return stats;
}

}  // namespace socialtraj
