#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "socialtraj/diffusion.hpp"

using namespace socialtraj;

namespace {

// High-precision evaluation of the cosine formula at t = 100 of 200, s = 0.008.
constexpr double kAlphaBarMid = 0.4938435904406377;

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.channels = {4, 6, 8, 8};
  c.cond_dim = 6;
  c.ctx_dim = 5;
  c.plan_dim = 4;
  c.svo_dim = 3;
  c.t_dim = 6;
  return c;
}

void zero_all(DenoiserParams& p) {
  for (auto& np : p.named()) np.p->w.setZero();
}

// The output layer starts at zero; give it weights so the network has signal.
void randomize_output(DenoiserParams& p, Rng& rng) {
  for (Param* prm : {&p.out.W, &p.out.b})
    for (Eigen::Index i = 0; i < prm->w.size(); ++i) prm->w(i) = 0.3 * rng.gauss();
}

Mat random_traj(Rng& rng, double scale = 1.0) {
  Mat x(kFutureLen, 2);
  for (int l = 0; l < kFutureLen; ++l)
    for (int c = 0; c < 2; ++c) x(l, c) = scale * rng.gauss();
  return x;
}

Vec random_vec(int n, Rng& rng) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.gauss();
  return v;
}

ConditioningSet random_cond(const DenoiserConfig& c, Rng& rng) {
  ConditioningSet s;
  s.history_ctx = random_vec(c.ctx_dim, rng);
  s.ego_ctx = random_vec(c.ctx_dim, rng);
  s.plan_emb = random_vec(c.plan_dim, rng);
  s.svo_emb = random_vec(c.svo_dim, rng);
  return s;
}

std::vector<LossItem> random_batch(int n, const DenoiserConfig& c, Rng& rng) {
  std::vector<LossItem> b;
  for (int i = 0; i < n; ++i)
    b.push_back({random_traj(rng), random_vec(c.static_dim(), rng), static_cast<std::uint64_t>(100 + i)});
  return b;
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= xs.size();
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= xs.size();
  return m;
}

}  // namespace

TEST_CASE("cosine schedule: endpoints, monotonicity and golden value") {
  const auto s = cosine_schedule(200);
  CHECK(s.alpha_bar[0] == 1.0);
  for (int t = 1; t <= 200; ++t) {
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] <= 0.999);
  }
  CHECK(s.alpha_bar[100] == doctest::Approx(kAlphaBarMid).epsilon(1e-13));
  CHECK_NOTHROW(validate_schedule(s));
  CHECK(s.net_t[200] == 200.0);
  CHECK_THROWS(cosine_schedule(0));
}

TEST_CASE("every constructed schedule satisfies the schedule invariants") {
  for (int T : {1, 2, 5, 17, 50, 100, 200, 1000}) {
    INFO("T_s=" << T);
    CHECK_NOTHROW(validate_schedule(cosine_schedule(T)));
  }
  const auto base = cosine_schedule(200);
  for (int k : {1, 7, 40, 100, 120, 150, 199, 200}) {
    INFO("steps=" << k);
    const auto r = respace(base, k);
    CHECK_NOTHROW(validate_schedule(r));
    CHECK(r.T_s == k);
    CHECK(r.net_t[k] == 200.0);
  }
  CHECK_THROWS(respace(base, 0));
  CHECK_THROWS(respace(base, 201));
}

TEST_CASE("respace keeps the base cumulative products at strided steps") {
  const auto base = cosine_schedule(200);
  for (int k : {120, 50}) {
    const auto r = respace(base, k);
    for (int i = 1; i <= k; ++i) {
      const int tau = static_cast<int>(std::lround(i * 200.0 / k));
      CHECK(r.net_t[i] == base.net_t[tau]);
      // Only a step whose variance hits the 0.999 cap departs from the base.
      if (r.beta[i] < 0.999) CHECK(r.alpha_bar[i] == doctest::Approx(base.alpha_bar[tau]).epsilon(1e-9));
      else CHECK(i == k);
    }
  }
}

TEST_CASE("validate_schedule rejects broken schedules") {
  auto s = cosine_schedule(10);
  s.alpha_bar[0] = 0.9;
  CHECK_THROWS_AS(validate_schedule(s), NumericError);
  s = cosine_schedule(10);
  s.alpha_bar[5] = s.alpha_bar[4];
  CHECK_THROWS_AS(validate_schedule(s), NumericError);
  s = cosine_schedule(10);
  s.beta[3] = 1.0;
  CHECK_THROWS_AS(validate_schedule(s), NumericError);
}

TEST_CASE("q_sample: zero noise scales the clean sample") {
  NoiseSchedule s;
  s.T_s = 1;
  s.beta = {0.0, 0.75};
  s.alpha_bar = {1.0, 0.25};
  s.net_t = {0.0, 200.0};
  Rng rng(1);
  Mat x0 = random_traj(rng, 3.0);
  Mat xt = q_sample(x0, 1, Mat::Zero(kFutureLen, 2), s);
  CHECK((xt - 0.5 * x0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS(q_sample(x0, 0, x0, s));
  CHECK_THROWS(q_sample(x0, 2, x0, s));
}

TEST_CASE("q_sample: the last step is close to pure noise") {
  const auto s = cosine_schedule(200);
  CHECK(std::sqrt(s.alpha_bar[200]) < 0.05);
}

TEST_CASE("q_sample: empirical variance at x0 = 0 is 1 - alpha_bar") {
  const auto s = cosine_schedule(200);
  Rng rng(2);
  for (int t : {1, 50, 100, 200}) {
    std::vector<double> xs;
    const Mat x0 = Mat::Zero(1, 1);
    for (int i = 0; i < 100000; ++i) {
      Mat eps(1, 1);
      eps(0, 0) = rng.gauss();
      xs.push_back(q_sample(x0, t, eps, s)(0, 0));
    }
    const double want = 1.0 - s.alpha_bar[t];
    INFO("t=" << t);
    CHECK(std::abs(moments(xs).var / want - 1.0) < 0.02);
  }
}

TEST_CASE("chained single-step kernels match the closed-form marginal") {
  const auto s = cosine_schedule(200);
  const double x0 = 1.5;
  for (int t : {1, 100, 200}) {
    Rng rng(3, t);
    std::vector<double> chain, direct;
    for (int i = 0; i < 100000; ++i) {
      double x = x0;
      for (int u = 1; u <= t; ++u) x = std::sqrt(s.alpha(u)) * x + std::sqrt(s.beta[u]) * rng.gauss();
      chain.push_back(x);
      Mat eps(1, 1), m0(1, 1);
      eps(0, 0) = rng.gauss();
      m0(0, 0) = x0;
      direct.push_back(q_sample(m0, t, eps, s)(0, 0));
    }
    const Moments a = moments(chain), b = moments(direct);
    const double want_mean = std::sqrt(s.alpha_bar[t]) * x0;
    const double want_var = 1.0 - s.alpha_bar[t];
    INFO("t=" << t << " chain " << a.mean << "/" << a.var << " direct " << b.mean << "/" << b.var);
    const double sd = std::sqrt(want_var);
    CHECK(std::abs(a.mean - want_mean) < 0.02 * std::max(std::abs(want_mean), sd));
    CHECK(std::abs(b.mean - want_mean) < 0.02 * std::max(std::abs(want_mean), sd));
    CHECK(std::abs(a.var / want_var - 1.0) < 0.02);
    CHECK(std::abs(b.var / want_var - 1.0) < 0.02);
  }
}

TEST_CASE("reverse_step inverts q_sample at t = 1 with the true noise") {
  for (int T : {200, 120, 10}) {
    const auto s = cosine_schedule(T);
    Rng rng(4, T);
    for (int trial = 0; trial < 20; ++trial) {
      Mat x0 = random_traj(rng, 2.0), eps = random_traj(rng), zeta = random_traj(rng);
      Mat back = reverse_step(q_sample(x0, 1, eps, s), 1, eps, s, zeta);
      CHECK((back - x0).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("reverse_step is continuous as beta goes to zero") {
  // The mean of the reverse kernel (zeta = 0) and then the noise term alone.
  auto at_beta = [](double beta, bool noisy) {
    NoiseSchedule s;
    s.T_s = 2;
    s.beta = {0.0, 0.3, beta};
    s.alpha_bar = {1.0, 0.7, 0.7 * (1.0 - beta)};
    s.net_t = {0.0, 100.0, 200.0};
    Rng rng(5);
    Mat x = random_traj(rng), e = random_traj(rng), z = random_traj(rng);
    return reverse_step(x, 2, e, s, noisy ? z : Mat::Zero(kFutureLen, 2));
  };
  const Mat a = at_beta(1e-8, false), b = at_beta(1e-10, false);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-4);
  Rng rng(5);
  const Mat x = random_traj(rng);
  CHECK((a - x).cwiseAbs().maxCoeff() < 1e-6);
  random_traj(rng);
  const Mat z = random_traj(rng);
  const Mat noise_a = at_beta(1e-8, true) - a, noise_b = at_beta(1e-10, true) - b;
  CHECK((noise_a - 1e-4 * z).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((noise_b - 1e-5 * z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reverse_step with zero noise and zero prediction is a rescale") {
  const auto s = cosine_schedule(200);
  Rng rng(6);
  const Mat x = random_traj(rng), zero = Mat::Zero(kFutureLen, 2);
  for (int t : {1, 2, 77, 200}) {
    const Mat y = reverse_step(x, t, zero, s, zero);
    CHECK((y - x / std::sqrt(s.alpha(t))).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS(reverse_step(x, 0, zero, s, zero));
}

TEST_CASE("denoise_eps: zero weights, determinism and shape") {
  const auto cfg = small_config();
  Rng rng(7);
  auto p = DenoiserParams::init(cfg, 3);
  CHECK(denoise_eps(random_traj(rng), 10.0, random_cond(cfg, rng), p).norm() == 0.0);
  randomize_output(p, rng);
  const Mat x = random_traj(rng);
  const auto cond = random_cond(cfg, rng);
  const Mat a = denoise_eps(x, 37.0, cond, p);
  const Mat b = denoise_eps(x, 37.0, cond, p);
  CHECK(a == b);
  CHECK(a.rows() == kFutureLen);
  CHECK(a.cols() == 2);
  CHECK(a.norm() > 0.0);
  zero_all(p);
  CHECK(denoise_eps(x, 37.0, cond, p).norm() == 0.0);
  CHECK_THROWS_AS(denoise_eps(Mat::Zero(24, 2), 1.0, cond, p), ShapeError);
}

TEST_CASE("denoise_eps output is 25 x 2 across random configurations") {
  Rng rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    DenoiserConfig c;
    c.channels = {rng.integer(1, 6), rng.integer(1, 6), rng.integer(1, 6), rng.integer(1, 6)};
    c.cond_dim = rng.integer(1, 8);
    c.ctx_dim = rng.integer(1, 8);
    c.plan_dim = rng.integer(1, 8);
    c.svo_dim = rng.integer(1, 8);
    c.t_dim = 2 * rng.integer(1, 4);
    auto p = DenoiserParams::init(c, trial);
    randomize_output(p, rng);
    const Mat y = denoise_eps(random_traj(rng), rng.uniform(0.0, 200.0), random_cond(c, rng), p);
    CHECK(y.rows() == kFutureLen);
    CHECK(y.cols() == 2);
    CHECK(y.allFinite());
  }
}

TEST_CASE("the default denoiser has the stated widths") {
  DenoiserConfig c;
  CHECK(c.channels == std::vector<int>{64, 128, 256, 512});
  CHECK(c.dilations == std::vector<int>{1, 2, 4, 8});
  CHECK(c.svo_dim == 16);
  CHECK(c.cond_dim == 64);
  c.channels = {1, 2, 3};
  CHECK_THROWS_AS(DenoiserParams::init(c, 0), ConfigError);
}

TEST_CASE("non-finite activations are reported") {
  const auto cfg = small_config();
  Rng rng(9);
  auto p = DenoiserParams::init(cfg, 1);
  Mat x = random_traj(rng);
  x(3, 1) = std::nan("");
  CHECK_THROWS_AS(denoise_eps(x, 5.0, random_cond(cfg, rng), p), NumericError);
}

TEST_CASE("clip_eps_to_x0 bounds the implied clean sample") {
  const auto s = cosine_schedule(200);
  Rng rng(10);
  const Mat x = random_traj(rng, 3.0), e = random_traj(rng, 3.0);
  for (int t : {1, 100, 199}) {
    const Mat c = clip_eps_to_x0(x, t, e, s, 1.0);
    const double sa = std::sqrt(s.alpha_bar[t]), sb = std::sqrt(1.0 - s.alpha_bar[t]);
    const Mat x0 = (x - sb * c) / sa;
    CHECK(x0.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    // A loose limit leaves the prediction alone.
    CHECK((clip_eps_to_x0(x, t, e, s, 1e12) - e).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("sample is deterministic in seed and conditioning") {
  const auto cfg = small_config();
  Rng rng(11);
  auto p = DenoiserParams::init(cfg, 5);
  randomize_output(p, rng);
  const auto cond = random_cond(cfg, rng);
  const auto sched = respace(cosine_schedule(200), 20);
  const Mat a = sample(cond, sched, p, 42), b = sample(cond, sched, p, 42), c = sample(cond, sched, p, 43);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.rows() == kFutureLen);
  // A chain inside a batch does not depend on its neighbours.
  Mat sc(cfg.static_dim(), 3);
  sc << cond.static_part(), random_vec(cfg.static_dim(), rng), random_vec(cfg.static_dim(), rng);
  const auto batch = sample_batch(sc, sched, p, 42, {0, 9, 4});
  CHECK((batch[0] - a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-weight sampler variance matches the closed-form recursion") {
  const auto cfg = small_config();
  auto p = DenoiserParams::init(cfg, 0);
  zero_all(p);
  for (int T : {200, 50}) {
    const auto sched = T == 200 ? cosine_schedule(200) : respace(cosine_schedule(200), T);
    double want = 1.0;
    for (int t = sched.T_s; t >= 1; --t) want = want / sched.alpha(t) + (t > 1 ? sched.beta[t] : 0.0);
    const int n = 10000;
    Mat sc = Mat::Zero(cfg.static_dim(), n);
    std::vector<std::uint64_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    const auto xs = sample_batch(sc, sched, p, 12, ids);
    double worst = 0.0;
    for (int l = 0; l < kFutureLen; ++l)
      for (int c = 0; c < 2; ++c) {
        std::vector<double> v;
        for (const auto& x : xs) v.push_back(x(l, c));
        worst = std::max(worst, std::abs(moments(v).var / want - 1.0));
      }
    INFO("T_s=" << T << " closed form " << want << " worst relative error " << worst);
    CHECK(worst < 0.05);
  }
}

TEST_CASE("loss is zero when the prediction is the true noise") {
  const auto cfg = small_config();
  Rng rng(13);
  auto p = DenoiserParams::init(cfg, 1);
  const auto batch = random_batch(8, cfg, rng);
  const EpsOverride oracle = [](const Mat&, int, const Mat& eps) { return eps; };
  const auto r = diffusion_loss(batch, cosine_schedule(200), p, 3, false, &oracle);
  CHECK(r.loss == 0.0);
  for (int t : r.t) {
    CHECK(t >= 1);
    CHECK(t <= 200);
  }
  CHECK_THROWS(diffusion_loss({}, cosine_schedule(200), p, 3, false));
}

TEST_CASE("zero-weight denoiser loss is the noise dimension count") {
  const auto cfg = small_config();
  Rng rng(14);
  auto p = DenoiserParams::init(cfg, 1);
  zero_all(p);
  const auto batch = random_batch(10000, cfg, rng);
  const auto r = diffusion_loss(batch, cosine_schedule(200), p, 5, false);
  INFO("loss " << r.loss);
  CHECK(std::abs(r.loss / (2.0 * kFutureLen) - 1.0) < 0.05);
}

TEST_CASE("loss gradients match central differences on probe weights") {
  const auto cfg = small_config();
  Rng rng(15);
  auto p = DenoiserParams::init(cfg, 2);
  randomize_output(p, rng);
  // Nonzero biases so every path carries signal.
  for (auto& np : p.named())
    if (np.p->w.cols() == 1)
      for (int i = 0; i < np.p->w.rows(); ++i) np.p->w(i, 0) = 0.1 * rng.gauss();
  const auto sched = cosine_schedule(200);
  const auto batch = random_batch(3, cfg, rng);

  p.zero_grad();
  const auto r = diffusion_loss(batch, sched, p, 7, true);
  auto named = p.named();
  const double h = 1e-4;
  int probes = 0;
  double worst = 0.0;
  for (const auto& np : named) {
    Param& prm = *np.p;
    // Two random entries from every tensor.
    for (int k = 0; k < 2; ++k) {
      const int i = rng.integer(0, prm.w.rows() - 1), j = rng.integer(0, prm.w.cols() - 1);
      const double orig = prm.w(i, j);
      prm.w(i, j) = orig + h;
      const double fp = diffusion_loss(batch, sched, p, 7, false).loss;
      prm.w(i, j) = orig - h;
      const double fm = diffusion_loss(batch, sched, p, 7, false).loss;
      prm.w(i, j) = orig;
      const double fd = (fp - fm) / (2 * h), an = prm.g(i, j);
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      INFO(np.name << "(" << i << "," << j << ") fd=" << fd << " analytic=" << an);
      CHECK(rel < 1e-3);
      worst = std::max(worst, rel);
      ++probes;
    }
  }
  MESSAGE("denoiser probes " << probes << ", worst relative error " << worst);
  CHECK(probes >= 20);

  // Gradient with respect to the static conditioning.
  for (int k = 0; k < 10; ++k) {
    const int i = rng.integer(0, cfg.static_dim() - 1), b = rng.integer(0, 2);
    auto plus = batch, minus = batch;
    plus[b].static_cond(i) += h;
    minus[b].static_cond(i) -= h;
    const double fd = (diffusion_loss(plus, sched, p, 7, false).loss -
                       diffusion_loss(minus, sched, p, 7, false).loss) / (2 * h);
    const double an = r.d_static(i, b);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-3);
  }
}

TEST_CASE("loss and gradients do not depend on batch order") {
  const auto cfg = small_config();
  Rng rng(16);
  auto p = DenoiserParams::init(cfg, 4);
  randomize_output(p, rng);
  const auto sched = cosine_schedule(200);
  auto batch = random_batch(9, cfg, rng);
  p.zero_grad();
  const auto a = diffusion_loss(batch, sched, p, 21, true);
  std::vector<Mat> ga;
  for (auto& np : p.named()) ga.push_back(np.p->g);

  std::vector<int> perm(batch.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<LossItem> shuffled;
  for (int i : perm) shuffled.push_back(batch[i]);
  p.zero_grad();
  const auto b = diffusion_loss(shuffled, sched, p, 21, true);
  CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-12));
  for (int k = 0; k < static_cast<int>(perm.size()); ++k) {
    CHECK(b.t[k] == a.t[perm[k]]);
    CHECK((b.d_static.col(k) - a.d_static.col(perm[k])).cwiseAbs().maxCoeff() < 1e-12);
  }
  int idx = 0;
  for (auto& np : p.named()) {
    const double scale = std::max(1.0, ga[idx].cwiseAbs().maxCoeff());
    CHECK((np.p->g - ga[idx]).cwiseAbs().maxCoeff() < 1e-10 * scale);
    ++idx;
  }
}

TEST_CASE("curriculum step count") {
  CHECK(curriculum_steps(0.25) == 100);
  CHECK(curriculum_steps(3.0) == 100);
  CHECK(curriculum_steps(0.01) == 200);
  CHECK(curriculum_steps(0.0) == 200);
  CHECK(curriculum_steps(0.13) == 150);
  int prev = curriculum_steps(0.0);
  for (int i = 1; i <= 400; ++i) {
    const int s = curriculum_steps(i * 0.001);
    CHECK(s <= prev);
    CHECK(s >= 100);
    CHECK(s <= 200);
    prev = s;
  }
}

TEST_CASE("timestep embedding") {
  const Vec e0 = timestep_embedding(0.0, 64);
  CHECK(e0.head(32).norm() == 0.0);
  CHECK((e0.tail(32).array() == 1.0).all());
  const Vec e = timestep_embedding(123.0, 64);
  CHECK(e(0) == doctest::Approx(std::sin(123.0)));
  CHECK(e(32) == doctest::Approx(std::cos(123.0)));
  for (int i = 0; i < 32; ++i) CHECK(e(i) * e(i) + e(32 + i) * e(32 + i) == doctest::Approx(1.0));
}

TEST_CASE("trajectory stacking round-trips") {
  Rng rng(17);
  std::vector<Mat> xs{random_traj(rng), random_traj(rng), random_traj(rng)};
  const Mat X = stack_trajectories(xs);
  CHECK(X.rows() == 2);
  CHECK(X.cols() == 3 * kFutureLen);
  CHECK(X(1, kFutureLen + 4) == xs[1](4, 1));
  const auto back = unstack_trajectories(X);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == xs[i]);
}
