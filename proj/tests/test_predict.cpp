#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "socialtraj/predict.hpp"

using namespace socialtraj;

namespace {

Mat random_traj(Rng& rng, int n = kFutureLen, double scale = 1.0) {
  Mat m(n, 2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) m(i, c) = scale * rng.gauss();
  return m;
}

std::vector<std::vector<Mat>> random_groups(Rng& rng, int G, int n, int T) {
  std::vector<std::vector<Mat>> g(G);
  for (auto& grp : g) {
    const Mat center = random_traj(rng, T, 3.0);
    for (int j = 0; j < n; ++j) grp.push_back(center + random_traj(rng, T));
  }
  return g;
}

double min_eig(const Cov2& c) {
  Eigen::SelfAdjointEigenSolver<Cov2> es(c);
  return es.eigenvalues().minCoeff();
}

// A briefly trained model, so sampler noise stays at data scale.
struct Fixture {
  std::vector<Clip> clips;
  Model model;

  Fixture() {
    SyntheticScenarioSpec spec;
    spec.seed = 9;
    spec.alpha_spread = kPi / 4.0;
    clips = generate_synthetic(spec, 24);
    TrainConfig cfg;
    cfg.denoiser.channels = {8, 8, 8, 8};
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.epochs = 60;
    cfg.seed = 5;
    auto st = init_training(cfg, clips);
    const auto cache = build_posterior_cache(clips, st.model);
    for (int e = 0; e < cfg.epochs; ++e) train_epoch(st, clips, cache);
    model = st.model;
  }
};

PredictConfig quick_config() {
  PredictConfig pc;
  pc.k = 4;
  pc.n_per_alpha = 3;
  pc.steps = 10;
  pc.hmc.n_samples = 40;
  pc.hmc.burn_in = 40;
  return pc;
}

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("decompose_covariance: two groups at (0,0) and (2,0)") {
  const int T = 3;
  Mat a = Mat::Zero(T, 2), b = Mat::Zero(T, 2);
  b.col(0).setConstant(2.0);
  const auto s = decompose_covariance({{a, a, a}, {b, b, b}});
  for (int t = 0; t < T; ++t) {
    CHECK(s.epistemic[t](0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.epistemic[t](1, 1) == 0.0);
    CHECK(s.epistemic[t](0, 1) == 0.0);
    CHECK(s.aleatoric[t].norm() == 0.0);
    CHECK(s.mean(t, 0) == 1.0);
  }
}

TEST_CASE("decompose_covariance: a single repeated group has no epistemic part") {
  Rng rng(1);
  std::vector<Mat> grp;
  for (int j = 0; j < 5; ++j) grp.push_back(random_traj(rng));
  const auto s = decompose_covariance({grp});
  for (int t = 0; t < kFutureLen; ++t) {
    CHECK(s.epistemic[t].norm() == 0.0);
    CHECK(s.total[t] == s.aleatoric[t]);
  }
}

TEST_CASE("decompose_covariance matches a brute-force grouped computation") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int G = rng.integer(2, 6), n = rng.integer(2, 5), T = rng.integer(1, kFutureLen);
    const auto groups = random_groups(rng, G, n, T);
    const auto s = decompose_covariance(groups);
    for (int t = 0; t < T; ++t) {
      // Population covariances written out entry by entry.
      double gm[6][2] = {};
      double m[2] = {0, 0};
      for (int g = 0; g < G; ++g) {
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < 2; ++c) gm[g][c] += groups[g][j](t, c) / n;
        for (int c = 0; c < 2; ++c) m[c] += gm[g][c] / G;
      }
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
          double within = 0.0, between = 0.0, all = 0.0;
          for (int g = 0; g < G; ++g) {
            for (int j = 0; j < n; ++j) {
              within += (groups[g][j](t, r) - gm[g][r]) * (groups[g][j](t, c) - gm[g][c]) / (n * G);
              all += (groups[g][j](t, r) - m[r]) * (groups[g][j](t, c) - m[c]) / (n * G);
            }
            between += (gm[g][r] - m[r]) * (gm[g][c] - m[c]) / G;
          }
          CHECK(std::abs(s.aleatoric[t](r, c) - within) < 1e-9);
          CHECK(std::abs(s.epistemic[t](r, c) - between) < 1e-9);
          // Law of total covariance against the pooled sample covariance.
          CHECK(std::abs(s.total[t](r, c) - all) < 1e-6);
          CHECK(std::abs(s.total[t](r, c) - s.aleatoric[t](r, c) - s.epistemic[t](r, c)) < 1e-12);
        }
      CHECK(min_eig(s.aleatoric[t]) >= -1e-9);
      CHECK(min_eig(s.epistemic[t]) >= -1e-9);
      CHECK((s.aleatoric[t] - s.aleatoric[t].transpose()).norm() == 0.0);
    }
  }
}

TEST_CASE("decompose_covariance rejects bad input") {
  CHECK_THROWS(decompose_covariance({}));
  CHECK_THROWS(decompose_covariance({{}}));
  Rng rng(3);
  CHECK_THROWS_AS(decompose_covariance({{random_traj(rng, 5)}, {random_traj(rng, 4)}}), ShapeError);
}

TEST_CASE("predict config validation") {
  PredictConfig pc;
  CHECK_NOTHROW(pc.validate());
  CHECK(pc.k == 10);
  CHECK(pc.n_per_alpha == 3);
  pc.k = 1;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PredictConfig{};
  pc.n_per_alpha = 1;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PredictConfig{};
  pc.steps = 0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc.steps = kReferenceSteps + 1;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PredictConfig{};
  pc.posterior_scale = 0.0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
}

TEST_CASE("predict_ensemble: layout, identity and determinism") {
  auto& f = fixture();
  const auto pc = quick_config();
  const auto ens = predict_ensemble(f.clips[0], f.model, pc);
  REQUIRE(ens.samples.size() == 12);
  CHECK(ens.alphas.size() == 12);
  CHECK(ens.steps == 10);
  CHECK(!ens.degenerate);
  CHECK(ens.hmc_accept > 0.0);
  for (int i = 0; i < 12; ++i) {
    CHECK(ens.group[i] == i / 3);
    CHECK(ens.alphas[i] == ens.alphas[(i / 3) * 3]);
    CHECK(ens.alphas[i] >= 0.0);
    CHECK(ens.alphas[i] <= kHalfPi);
    CHECK(ens.samples[i].rows() == kFutureLen);
    CHECK(ens.samples[i].allFinite());
  }
  CHECK(ens.mean.rows() == kFutureLen);
  REQUIRE(ens.total.size() == static_cast<std::size_t>(kFutureLen));
  for (int t = 0; t < kFutureLen; ++t) {
    CHECK((ens.total[t] - ens.aleatoric[t] - ens.epistemic[t]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(min_eig(ens.aleatoric[t]) >= -1e-9);
    CHECK(min_eig(ens.epistemic[t]) >= -1e-9);
  }
  const auto again = predict_ensemble(f.clips[0], f.model, pc);
  for (int i = 0; i < 12; ++i) CHECK(again.samples[i] == ens.samples[i]);
  CHECK(again.alphas == ens.alphas);
  auto other = pc;
  other.seed = 1;
  CHECK(predict_ensemble(f.clips[0], f.model, other).samples[0] != ens.samples[0]);
}

TEST_CASE("predict_ensemble: a forced single alpha is degenerate") {
  auto& f = fixture();
  auto pc = quick_config();
  pc.override_svo = true;
  pc.svo_source = SvoSource::kFixed;
  pc.fixed_alpha = 0.3;
  const auto ens = predict_ensemble(f.clips[1], f.model, pc);
  CHECK(ens.degenerate);
  for (double a : ens.alphas) CHECK(a == 0.3);
  for (int g : ens.group) CHECK(g == 0);
  for (const auto& e : ens.epistemic) CHECK(e.norm() == 0.0);
}

TEST_CASE("predict_ensemble: wider posterior does not shrink epistemic spread") {
  auto& f = fixture();
  // The small model barely reacts to alpha; strengthen that path so the
  // between-group spread is driven by the draws rather than chain noise.
  Model m = f.model;
  m.denoiser.W_svo.w *= 20.0;
  double narrow = 0.0, wide = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    auto pc = quick_config();
    pc.seed = seed;
    for (double scale : {1.0, 2.0}) {
      pc.posterior_scale = scale;
      const auto ens = predict_ensemble(f.clips[seed % f.clips.size()], m, pc);
      double tr = 0.0;
      for (const auto& e : ens.epistemic) tr += e.trace();
      (scale == 1.0 ? narrow : wide) += tr / 10.0;
    }
  }
  MESSAGE("mean epistemic trace " << narrow << " -> " << wide);
  CHECK(narrow > 0.0);
  CHECK(wide >= narrow);
}

TEST_CASE("select_best on an ensemble record") {
  auto& f = fixture();
  const auto ens = predict_ensemble(f.clips[2], f.model, quick_config());
  const auto b = select_best(ens, ens.samples[5]);
  CHECK(b.index == 5);
  CHECK(b.min_ade == 0.0);
  CHECK(b.min_fde == 0.0);
}
