#include <algorithm>
#include <cmath>
#include <string>

#include "socialtraj/data.hpp"
#include "socialtraj/svo.hpp"

namespace socialtraj {

namespace {

constexpr double kLaneWidth = 3.5;
constexpr int kSimFrames = kClipLen;

struct EgoScript {
  ScenarioKind kind;
  // merge
  int merge_start = 0;
  int accel_frame = 0;
  double accel = 0.0;
  // follow
  int brake_start = 0;
  int brake_len = 0;
  double brake = 0.0;
  // overtake
  double cut_gap = 0.0;
  int cut_start = -1;
};

double cosine_blend(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return 0.5 + 0.5 * std::cos(kPi * s);
}

// Advances the ego by one frame. The overtaking ego reacts to the SV position.
KinematicState ego_step(const KinematicState& e, const KinematicState& sv, int f, EgoScript& sc) {
  KinematicState n = e;
  double a = 0.0;
  switch (sc.kind) {
    case ScenarioKind::kMerge:
      a = f >= sc.accel_frame ? sc.accel : 0.0;
      n.y = kLaneWidth * cosine_blend((f + 1 - sc.merge_start) / 15.0);
      break;
    case ScenarioKind::kFollow:
      a = (f >= sc.brake_start && f < sc.brake_start + sc.brake_len) ? -sc.brake : 0.0;
      break;
    case ScenarioKind::kOvertake:
      if (sc.cut_start < 0 && e.x - sv.x >= sc.cut_gap) sc.cut_start = f;
      n.y = sc.cut_start < 0 ? kLaneWidth
                             : kLaneWidth * cosine_blend((f + 1 - sc.cut_start) / 10.0);
      a = 0.0;
      break;
  }
  n.x = e.x + e.v * kClipDt + 0.5 * a * kClipDt * kClipDt;
  n.v = std::max(0.0, e.v + a * kClipDt);
  n.a = a;
  return n;
}

const double kActionOrder[] = {0.0, -1.0, 1.0, -2.0, 2.0, -3.0, 3.0};

}  // namespace

std::vector<Clip> generate_synthetic(const SyntheticScenarioSpec& spec, int n_clips) {
  if (!(spec.true_alpha >= 0.0 && spec.true_alpha <= kHalfPi))
    throw std::invalid_argument("generate_synthetic: true_alpha outside [0, pi/2]");
  if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("generate_synthetic: negative noise");
  if (spec.alpha_spread < 0.0) throw std::invalid_argument("generate_synthetic: negative spread");
  const RewardModel model;
  std::vector<Clip> clips;
  clips.reserve(std::max(0, n_clips));
  for (int i = 0; i < n_clips; ++i) {
    Rng rng(spec.seed, static_cast<std::uint64_t>(i),
            0x73796e00 + static_cast<std::uint64_t>(spec.scenario_kind));
    double alpha = spec.true_alpha;
    if (spec.alpha_spread > 0.0)
      alpha = std::clamp(rng.uniform(alpha - spec.alpha_spread, alpha + spec.alpha_spread), 0.0,
                         kHalfPi);
    const double v_des = rng.uniform(8.0, 12.0);

    EgoScript sc;
    sc.kind = spec.scenario_kind;
    KinematicState ego;
    switch (spec.scenario_kind) {
      case ScenarioKind::kMerge:
        ego.x = rng.uniform(0.0, 14.0);
        ego.y = kLaneWidth;
        ego.v = v_des - rng.uniform(-1.0, 4.0);
        sc.merge_start = rng.integer(-3, 5);
        sc.accel_frame = sc.merge_start + 10 + rng.integer(0, 15);
        sc.accel = rng.uniform(0.0, 1.5);
        ego.y = kLaneWidth * cosine_blend(-sc.merge_start / 15.0);
        break;
      case ScenarioKind::kFollow:
        ego.x = rng.uniform(12.0, 25.0);
        ego.y = 0.0;
        ego.v = v_des - rng.uniform(0.0, 3.0);
        sc.brake_start = rng.integer(2, 20);
        sc.brake_len = rng.integer(5, 10);
        sc.brake = rng.uniform(0.5, 2.0);
        break;
      case ScenarioKind::kOvertake:
        ego.x = rng.uniform(-20.0, -8.0);
        ego.y = kLaneWidth;
        ego.v = v_des + rng.uniform(2.0, 5.0);
        sc.cut_gap = rng.uniform(4.0, 10.0);
        break;
    }

    std::vector<KinematicState> sv(kSimFrames), eg(kSimFrames + 1);
    sv[0] = {0.0, 0.0, v_des, 0.0};
    eg[0] = ego;
    const double ca = std::cos(alpha), sa = std::sin(alpha);
    for (int f = 0; f < kSimFrames; ++f) {
      eg[f + 1] = ego_step(eg[f], sv[f], f, sc);
      NeighborState nb;
      nb.x = eg[f].x;
      nb.y = eg[f].y;
      nb.v = eg[f].v;
      nb.vy = f >= 1 ? (eg[f].y - eg[f - 1].y) / kClipDt : (eg[1].y - eg[0].y) / kClipDt;
      const std::vector<NeighborState> nbs{nb};
      double best_r = 0.0, best_a = 0.0;
      bool first = true;
      for (double a : kActionOrder) {
        const auto f_std = standardize(raw_reward_features(sv[f], a, v_des, nbs, model), Vec(), model);
        const double r = f_std.r_i * ca + f_std.r_g * sa;
        if (first || r > best_r + 1e-12) {
          best_r = r;
          best_a = a;
          first = false;
        }
      }
      sv[f].a = best_a;
      if (f + 1 < kSimFrames) {
        auto& s = sv[f + 1];
        s.y = sv[f].y;
        s.a = 0.0;
        const double v1 = sv[f].v + best_a * kClipDt;
        if (v1 >= 0.0) {
          s.x = sv[f].x + sv[f].v * kClipDt + 0.5 * best_a * kClipDt * kClipDt;
          s.v = v1;
        } else {
          const double ts = -sv[f].v / best_a;
          s.x = sv[f].x + sv[f].v * ts + 0.5 * best_a * ts * ts;
          s.v = 0.0;
        }
      }
    }
    // ego acceleration is recorded at the frame it is applied
    for (int f = 0; f < kSimFrames; ++f) eg[f].a = eg[f + 1].a;

    Rng noise(spec.seed, static_cast<std::uint64_t>(i), 0x6e6f6973);
    auto noisy = [&](KinematicState s) {
      if (spec.noise_std > 0.0) {
        s.x += spec.noise_std * noise.gauss();
        s.y += spec.noise_std * noise.gauss();
      }
      return s;
    };
    for (auto& s : sv) s = noisy(s);
    for (int f = 0; f < kSimFrames; ++f) eg[f] = noisy(eg[f]);

    const KinematicState anchor = sv[kHistoryLen - 1];
    Clip clip;
    clip.dt = kClipDt;
    clip.target_history.agent_id = "sv";
    clip.ego_history.agent_id = "ego";
    for (int f = 0; f < kHistoryLen; ++f) {
      auto s = sv[f], e = eg[f];
      s.x -= anchor.x;
      s.y -= anchor.y;
      e.x -= anchor.x;
      e.y -= anchor.y;
      clip.target_history.states.push_back(s);
      clip.ego_history.states.push_back(e);
    }
    clip.target_future.resize(kFutureLen, 2);
    clip.ego_plan.resize(kFutureLen, 2);
    for (int k = 0; k < kFutureLen; ++k) {
      const auto& s = sv[kHistoryLen + k];
      const auto& e = eg[kHistoryLen + k];
      clip.target_future(k, 0) = s.x - anchor.x;
      clip.target_future(k, 1) = s.y - anchor.y;
      clip.ego_plan(k, 0) = e.x - anchor.x;
      clip.ego_plan(k, 1) = e.y - anchor.y;
    }
    clip.meta.true_alpha = alpha;
    clip.meta.kind = to_string(spec.scenario_kind);
    clip.meta.source = "syn-" + to_string(spec.scenario_kind) + "-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    clip.meta.t0 = 0.0;
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace socialtraj
