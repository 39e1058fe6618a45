#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "socialtraj/common.hpp"

namespace socialtraj {

inline constexpr int kHistoryLen = 15;
inline constexpr int kFutureLen = 25;
inline constexpr int kClipLen = kHistoryLen + kFutureLen;
inline constexpr double kClipHz = 5.0;
inline constexpr double kClipDt = 1.0 / kClipHz;

struct KinematicState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double a = 0.0;
};

struct Trajectory {
  std::string agent_id;
  double dt = kClipDt;
  // Time of states[0] in seconds; lets agents be aligned on a common clock.
  double t0 = 0.0;
  std::vector<KinematicState> states;

  int size() const { return static_cast<int>(states.size()); }
  double rate_hz() const { return 1.0 / dt; }
};

// n x 2 matrix of (x, y) positions.
using Positions = Mat;

struct ClipMeta {
  std::optional<double> true_alpha;
  std::string kind;
  std::string source;  // target agent id, groups clips of one SV into a stream
  double t0 = 0.0;     // absolute time of the first clip frame
};

struct Clip {
  Trajectory target_history;
  Trajectory ego_history;
  Positions ego_plan;  // kFutureLen x 2
  std::vector<Trajectory> neighbor_histories;
  Positions target_future;  // kFutureLen x 2
  double dt = kClipDt;
  ClipMeta meta;
};

struct DatasetSplit {
  std::vector<Clip> train;
  std::vector<Clip> validation;
  std::vector<Clip> test;
};

enum class ScenarioKind { kMerge, kFollow, kOvertake };

struct SyntheticScenarioSpec {
  double true_alpha = kPi / 4.0;
  ScenarioKind scenario_kind = ScenarioKind::kMerge;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  // Per-clip alpha drawn uniformly from true_alpha +- alpha_spread (clamped to
  // the support); 0 keeps every clip at true_alpha.
  double alpha_spread = 0.0;
};

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

// Column mapping: canonical name -> source column. Canonical names are
// agent_id, frame, x, y, v, a.
struct TableSchema {
  std::map<std::string, std::string> columns;
  double rate_hz = 10.0;

  static TableSchema identity(double rate_hz = 10.0);
  static TableSchema from_config(const KeyValueConfig& cfg);
};

std::vector<Trajectory> load_table(const std::string& path, const TableSchema& schema);

Trajectory resample(const Trajectory& traj, double target_hz);

struct ClipCutConfig {
  int stride = 5;
  double neighbor_radius = 30.0;

  static ClipCutConfig from_config(const KeyValueConfig& cfg);
};

std::vector<Clip> cut_clips(const std::vector<Trajectory>& trajs, const std::string& target_id,
                            const std::string& ego_id, const ClipCutConfig& cfg = {});

// Closed-form window count for a co-visible span of `covisible` frames.
int expected_clip_count(int covisible, int stride);

DatasetSplit split_dataset(const std::vector<Clip>& clips, std::uint64_t seed);

std::vector<Clip> generate_synthetic(const SyntheticScenarioSpec& spec, int n_clips);

// Checks the length/dt invariants of a clip; throws MalformedInputError.
void validate_clip(const Clip& clip);

// Clip records: one JSON file per clip.
std::string clip_to_json(const Clip& clip);
Clip clip_from_json(const std::string& text);
void write_clips(const std::string& dir, const std::vector<Clip>& clips);
std::vector<Clip> read_clips(const std::string& dir);

}  // namespace socialtraj
