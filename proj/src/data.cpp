#include "socialtraj/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace socialtraj {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kMerge: return "merge";
    case ScenarioKind::kFollow: return "follow";
    case ScenarioKind::kOvertake: return "overtake";
  }
  return "merge";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "merge") return ScenarioKind::kMerge;
  if (s == "follow") return ScenarioKind::kFollow;
  if (s == "overtake") return ScenarioKind::kOvertake;
  throw UsageError("unknown scenario kind: " + s);
}

TableSchema TableSchema::identity(double rate_hz) {
  TableSchema s;
  for (const char* c : {"agent_id", "frame", "x", "y", "v", "a"}) s.columns[c] = c;
  s.rate_hz = rate_hz;
  return s;
}

TableSchema TableSchema::from_config(const KeyValueConfig& cfg) {
  TableSchema s = identity(cfg.get_double("rate_hz", 10.0));
  for (const char* c : {"agent_id", "frame", "x", "y", "v", "a"})
    s.columns[c] = cfg.get_string(c, c);
  return s;
}

namespace {

std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> out;
  if (delim == ' ') {
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    auto b = s.find_first_not_of(" \t\"");
    auto e = s.find_last_not_of(" \t\"");
    s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

double parse_number(const std::string& s, int lineno) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw MalformedInputError("line " + std::to_string(lineno) + ": not a number: '" + s + "'");
  }
}

}  // namespace

std::vector<Trajectory> load_table(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot read table: " + path);
  if (!(schema.rate_hz > 0.0)) throw SchemaError("schema rate_hz must be positive");
  std::string header;
  if (!std::getline(in, header)) throw SchemaError("table has no header row: " + path);
  const char delim = header.find(',') != std::string::npos    ? ','
                     : header.find('\t') != std::string::npos ? '\t'
                                                               : ' ';
  const auto names = split_row(header, delim);
  std::map<std::string, int> col;
  for (const char* c : {"agent_id", "frame", "x", "y", "v", "a"}) {
    auto it = schema.columns.find(c);
    const std::string src = it == schema.columns.end() ? c : it->second;
    auto pos = std::find(names.begin(), names.end(), src);
    if (pos == names.end())
      throw SchemaError(std::string("missing column for '") + c + "': " + src);
    col[c] = static_cast<int>(pos - names.begin());
  }

  struct Row {
    long frame;
    KinematicState s;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::vector<std::string> order;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_row(line, delim);
    if (static_cast<int>(f.size()) != static_cast<int>(names.size()))
      throw MalformedInputError("line " + std::to_string(lineno) + ": expected " +
                                std::to_string(names.size()) + " fields");
    const std::string id = f[col["agent_id"]];
    const double frame = parse_number(f[col["frame"]], lineno);
    if (frame != std::floor(frame))
      throw MalformedInputError("line " + std::to_string(lineno) + ": non-integer frame");
    Row r{static_cast<long>(frame),
          {parse_number(f[col["x"]], lineno), parse_number(f[col["y"]], lineno),
           parse_number(f[col["v"]], lineno), parse_number(f[col["a"]], lineno)}};
    if (!std::isfinite(r.s.x) || !std::isfinite(r.s.y) || !std::isfinite(r.s.v) ||
        !std::isfinite(r.s.a))
      throw MalformedInputError("line " + std::to_string(lineno) + ": non-finite state");
    if (r.s.v < 0.0) throw MalformedInputError("line " + std::to_string(lineno) + ": negative speed");
    auto& vec = rows[id];
    if (vec.empty()) order.push_back(id);
    if (!vec.empty() && r.frame <= vec.back().frame)
      throw MalformedInputError("agent " + id + ": frames not strictly increasing at line " +
                                std::to_string(lineno));
    vec.push_back(r);
  }

  std::vector<Trajectory> out;
  for (const auto& id : order) {
    const auto& vec = rows[id];
    long step = vec.size() > 1 ? vec[1].frame - vec[0].frame : 1;
    for (std::size_t i = 1; i < vec.size(); ++i)
      if (vec[i].frame - vec[i - 1].frame != step)
        throw MalformedInputError("agent " + id + ": irregular frame spacing");
    Trajectory t;
    t.agent_id = id;
    t.dt = static_cast<double>(step) / schema.rate_hz;
    t.t0 = static_cast<double>(vec.front().frame) / schema.rate_hz;
    for (const auto& r : vec) t.states.push_back(r.s);
    out.push_back(std::move(t));
  }
  return out;
}

Trajectory resample(const Trajectory& traj, double target_hz) {
  if (!(target_hz > 0.0)) throw UnsupportedRateError("target rate must be positive");
  const double ratio = traj.rate_hz() / target_hz;
  const long k = std::lround(ratio);
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-6 * std::max(1.0, ratio))
    throw UnsupportedRateError("source rate " + std::to_string(traj.rate_hz()) +
                               " Hz is not an integer multiple of " + std::to_string(target_hz) +
                               " Hz");
  Trajectory out;
  out.agent_id = traj.agent_id;
  out.dt = 1.0 / target_hz;
  out.t0 = traj.t0;
  for (std::size_t i = 0; i < traj.states.size(); i += static_cast<std::size_t>(k))
    out.states.push_back(traj.states[i]);
  return out;
}

ClipCutConfig ClipCutConfig::from_config(const KeyValueConfig& cfg) {
  ClipCutConfig c;
  c.stride = static_cast<int>(cfg.get_int("stride", c.stride));
  c.neighbor_radius = cfg.get_double("neighbor_radius", c.neighbor_radius);
  if (c.stride < 1) throw ConfigError("stride must be >= 1");
  if (!(c.neighbor_radius > 0.0)) throw ConfigError("neighbor_radius must be positive");
  return c;
}

int expected_clip_count(int covisible, int stride) {
  if (covisible < kClipLen) return 0;
  return (covisible - kClipLen) / stride + 1;
}

namespace {

// Index of absolute time t in traj, or -1 when outside its support.
int index_at(const Trajectory& tr, double t) {
  const double f = (t - tr.t0) / tr.dt;
  const long i = std::lround(f);
  if (std::abs(f - static_cast<double>(i)) > 1e-6 || i < 0 || i >= tr.size()) return -1;
  return static_cast<int>(i);
}

}  // namespace

std::vector<Clip> cut_clips(const std::vector<Trajectory>& trajs, const std::string& target_id,
                            const std::string& ego_id, const ClipCutConfig& cfg) {
  if (cfg.stride < 1) throw std::invalid_argument("cut_clips: stride must be >= 1");
  const Trajectory* target = nullptr;
  const Trajectory* ego = nullptr;
  for (const auto& t : trajs) {
    if (t.agent_id == target_id) target = &t;
    if (t.agent_id == ego_id) ego = &t;
  }
  if (!target || !ego) throw std::invalid_argument("cut_clips: target or ego id not found");
  for (const Trajectory* t : {target, ego})
    if (std::abs(t->dt - kClipDt) > 1e-9)
      throw UnsupportedRateError("cut_clips: trajectories must be resampled to 5 Hz first");

  const double start = std::max(target->t0, ego->t0);
  const double end = std::min(target->t0 + (target->size() - 1) * target->dt,
                              ego->t0 + (ego->size() - 1) * ego->dt);
  std::vector<Clip> clips;
  if (end < start) return clips;
  const int covisible = static_cast<int>(std::lround((end - start) / kClipDt)) + 1;
  const int n = expected_clip_count(covisible, cfg.stride);
  for (int c = 0; c < n; ++c) {
    const double t_first = start + c * cfg.stride * kClipDt;
    const double t_split = t_first + (kHistoryLen - 1) * kClipDt;
    const int ti = index_at(*target, t_first), ei = index_at(*ego, t_first);
    if (ti < 0 || ei < 0) continue;
    const auto& anchor = target->states[ti + kHistoryLen - 1];
    auto shift = [&](KinematicState s) {
      s.x -= anchor.x;
      s.y -= anchor.y;
      return s;
    };
    auto history_of = [&](const Trajectory& tr, int i0) {
      Trajectory h;
      h.agent_id = tr.agent_id;
      h.dt = kClipDt;
      h.t0 = t_first;
      for (int i = 0; i < kHistoryLen; ++i) h.states.push_back(shift(tr.states[i0 + i]));
      return h;
    };
    auto future_of = [&](const Trajectory& tr, int i0) {
      Positions p(kFutureLen, 2);
      for (int i = 0; i < kFutureLen; ++i) {
        const auto s = shift(tr.states[i0 + kHistoryLen + i]);
        p(i, 0) = s.x;
        p(i, 1) = s.y;
      }
      return p;
    };
    Clip clip;
    clip.dt = kClipDt;
    clip.target_history = history_of(*target, ti);
    clip.ego_history = history_of(*ego, ei);
    clip.target_future = future_of(*target, ti);
    clip.ego_plan = future_of(*ego, ei);
    clip.meta.source = target_id;
    clip.meta.t0 = t_first;
    for (const auto& other : trajs) {
      if (&other == target || &other == ego) continue;
      if (std::abs(other.dt - kClipDt) > 1e-9) continue;
      const int oi = index_at(other, t_first);
      const int os = index_at(other, t_split);
      if (oi < 0 || os < 0 || os - oi != kHistoryLen - 1) continue;
      const auto& s = other.states[os];
      if (std::hypot(s.x - anchor.x, s.y - anchor.y) > cfg.neighbor_radius) continue;
      clip.neighbor_histories.push_back(history_of(other, oi));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

DatasetSplit split_dataset(const std::vector<Clip>& clips, std::uint64_t seed) {
  const int n = static_cast<int>(clips.size());
  if (n < 10) throw std::invalid_argument("split_dataset: need at least 10 clips");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x73706c);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  const int n_train = static_cast<int>(std::floor(0.7 * n + 0.5));
  const int n_val = static_cast<int>(std::floor(0.1 * n + 0.5));
  DatasetSplit s;
  for (int i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.validation : s.test);
    dst.push_back(clips[idx[i]]);
  }
  return s;
}

void validate_clip(const Clip& clip) {
  auto check_hist = [&](const Trajectory& t, const char* what) {
    if (t.size() != kHistoryLen)
      throw MalformedInputError(std::string(what) + " must have 15 frames");
    if (std::abs(t.dt - kClipDt) > 1e-9) throw MalformedInputError(std::string(what) + " dt != 0.2");
    for (const auto& s : t.states)
      if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.v) || !std::isfinite(s.a) ||
          s.v < 0.0)
        throw MalformedInputError(std::string(what) + " has an invalid state");
  };
  check_hist(clip.target_history, "target_history");
  check_hist(clip.ego_history, "ego_history");
  for (const auto& n : clip.neighbor_histories) check_hist(n, "neighbor history");
  if (clip.ego_plan.rows() != kFutureLen || clip.ego_plan.cols() != 2)
    throw MalformedInputError("ego_plan must be 25 x 2");
  if (clip.target_future.rows() != kFutureLen || clip.target_future.cols() != 2)
    throw MalformedInputError("target_future must be 25 x 2");
  if (!clip.ego_plan.allFinite() || !clip.target_future.allFinite())
    throw MalformedInputError("non-finite future positions");
  if (std::abs(clip.dt - kClipDt) > 1e-9) throw MalformedInputError("clip dt must be 0.2 s");
}

// --- serialization -----------------------------------------------------------

namespace {

json traj_to_json(const Trajectory& t) {
  json states = json::array();
  for (const auto& s : t.states) states.push_back({s.x, s.y, s.v, s.a});
  return {{"agent_id", t.agent_id}, {"dt", t.dt}, {"t0", t.t0}, {"states", states}};
}

Trajectory traj_from_json(const json& j) {
  Trajectory t;
  t.agent_id = j.at("agent_id").get<std::string>();
  t.dt = j.at("dt").get<double>();
  t.t0 = j.value("t0", 0.0);
  for (const auto& s : j.at("states")) {
    if (s.size() != 4) throw MalformedInputError("state record must have 4 fields");
    t.states.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>(),
                        s[3].get<double>()});
  }
  return t;
}

json pos_to_json(const Positions& p) {
  json a = json::array();
  for (int i = 0; i < p.rows(); ++i) a.push_back({p(i, 0), p(i, 1)});
  return a;
}

Positions pos_from_json(const json& j) {
  Positions p(static_cast<int>(j.size()), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != 2) throw MalformedInputError("position record must have 2 fields");
    p(i, 0) = j[i][0].get<double>();
    p(i, 1) = j[i][1].get<double>();
  }
  return p;
}

}  // namespace

std::string clip_to_json(const Clip& clip) {
  json meta = {{"kind", clip.meta.kind}, {"source", clip.meta.source}, {"t0", clip.meta.t0}};
  if (clip.meta.true_alpha) meta["true_alpha"] = *clip.meta.true_alpha;
  json neighbors = json::array();
  for (const auto& n : clip.neighbor_histories) neighbors.push_back(traj_to_json(n));
  json j = {{"format", "socialtraj.clip"},
            {"version", 1},
            {"dt", clip.dt},
            {"target_history", traj_to_json(clip.target_history)},
            {"ego_history", traj_to_json(clip.ego_history)},
            {"ego_plan", pos_to_json(clip.ego_plan)},
            {"neighbors", neighbors},
            {"target_future", pos_to_json(clip.target_future)},
            {"meta", meta}};
  return j.dump(1);
}

Clip clip_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "socialtraj.clip")
      throw MalformedInputError("not a clip record");
    if (j.value("version", 0) != 1) throw MalformedInputError("unsupported clip record version");
    Clip c;
    c.dt = j.at("dt").get<double>();
    c.target_history = traj_from_json(j.at("target_history"));
    c.ego_history = traj_from_json(j.at("ego_history"));
    c.ego_plan = pos_from_json(j.at("ego_plan"));
    for (const auto& n : j.at("neighbors")) c.neighbor_histories.push_back(traj_from_json(n));
    c.target_future = pos_from_json(j.at("target_future"));
    const auto& m = j.at("meta");
    c.meta.kind = m.value("kind", "");
    c.meta.source = m.value("source", "");
    c.meta.t0 = m.value("t0", 0.0);
    if (m.contains("true_alpha")) c.meta.true_alpha = m.at("true_alpha").get<double>();
    validate_clip(c);
    return c;
  } catch (const json::exception& e) {
    throw MalformedInputError(std::string("clip record: ") + e.what());
  }
}

void write_clips(const std::string& dir, const std::vector<Clip>& clips) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PathError("cannot create directory " + dir + ": " + ec.message());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%06zu.json", i);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw PathError("cannot write clip file in " + dir);
    out << clip_to_json(clips[i]) << "\n";
  }
}

std::vector<Clip> read_clips(const std::string& dir) {
  if (!fs::is_directory(dir)) throw PathError("clip directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Clip> clips;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      clips.push_back(clip_from_json(ss.str()));
    } catch (const MalformedInputError& e) {
      throw MalformedInputError(f.string() + ": " + e.what());
    }
  }
  return clips;
}

}  // namespace socialtraj
