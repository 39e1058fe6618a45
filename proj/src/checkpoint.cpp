#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "socialtraj/train.hpp"

namespace socialtraj {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'R', 'J'};

enum class DType : std::uint8_t { kF32 = 0, kU32 = 1 };

struct Tensor {
  DType dtype = DType::kF32;
  std::uint32_t rows = 0, cols = 0;
  std::vector<std::uint32_t> words;  // f32 bit patterns or raw words
};

using TensorMap = std::map<std::string, Tensor>;

Tensor f32_tensor(const Mat& m) {
  Tensor t;
  t.rows = static_cast<std::uint32_t>(m.rows());
  t.cols = static_cast<std::uint32_t>(m.cols());
  t.words.resize(m.size());
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      t.words[c * m.rows() + r] = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
  return t;
}

// Doubles stored as pairs of raw words so they survive exactly.
Tensor f64_tensor(const std::vector<double>& xs) {
  Tensor t;
  t.dtype = DType::kU32;
  t.rows = 1;
  t.cols = static_cast<std::uint32_t>(2 * xs.size());
  for (double x : xs) {
    const auto b = std::bit_cast<std::uint64_t>(x);
    t.words.push_back(static_cast<std::uint32_t>(b));
    t.words.push_back(static_cast<std::uint32_t>(b >> 32));
  }
  return t;
}

Tensor f64_tensor(const Mat& m) {
  std::vector<double> xs(m.data(), m.data() + m.size());
  Tensor t = f64_tensor(xs);
  t.rows = static_cast<std::uint32_t>(m.rows());
  t.cols = static_cast<std::uint32_t>(2 * m.cols());
  return t;
}

Tensor u32_tensor(const std::vector<std::uint32_t>& xs) {
  Tensor t;
  t.dtype = DType::kU32;
  t.rows = 1;
  t.cols = static_cast<std::uint32_t>(xs.size());
  t.words = xs;
  return t;
}

const Tensor& need(const TensorMap& tm, const std::string& name) {
  auto it = tm.find(name);
  if (it == tm.end()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

Mat read_f32(const TensorMap& tm, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const Tensor& t = need(tm, name);
  if (t.dtype != DType::kF32 || t.rows != rows || t.cols != cols)
    throw CheckpointError("checkpoint: tensor '" + name + "' has the wrong shape or type");
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      m(r, c) = static_cast<double>(std::bit_cast<float>(t.words[c * rows + r]));
  return m;
}

std::vector<double> read_f64(const TensorMap& tm, const std::string& name, std::size_t n) {
  const Tensor& t = need(tm, name);
  if (t.dtype != DType::kU32 || t.words.size() != 2 * n)
    throw CheckpointError("checkpoint: tensor '" + name + "' has the wrong size or type");
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i)
    xs[i] = std::bit_cast<double>(static_cast<std::uint64_t>(t.words[2 * i]) |
                                  (static_cast<std::uint64_t>(t.words[2 * i + 1]) << 32));
  return xs;
}

Mat read_f64_mat(const TensorMap& tm, const std::string& name, int rows, int cols) {
  const auto xs = read_f64(tm, name, static_cast<std::size_t>(rows) * cols);
  return Eigen::Map<const Mat>(xs.data(), rows, cols);
}

std::vector<std::uint32_t> read_u32(const TensorMap& tm, const std::string& name) {
  const Tensor& t = need(tm, name);
  if (t.dtype != DType::kU32) throw CheckpointError("checkpoint: tensor '" + name + "' is not u32");
  return t.words;
}

void put_u32(std::ostream& os, std::uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}
  void take(void* dst, std::size_t n) {
    if (pos_ + n > b_.size()) throw CheckpointError("checkpoint: truncated file");
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t x;
    take(&x, 4);
    return x;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string b_;
  std::size_t pos_ = 0;
};

std::vector<double> flags_of(const TrainConfig& c) {
  const auto& v = c.variant;
  return {static_cast<double>(c.batch_size), c.lr, c.weight_decay, c.ema_decay, c.grad_clip,
          static_cast<double>(c.epochs), c.curriculum_enabled ? 1.0 : 0.0, c.gamma,
          static_cast<double>(v.svo_source), v.fixed_alpha, v.no_plan ? 1.0 : 0.0,
          v.vanilla ? 1.0 : 0.0};
}

std::vector<double> reward_of(const RewardModel& r) {
  const auto& s = r.standardization;
  return {r.w1, r.w2, r.w3, r.w4, r.h_safe, r.preview_s, r.lane_half_width, r.neighbor_radius,
          s.mean_i, s.std_i, s.mean_g, s.std_g, r.rationality, r.actions.lo, r.actions.spacing,
          static_cast<double>(r.actions.count)};
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& st_in) {
  TrainState st = st_in;
  TensorMap tm;
  auto params = st.model.named();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params[i].name;
    tm[n] = f32_tensor(params[i].p->w);
    tm["ema/" + n] = f32_tensor(st.opt.ema[i]);
    tm["adam_m/" + n] = f32_tensor(st.opt.m[i]);
    tm["adam_v/" + n] = f32_tensor(st.opt.v[i]);
  }
  const auto step = static_cast<std::uint64_t>(st.opt.step);
  tm["state.step"] = u32_tensor({static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)});
  tm["state.epoch"] = u32_tensor({static_cast<std::uint32_t>(st.epoch)});
  tm["state.seed"] = u32_tensor({static_cast<std::uint32_t>(st.cfg.seed),
                                 static_cast<std::uint32_t>(st.cfg.seed >> 32)});
  const auto& dc = st.cfg.denoiser;
  std::vector<std::uint32_t> arch;
  for (int c : dc.channels) arch.push_back(static_cast<std::uint32_t>(c));
  for (int d : dc.dilations) arch.push_back(static_cast<std::uint32_t>(d));
  for (int x : {dc.cond_dim, dc.ctx_dim, dc.plan_dim, dc.svo_dim, dc.t_dim})
    arch.push_back(static_cast<std::uint32_t>(x));
  tm["config.denoiser"] = u32_tensor(arch);
  tm["config.train"] = f64_tensor(flags_of(st.cfg));
  tm["config.schedule"] = f64_tensor(std::vector<double>{0.008, static_cast<double>(kReferenceSteps),
                                                         static_cast<double>(st.model.last_t_eff)});
  tm["config.reward"] = f64_tensor(reward_of(st.model.reward));
  const auto& nm = st.model.norm;
  tm["norm.enc_mean"] = f64_tensor(std::vector<double>(nm.enc_mean.begin(), nm.enc_mean.end()));
  tm["norm.enc_std"] = f64_tensor(std::vector<double>(nm.enc_std.begin(), nm.enc_std.end()));
  tm["norm.future_mean"] = f64_tensor(nm.future_mean);
  tm["norm.future_std"] = f64_tensor(nm.future_std);
  tm["norm.plan_mean"] = f64_tensor(nm.plan_mean);
  tm["norm.plan_std"] = f64_tensor(nm.plan_std);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw PathError("checkpoint: cannot write '" + path + "'");
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(tm.size()));
    for (const auto& [name, t] : tm) {
      put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const auto tag = static_cast<char>(t.dtype);
      os.write(&tag, 1);
      put_u32(os, t.rows);
      put_u32(os, t.cols);
      os.write(reinterpret_cast<const char*>(t.words.data()),
               static_cast<std::streamsize>(4 * t.words.size()));
    }
    if (!os) throw PathError("checkpoint: write failed for '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw PathError("checkpoint: cannot move into place '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PathError("checkpoint: cannot open '" + path + "'");
  Reader rd(std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>()));
  char magic[4];
  rd.take(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic in '" + path + "'");
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint: version " + std::to_string(version) + " is incompatible (expected " +
                               std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t count = rd.u32();
  TensorMap tm;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = rd.u32();
    if (len > 4096) throw CheckpointError("checkpoint: corrupt tensor name");
    std::string name(len, '\0');
    rd.take(name.data(), len);
    std::uint8_t tag;
    rd.take(&tag, 1);
    if (tag > 1) throw CheckpointError("checkpoint: unknown dtype in '" + name + "'");
    Tensor t;
    t.dtype = static_cast<DType>(tag);
    t.rows = rd.u32();
    t.cols = rd.u32();
    const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.cols;
    if (n > (1ULL << 31)) throw CheckpointError("checkpoint: corrupt tensor size");
    t.words.resize(n);
    rd.take(t.words.data(), 4 * n);
    tm[name] = std::move(t);
  }
  if (!rd.done()) throw CheckpointError("checkpoint: trailing bytes");

  TrainState st;
  const auto arch = read_u32(tm, "config.denoiser");
  if (arch.size() != 13) throw CheckpointError("checkpoint: bad denoiser config");
  auto& dc = st.cfg.denoiser;
  dc.channels.assign(arch.begin(), arch.begin() + 4);
  dc.dilations.assign(arch.begin() + 4, arch.begin() + 8);
  dc.cond_dim = static_cast<int>(arch[8]);
  dc.ctx_dim = static_cast<int>(arch[9]);
  dc.plan_dim = static_cast<int>(arch[10]);
  dc.svo_dim = static_cast<int>(arch[11]);
  dc.t_dim = static_cast<int>(arch[12]);
  const auto f = read_f64(tm, "config.train", 12);
  st.cfg.batch_size = static_cast<int>(f[0]);
  st.cfg.lr = f[1];
  st.cfg.weight_decay = f[2];
  st.cfg.ema_decay = f[3];
  st.cfg.grad_clip = f[4];
  st.cfg.epochs = static_cast<int>(f[5]);
  st.cfg.curriculum_enabled = f[6] != 0.0;
  st.cfg.gamma = f[7];
  st.cfg.variant.svo_source = static_cast<SvoSource>(static_cast<int>(f[8]));
  st.cfg.variant.fixed_alpha = f[9];
  st.cfg.variant.no_plan = f[10] != 0.0;
  st.cfg.variant.vanilla = f[11] != 0.0;
  const auto seed = read_u32(tm, "state.seed");
  const auto step = read_u32(tm, "state.step");
  const auto epoch = read_u32(tm, "state.epoch");
  if (seed.size() != 2 || step.size() != 2 || epoch.size() != 1)
    throw CheckpointError("checkpoint: bad state words");
  st.cfg.seed = static_cast<std::uint64_t>(seed[0]) | (static_cast<std::uint64_t>(seed[1]) << 32);
  st.opt.step = static_cast<long>(static_cast<std::uint64_t>(step[0]) | (static_cast<std::uint64_t>(step[1]) << 32));
  st.epoch = static_cast<int>(epoch[0]);
  try {
    st.cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid stored config: ") + e.what());
  }

  Normalization nm;
  const auto em = read_f64(tm, "norm.enc_mean", 4), es = read_f64(tm, "norm.enc_std", 4);
  std::copy(em.begin(), em.end(), nm.enc_mean.begin());
  std::copy(es.begin(), es.end(), nm.enc_std.begin());
  nm.future_mean = read_f64_mat(tm, "norm.future_mean", kFutureLen, 2);
  nm.future_std = read_f64_mat(tm, "norm.future_std", kFutureLen, 2);
  nm.plan_mean = read_f64_mat(tm, "norm.plan_mean", kFutureLen, 2);
  nm.plan_std = read_f64_mat(tm, "norm.plan_std", kFutureLen, 2);
  st.model = Model::init(st.cfg, nm);
  const auto sc = read_f64(tm, "config.schedule", 3);
  st.model.last_t_eff = static_cast<int>(sc[2]);
  const auto r = read_f64(tm, "config.reward", 16);
  auto& rw = st.model.reward;
  rw.w1 = r[0];
  rw.w2 = r[1];
  rw.w3 = r[2];
  rw.w4 = r[3];
  rw.h_safe = r[4];
  rw.preview_s = r[5];
  rw.lane_half_width = r[6];
  rw.neighbor_radius = r[7];
  rw.standardization = {r[8], r[9], r[10], r[11]};
  rw.rationality = r[12];
  rw.actions.lo = r[13];
  rw.actions.spacing = r[14];
  rw.actions.count = static_cast<int>(r[15]);

  for (auto& np : st.model.named()) {
    const auto rows = np.p->w.rows(), cols = np.p->w.cols();
    np.p->w = read_f32(tm, np.name, rows, cols);
    np.p->g = Mat::Zero(rows, cols);
    st.opt.ema.push_back(read_f32(tm, "ema/" + np.name, rows, cols));
    st.opt.m.push_back(read_f32(tm, "adam_m/" + np.name, rows, cols));
    st.opt.v.push_back(read_f32(tm, "adam_v/" + np.name, rows, cols));
  }
  return st;
}

}  // namespace socialtraj
