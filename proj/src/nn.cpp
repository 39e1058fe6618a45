#include "socialtraj/nn.hpp"

#include <cmath>

namespace socialtraj::nn {

namespace {
constexpr double kLnEps = 1e-5;
}

void init_uniform(Param& p, int rows, int cols, int fan_in, Rng& rng) {
  p.resize(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) p.w(i, j) = rng.uniform(-bound, bound);
}

void Conv1d::init(int cin_, int cout_, int kernel_, int dilation_, Rng& rng) {
  cin = cin_;
  cout = cout_;
  kernel = kernel_;
  dilation = dilation_;
  init_uniform(W, cout, kernel * cin, kernel * cin, rng);
  init_uniform(b, cout, 1, kernel * cin, rng);
}

Mat Conv1d::forward(const Mat& X, int length, Mat* cols_out) const {
  const int N = static_cast<int>(X.cols());
  const int B = N / length;
  Mat cols = Mat::Zero(kernel * cin, N);
  const int half = kernel / 2;
  for (int j = 0; j < kernel; ++j) {
    const int s = (j - half) * dilation;
    const int span = length - std::abs(s);
    if (span <= 0) continue;
    const int src = std::max(0, s), dst = std::max(0, -s);
    for (int bb = 0; bb < B; ++bb)
      cols.block(j * cin, bb * length + dst, cin, span) = X.block(0, bb * length + src, cin, span);
  }
  Mat Y = W.w * cols;
  Y.colwise() += b.w.col(0);
  if (cols_out) *cols_out = std::move(cols);
  return Y;
}

Mat Conv1d::backward(const Mat& dY, const Mat& cols, int length) {
  W.g.noalias() += dY * cols.transpose();
  b.g += dY.rowwise().sum();
  const Mat dcols = W.w.transpose() * dY;
  const int N = static_cast<int>(dY.cols());
  const int B = N / length;
  Mat dX = Mat::Zero(cin, N);
  const int half = kernel / 2;
  for (int j = 0; j < kernel; ++j) {
    const int s = (j - half) * dilation;
    const int span = length - std::abs(s);
    if (span <= 0) continue;
    const int src = std::max(0, s), dst = std::max(0, -s);
    for (int bb = 0; bb < B; ++bb)
      dX.block(0, bb * length + src, cin, span) += dcols.block(j * cin, bb * length + dst, cin, span);
  }
  return dX;
}

void AdaLN::init(int channels_, int cond_dim) {
  channels = channels_;
  W.resize(2 * channels, cond_dim);
  b.resize(2 * channels, 1);
}

Mat AdaLN::forward(const Mat& X, const Mat& cond, int length, Tape* tape) const {
  const int C = channels;
  const int N = static_cast<int>(X.cols());
  Mat mod = W.w * cond;
  mod.colwise() += b.w.col(0);
  const Eigen::RowVectorXd mu = X.colwise().mean();
  Mat xhat = X.rowwise() - mu;
  const Eigen::RowVectorXd var = xhat.cwiseAbs2().colwise().mean();
  Vec inv_std(N);
  for (int n = 0; n < N; ++n) inv_std(n) = 1.0 / std::sqrt(var(n) + kLnEps);
  xhat = xhat * inv_std.asDiagonal();
  Mat Y(C, N);
  const int B = N / length;
  for (int bb = 0; bb < B; ++bb) {
    const Vec scale = Vec::Ones(C) + mod.col(bb).head(C);
    Y.middleCols(bb * length, length) =
        (xhat.middleCols(bb * length, length).array().colwise() * scale.array()).colwise() +
        mod.col(bb).tail(C).array();
  }
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->inv_std = std::move(inv_std);
    tape->mod = std::move(mod);
  }
  return Y;
}

Mat AdaLN::backward(const Mat& dY, const Mat& cond, const Tape& tape, int length, Mat& dcond) {
  const int C = channels;
  const int N = static_cast<int>(dY.cols());
  const int B = N / length;
  Mat dmod = Mat::Zero(2 * C, B);
  Mat dxhat(C, N);
  for (int bb = 0; bb < B; ++bb) {
    const auto dy = dY.middleCols(bb * length, length);
    dmod.col(bb).head(C) = dy.cwiseProduct(tape.xhat.middleCols(bb * length, length)).rowwise().sum();
    dmod.col(bb).tail(C) = dy.rowwise().sum();
    const Vec scale = Vec::Ones(C) + tape.mod.col(bb).head(C);
    dxhat.middleCols(bb * length, length) = dy.array().colwise() * scale.array();
  }
  W.g.noalias() += dmod * cond.transpose();
  b.g += dmod.rowwise().sum();
  dcond.noalias() += W.w.transpose() * dmod;
  const Eigen::RowVectorXd m1 = dxhat.colwise().mean();
  const Eigen::RowVectorXd m2 = dxhat.cwiseProduct(tape.xhat).colwise().mean();
  Mat dX = dxhat.rowwise() - m1;
  dX -= tape.xhat * m2.asDiagonal();
  return dX * tape.inv_std.asDiagonal();
}

Mat silu(const Mat& X) {
  return X.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
}

Mat silu_backward(const Mat& X, const Mat& dY) {
  return X.binaryExpr(dY, [](double x, double d) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return d * s * (1.0 + x * (1.0 - s));
  });
}

void ResBlock::init(int cin, int cout, int dilation, int cond_dim, Rng& rng) {
  conv1.init(cin, cout, 3, dilation, rng);
  conv2.init(cout, cout, 3, dilation, rng);
  norm1.init(cout, cond_dim);
  norm2.init(cout, cond_dim);
  has_skip = cin != cout;
  if (has_skip) skip.init(cin, cout, 1, 1, rng);
}

Mat ResBlock::forward(const Mat& X, const Mat& cond, int length, Tape* tape) const {
  Tape local;
  Tape& t = tape ? *tape : local;
  t.h1 = conv1.forward(X, length, &t.cols1);
  t.n1 = norm1.forward(t.h1, cond, length, &t.t1);
  t.a1 = silu(t.n1);
  t.h2 = conv2.forward(t.a1, length, &t.cols2);
  t.n2 = norm2.forward(t.h2, cond, length, &t.t2);
  Mat out = silu(t.n2);
  if (has_skip)
    out += skip.forward(X, length, &t.cols_skip);
  else
    out += X;
  if (!tape) return out;
  // h1, h2 are only needed through the norm tapes
  t.h1.resize(0, 0);
  t.h2.resize(0, 0);
  return out;
}

Mat ResBlock::backward(const Mat& dY, const Mat& cond, const Tape& t, int length, Mat& dcond) {
  Mat dn2 = silu_backward(t.n2, dY);
  Mat dh2 = norm2.backward(dn2, cond, t.t2, length, dcond);
  Mat da1 = conv2.backward(dh2, t.cols2, length);
  Mat dn1 = silu_backward(t.n1, da1);
  Mat dh1 = norm1.backward(dn1, cond, t.t1, length, dcond);
  Mat dX = conv1.backward(dh1, t.cols1, length);
  if (has_skip)
    dX += skip.backward(dY, t.cols_skip, length);
  else
    dX += dY;
  return dX;
}

void ResBlock::append_named(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + "conv1.W", &conv1.W});
  out.push_back({prefix + "conv1.b", &conv1.b});
  out.push_back({prefix + "norm1.W", &norm1.W});
  out.push_back({prefix + "norm1.b", &norm1.b});
  out.push_back({prefix + "conv2.W", &conv2.W});
  out.push_back({prefix + "conv2.b", &conv2.b});
  out.push_back({prefix + "norm2.W", &norm2.W});
  out.push_back({prefix + "norm2.b", &norm2.b});
  if (has_skip) {
    out.push_back({prefix + "skip.W", &skip.W});
    out.push_back({prefix + "skip.b", &skip.b});
  }
}

}  // namespace socialtraj::nn
