#include "socialtraj/encoder.hpp"

#include <cmath>

namespace socialtraj {

namespace {

void init_uniform(Param& p, int rows, int cols, int fan_in, Rng& rng) {
  p.resize(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) p.w(i, j) = rng.uniform(-bound, bound);
}

}  // namespace

EncoderParams EncoderParams::init(std::uint64_t seed, int d_x, int d_k, int d_v) {
  EncoderParams p;
  p.d_x = d_x;
  p.d_k = d_k;
  p.d_v = d_v;
  Rng rng(seed, 0x656e63);
  init_uniform(p.W_e, d_x, 4, 4, rng);
  init_uniform(p.b_e, d_x, 1, 4, rng);
  init_uniform(p.W_q, d_k, d_x, d_x, rng);
  init_uniform(p.W_k, d_k, d_x, d_x, rng);
  init_uniform(p.W_v, d_v, d_x, d_x, rng);
  return p;
}

std::vector<NamedParam> EncoderParams::named(const std::string& prefix) {
  return {{prefix + "W_e", &W_e}, {prefix + "b_e", &b_e}, {prefix + "W_q", &W_q},
          {prefix + "W_k", &W_k}, {prefix + "W_v", &W_v}};
}

void EncoderParams::zero_grad() {
  for (auto& np : named()) np.p->zero_grad();
}

Mat history_matrix(const Trajectory& history) {
  Mat s(history.size(), 4);
  for (int t = 0; t < history.size(); ++t) {
    const auto& st = history.states[t];
    s(t, 0) = st.x;
    s(t, 1) = st.y;
    s(t, 2) = st.v;
    s(t, 3) = st.a;
  }
  return s;
}

Mat embed(const Mat& states, const EncoderParams& params) {
  if (states.rows() < 1) throw ShapeError("embed: empty history");
  if (states.cols() != 4) throw ShapeError("embed: expected 4 state columns");
  if (!states.allFinite()) throw NumericInputError("embed: non-finite history state");
  Mat E = states * params.W_e.w.transpose();
  E.rowwise() += params.b_e.w.col(0).transpose();
  return E;
}

Mat embed(const Trajectory& history, const EncoderParams& params) {
  return embed(history_matrix(history), params);
}

Mat softmax_rows(const Mat& scores) {
  Mat A(scores.rows(), scores.cols());
  for (int i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    double sum = 0.0;
    for (int j = 0; j < scores.cols(); ++j) {
      A(i, j) = std::exp(scores(i, j) - m);
      sum += A(i, j);
    }
    A.row(i) /= sum;
  }
  return A;
}

ContextMatrix attention(const Mat& E, const EncoderParams& params) {
  if (E.rows() < 1) throw ShapeError("attention: empty input");
  const Mat Q = E * params.W_q.w.transpose();
  const Mat K = E * params.W_k.w.transpose();
  const Mat V = E * params.W_v.w.transpose();
  ContextMatrix ctx;
  ctx.A = softmax_rows(Q * K.transpose() / std::sqrt(static_cast<double>(params.d_k)));
  ctx.C = ctx.A * V;
  return ctx;
}

Vec pool_context(const ContextMatrix& ctx) {
  if (ctx.C.rows() < 1) throw ShapeError("pool_context: empty context");
  return ctx.C.colwise().mean().transpose();
}

Vec encode(const Mat& states, const EncoderParams& params, EncoderTape* tape) {
  EncoderTape local;
  EncoderTape& tp = tape ? *tape : local;
  tp.S = states;
  tp.E = embed(states, params);
  tp.Q = tp.E * params.W_q.w.transpose();
  tp.K = tp.E * params.W_k.w.transpose();
  tp.V = tp.E * params.W_v.w.transpose();
  tp.A = softmax_rows(tp.Q * tp.K.transpose() / std::sqrt(static_cast<double>(params.d_k)));
  tp.C = tp.A * tp.V;
  return tp.C.colwise().mean().transpose();
}

void encoder_backward_context(const EncoderTape& tape, const Mat& dC, EncoderParams& params) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  const Mat dA = dC * tape.V.transpose();
  const Mat dV = tape.A.transpose() * dC;
  // softmax backward, row by row
  Mat dS = tape.A.cwiseProduct(dA);
  const Vec rowdot = dS.rowwise().sum();
  dS -= tape.A.cwiseProduct(rowdot.replicate(1, tape.A.cols()));
  dS *= inv_sqrt_dk;
  const Mat dQ = dS * tape.K;
  const Mat dK = dS.transpose() * tape.Q;
  params.W_q.g += dQ.transpose() * tape.E;
  params.W_k.g += dK.transpose() * tape.E;
  params.W_v.g += dV.transpose() * tape.E;
  const Mat dE = dQ * params.W_q.w + dK * params.W_k.w + dV * params.W_v.w;
  params.W_e.g += dE.transpose() * tape.S;
  params.b_e.g += dE.colwise().sum().transpose();
}

void encoder_backward(const EncoderTape& tape, const Vec& d_pooled, EncoderParams& params) {
  const int H = static_cast<int>(tape.C.rows());
  Mat dC = d_pooled.transpose().replicate(H, 1) / static_cast<double>(H);
  encoder_backward_context(tape, dC, params);
}

}  // namespace socialtraj
