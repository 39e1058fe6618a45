#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/data.hpp"

namespace socialtraj {

// A trainable tensor with its gradient accumulator.
struct Param {
  Mat w;
  Mat g;

  void resize(int rows, int cols) {
    w = Mat::Zero(rows, cols);
    g = Mat::Zero(rows, cols);
  }
  void zero_grad() { g.setZero(); }
};

struct NamedParam {
  std::string name;
  Param* p;
};

struct EncoderParams {
  int d_x = 64;
  int d_k = 64;
  int d_v = 64;
  Param W_e;  // d_x x 4
  Param b_e;  // d_x x 1
  Param W_q;  // d_k x d_x
  Param W_k;  // d_k x d_x
  Param W_v;  // d_v x d_x

  static EncoderParams init(std::uint64_t seed, int d_x = 64, int d_k = 64, int d_v = 64);
  std::vector<NamedParam> named(const std::string& prefix = "encoder.");
  void zero_grad();
};

struct ContextMatrix {
  Mat C;  // H x d_v
  Mat A;  // H x H
};

// Rows of the history as [x, y, v, a].
Mat history_matrix(const Trajectory& history);

Mat embed(const Mat& states, const EncoderParams& params);
Mat embed(const Trajectory& history, const EncoderParams& params);

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& scores);

ContextMatrix attention(const Mat& E, const EncoderParams& params);

Vec pool_context(const ContextMatrix& ctx);

// Forward pass kept for reverse-mode differentiation.
struct EncoderTape {
  Mat S;  // H x 4 input rows
  Mat E, Q, K, V, A, C;
};

Vec encode(const Mat& states, const EncoderParams& params, EncoderTape* tape = nullptr);

// Accumulates parameter gradients given d(loss)/dC (H x d_v).
void encoder_backward_context(const EncoderTape& tape, const Mat& dC, EncoderParams& params);
// Same, given d(loss)/d(pooled vector).
void encoder_backward(const EncoderTape& tape, const Vec& d_pooled, EncoderParams& params);

}  // namespace socialtraj
