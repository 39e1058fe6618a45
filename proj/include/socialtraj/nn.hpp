#pragma once

// Layers for the 1-D convolutional denoiser. Activations are laid out as
// channels x (batch * length) with column n = b * length + l.

#include <vector>

#include "socialtraj/common.hpp"
#include "socialtraj/encoder.hpp"

namespace socialtraj::nn {

void init_uniform(Param& p, int rows, int cols, int fan_in, Rng& rng);

struct Conv1d {
  int cin = 0, cout = 0, kernel = 3, dilation = 1;
  Param W;  // cout x (kernel * cin)
  Param b;  // cout x 1

  void init(int cin, int cout, int kernel, int dilation, Rng& rng);
  // Zero-padded "same" convolution.
  Mat forward(const Mat& X, int length, Mat* cols_out) const;
  Mat backward(const Mat& dY, const Mat& cols, int length);
};

struct AdaLN {
  int channels = 0;
  Param W;  // 2C x cond_dim; rows [0, C) scale, [C, 2C) shift
  Param b;  // 2C x 1

  void init(int channels, int cond_dim);
  struct Tape {
    Mat xhat;
    Vec inv_std;
    Mat mod;  // 2C x B
  };
  Mat forward(const Mat& X, const Mat& cond, int length, Tape* tape) const;
  // Returns dX; accumulates d(cond) into dcond.
  Mat backward(const Mat& dY, const Mat& cond, const Tape& tape, int length, Mat& dcond);
};

Mat silu(const Mat& X);
Mat silu_backward(const Mat& X, const Mat& dY);

struct ResBlock {
  Conv1d conv1, conv2;
  AdaLN norm1, norm2;
  bool has_skip = false;
  Conv1d skip;

  void init(int cin, int cout, int dilation, int cond_dim, Rng& rng);
  struct Tape {
    Mat x, cols1, h1, n1, a1, cols2, h2, n2, cols_skip;
    AdaLN::Tape t1, t2;
  };
  Mat forward(const Mat& X, const Mat& cond, int length, Tape* tape) const;
  Mat backward(const Mat& dY, const Mat& cond, const Tape& tape, int length, Mat& dcond);
  void append_named(std::vector<NamedParam>& out, const std::string& prefix);
};

}  // namespace socialtraj::nn
