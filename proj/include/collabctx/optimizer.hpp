#pragma once

#include "collabctx/matrix.hpp"

namespace collabctx {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  Matrix m;
  Matrix v;

  static AdamMoments zeros_like(const Matrix& p) {
    return {Matrix::Zero(p.rows(), p.cols()), Matrix::Zero(p.rows(), p.cols())};
  }
};

// Bias-corrected Adam at step `t` (1-based). With `decay`, weight decay is
// added to the gradient as an L2 term before the moment updates.
void adam_step(Matrix& param, const Matrix& grad, AdamMoments& state, const AdamConfig& config,
               long t, bool decay = true);

}  // namespace collabctx
