#include "collabctx/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace collabctx {

void adam_step(Matrix& param, const Matrix& grad, AdamMoments& state, const AdamConfig& config,
               long t, bool decay) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (grad.rows() != param.rows() || grad.cols() != param.cols() || state.m.rows() != param.rows() ||
      state.m.cols() != param.cols()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  Matrix g = grad;
  if (decay && config.weight_decay != 0.0) g += config.weight_decay * param;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * g;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * g.cwiseProduct(g);
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const double step = config.learning_rate / bias1;
  param.array() -=
      step * state.m.array() / ((state.v.array() / bias2).sqrt() + config.epsilon);
}

}  // namespace collabctx
