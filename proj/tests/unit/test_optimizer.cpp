#include <doctest.h>

#include "collabctx/optimizer.hpp"

using namespace collabctx;

TEST_CASE("first Adam step moves each coordinate by about lr against the gradient sign") {
  Matrix p(1, 3);
  p << 1.0, -2.0, 0.5;
  Matrix g(1, 3);
  g << 0.3, -4.0, 0.0;
  auto s = AdamMoments::zeros_like(p);
  AdamConfig c;
  c.learning_rate = 0.01;
  Matrix before = p;
  adam_step(p, g, s, c, 1, false);
  CHECK(p(0, 0) == doctest::Approx(before(0, 0) - 0.01).epsilon(1e-6));
  CHECK(p(0, 1) == doctest::Approx(before(0, 1) + 0.01).epsilon(1e-6));
  CHECK(p(0, 2) == before(0, 2));
}

TEST_CASE("weight decay only applies when requested") {
  Matrix p = Matrix::Constant(1, 1, 2.0), q = p;
  Matrix g = Matrix::Zero(1, 1);
  auto sp = AdamMoments::zeros_like(p), sq = sp;
  AdamConfig c;
  c.weight_decay = 0.1;
  adam_step(p, g, sp, c, 1, true);
  adam_step(q, g, sq, c, 1, false);
  CHECK(p(0, 0) < 2.0);
  CHECK(q(0, 0) == 2.0);
}

TEST_CASE("Adam minimizes a quadratic") {
  Matrix p = Matrix::Constant(2, 2, 5.0);
  auto s = AdamMoments::zeros_like(p);
  AdamConfig c;
  c.learning_rate = 0.1;
  for (long t = 1; t <= 2000; ++t) adam_step(p, 2.0 * p, s, c, t);
  CHECK(p.cwiseAbs().maxCoeff() < 1e-2);
}
