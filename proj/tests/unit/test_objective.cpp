#include <doctest.h>

#include <cmath>
#include <random>

#include "collabctx/graph.hpp"
#include "collabctx/objective.hpp"
#include "support/oracles.hpp"

using namespace collabctx;

TEST_CASE("normalize_rows keeps zero rows and has a correct backward") {
  std::mt19937_64 rng(2);
  Matrix x = oracle::random_matrix(4, 3, rng);
  x.row(2).setZero();
  Matrix n = normalize_rows(x);
  CHECK(n.row(0).norm() == doctest::Approx(1.0));
  CHECK(n.row(2).norm() == 0.0);
  Matrix w = oracle::random_matrix(4, 3, rng);
  Matrix x_no_zero = x;
  x_no_zero.row(2) << 0.3, -0.2, 0.5;
  auto f = [&] { return normalize_rows(x_no_zero).cwiseProduct(w).sum(); };
  Matrix num = oracle::numeric_gradient(x_no_zero, f);
  CHECK(oracle::relative_error(normalize_rows_backward(x_no_zero, w), num) < 1e-8);
}

TEST_CASE("alignment and uniformity identities") {
  LossConfig c;
  Matrix same = Matrix::Ones(3, 4);
  std::vector<Interaction> batch = {{0, 0}, {1, 1}, {2, 2}};
  CHECK(alignment_value(batch, same, same, c) == 0.0);
  CHECK(uniformity_loss(same, c).value == doctest::Approx(0.0).epsilon(1e-15));

  LossConfig raw;
  raw.normalize = false;
  Matrix two(2, 2);
  two << 0, 0, 0.1, 0;
  // Squared distance 0.01: log((2 + 2 exp(-0.02)) / 4).
  CHECK(uniformity_loss(two, raw).value == doctest::Approx(std::log((2 + 2 * std::exp(-0.02)) / 4)).epsilon(1e-14));
  raw.uniformity = UniformityMode::literal;
  CHECK(uniformity_loss(two, raw).value == doctest::Approx(std::log((2 + 2 * std::exp(-0.2)) / 4)).epsilon(1e-14));
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(4);
  for (bool norm : {true, false}) {
    for (auto mode : {UniformityMode::squared, UniformityMode::literal}) {
      LossConfig c{norm, mode, 16};
      Matrix u = oracle::random_matrix(4, 3, rng), i = oracle::random_matrix(5, 3, rng);
      std::vector<Interaction> batch = {{0, 1}, {1, 1}, {3, 4}, {2, 0}};
      auto a = alignment_loss(batch, u, i, Side::users, c);
      Matrix num = oracle::numeric_gradient(u, [&] { return alignment_value(batch, u, i, c); });
      CHECK(oracle::relative_error(a.grad, num) < 1e-7);
      auto ai = alignment_loss(batch, u, i, Side::items, c);
      Matrix numi = oracle::numeric_gradient(i, [&] { return alignment_value(batch, u, i, c); });
      CHECK(oracle::relative_error(ai.grad, numi) < 1e-7);
      auto un = uniformity_loss(i, c);
      Matrix numu = oracle::numeric_gradient(i, [&] { return uniformity_loss(i, c).value; });
      CHECK(oracle::relative_error(un.grad, numu) < 1e-7);
      CHECK(un.value <= 0.0);
    }
  }
}

TEST_CASE("batch_nodes lists distinct nodes in order") {
  std::vector<Interaction> batch = {{3, 1}, {0, 1}, {3, 2}};
  CHECK(batch_nodes(batch, Side::users) == std::vector<Index>{0, 3});
  CHECK(batch_nodes(batch, Side::items) == std::vector<Index>{1, 2});
  CHECK_THROWS(alignment_loss({}, Matrix::Zero(1, 1), Matrix::Zero(1, 1), Side::users, {}));
}

TEST_CASE("phase gradients treat the frozen side's propagated rows as constants") {
  std::mt19937_64 rng(17);
  auto set = oracle::random_interactions(5, 6, 0.5, rng);
  for (Index u = 0; u < 5; ++u) set.pairs.push_back({u, u});
  std::sort(set.pairs.begin(), set.pairs.end());
  set.pairs.erase(std::unique(set.pairs.begin(), set.pairs.end()), set.pairs.end());
  auto g = build_graph(set);
  Matrix users0 = oracle::random_matrix(5, 3, rng), items0 = oracle::random_matrix(6, 3, rng);
  std::span<const Interaction> batch(set.pairs.data(), 5);
  LossConfig c;

  const Matrix target = propagate(g, users0, items0, 2).items;
  auto r = item_tutoring_loss(g, 2, c, batch, users0, items0);
  auto f = [&] { return oracle::detached_phase_value(g, 2, c, batch, users0, items0, true, target); };
  CHECK(r.loss.total() == doctest::Approx(f()).epsilon(1e-12));
  CHECK(oracle::relative_error(r.grad_users0, oracle::numeric_gradient(users0, f)) < 1e-7);

  auto adapter = MlpAdapter::identity(3);
  std::mt19937_64 drop(0);
  const Matrix user_target = propagate(g, users0, items0, 2).users;
  auto u = user_tutoring_loss(g, 2, c, batch, users0, items0, adapter, drop);
  auto fu = [&] {
    return oracle::detached_phase_value(g, 2, c, batch, users0, adapter.forward(items0), false, user_target);
  };
  CHECK(oracle::relative_error(u.grad_adapter.layers[0].weight,
                               oracle::numeric_gradient(adapter.layers()[0].weight, fu)) < 1e-7);
}
