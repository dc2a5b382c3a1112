#include "collabctx/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "collabctx/graph.hpp"

namespace collabctx {

Matrix normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

Matrix normalize_rows_backward(const Matrix& x, const Matrix& grad_normalized) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    if (n == 0.0) continue;
    const RowVector y = x.row(r) / n;
    const auto g = grad_normalized.row(r);
    out.row(r) = (g - y * y.dot(g)) / n;
  }
  return out;
}

namespace {

void check_batch(std::span<const Interaction> batch, const Matrix& users, const Matrix& items) {
  if (batch.empty()) throw std::invalid_argument("alignment_loss: empty batch");
  if (users.cols() != items.cols()) throw std::invalid_argument("alignment_loss: dimension mismatch");
  for (const auto& e : batch) {
    if (e.user < 0 || e.user >= users.rows() || e.item < 0 || e.item >= items.rows()) {
      throw std::out_of_range("alignment_loss: edge endpoint out of range");
    }
  }
}

RowVector maybe_normalized(const Matrix& table, Index row, bool normalize) {
  RowVector v = table.row(row);
  if (normalize) {
    const double n = v.norm();
    if (n > 0.0) v /= n;
  }
  return v;
}

}  // namespace

double alignment_value(std::span<const Interaction> batch, const Matrix& users, const Matrix& items,
                       const LossConfig& config) {
  check_batch(batch, users, items);
  double sum = 0.0;
  for (const auto& e : batch) {
    sum += (maybe_normalized(users, e.user, config.normalize) -
            maybe_normalized(items, e.item, config.normalize))
               .squaredNorm();
  }
  return sum / static_cast<double>(batch.size());
}

LossWithGrad alignment_loss(std::span<const Interaction> batch, const Matrix& users,
                            const Matrix& items, Side trainable, const LossConfig& config) {
  check_batch(batch, users, items);
  const Matrix& train_table = trainable == Side::users ? users : items;
  Matrix grad_view = Matrix::Zero(train_table.rows(), train_table.cols());
  const double scale = 1.0 / static_cast<double>(batch.size());
  double sum = 0.0;
  for (const auto& e : batch) {
    const RowVector diff = maybe_normalized(users, e.user, config.normalize) -
                           maybe_normalized(items, e.item, config.normalize);
    sum += diff.squaredNorm();
    if (trainable == Side::users) {
      grad_view.row(e.user) += 2.0 * scale * diff;
    } else {
      grad_view.row(e.item) -= 2.0 * scale * diff;
    }
  }
  LossWithGrad out;
  out.value = sum * scale;
  out.grad = config.normalize ? normalize_rows_backward(train_table, grad_view) : std::move(grad_view);
  return out;
}

LossWithGrad uniformity_loss(const Matrix& rows, const LossConfig& config) {
  const Eigen::Index n = rows.rows();
  if (n < 1) throw std::invalid_argument("uniformity_loss: need at least one row");
  const Matrix z = config.normalize ? normalize_rows(rows) : rows;
  const bool squared = config.uniformity == UniformityMode::squared;

  // Kernel over unordered pairs; ordered sum = self terms + 2 * off-diagonal.
  double total = static_cast<double>(n);
  Matrix grad_z = Matrix::Zero(n, z.cols());
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const RowVector diff = z.row(a) - z.row(b);
      const double sq = diff.squaredNorm();
      const double dist = squared ? sq : std::sqrt(sq);
      const double k = std::exp(-2.0 * dist);
      total += 2.0 * k;
      // d/dz_a of exp(-2 D): -2 k dD/dz_a; the pair appears twice in the ordered sum.
      RowVector dd;
      if (squared) {
        dd = 2.0 * diff;
      } else if (dist > 0.0) {
        dd = diff / dist;
      } else {
        continue;
      }
      const RowVector contrib = 2.0 * (-2.0 * k) * dd;
      grad_z.row(a) += contrib;
      grad_z.row(b) -= contrib;
    }
  }
  LossWithGrad out;
  out.value = std::log(total / static_cast<double>(n * n));
  grad_z /= total;
  out.grad = config.normalize ? normalize_rows_backward(rows, grad_z) : std::move(grad_z);
  return out;
}

std::vector<Index> batch_nodes(std::span<const Interaction> batch, Side side) {
  std::vector<Index> nodes;
  nodes.reserve(batch.size());
  for (const auto& e : batch) nodes.push_back(side == Side::users ? e.user : e.item);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

namespace {

Matrix gather(const Matrix& table, const std::vector<Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = table.row(rows[k]);
  return out;
}

void scatter_add(Matrix& table, const std::vector<Index>& rows, const Matrix& values) {
  for (size_t k = 0; k < rows.size(); ++k) table.row(rows[k]) += values.row(static_cast<Eigen::Index>(k));
}

}  // namespace

ItemTutoringLoss item_tutoring_loss(const BipartiteGraph& graph, int layers, const LossConfig& config,
                                    std::span<const Interaction> batch, const Matrix& users0,
                                    const Matrix& items0) {
  const auto out = propagate(graph, users0, items0, layers);
  auto align = alignment_loss(batch, out.users, out.items, Side::users, config);
  const auto users = batch_nodes(batch, Side::users);
  auto uniform = uniformity_loss(gather(out.users, users), config);

  Matrix grad_users = std::move(align.grad);
  scatter_add(grad_users, users, uniform.grad);
  // Propagated items are a stop-gradient target.
  const Matrix no_item_grad = Matrix::Zero(out.items.rows(), out.items.cols());
  auto back = propagate_backward(graph, grad_users, no_item_grad, layers);

  ItemTutoringLoss result;
  result.loss = {align.value, uniform.value};
  result.grad_users0 = std::move(back.users);
  return result;
}

UserTutoringLoss user_tutoring_loss(const BipartiteGraph& graph, int layers, const LossConfig& config,
                                    std::span<const Interaction> batch, const Matrix& users0,
                                    const Matrix& item_contextual, const MlpAdapter& adapter,
                                    std::mt19937_64& dropout_rng) {
  AdapterCache cache;
  const Matrix items0 = adapter.forward_train(item_contextual, dropout_rng, cache);
  const auto out = propagate(graph, users0, items0, layers);
  auto align = alignment_loss(batch, out.users, out.items, Side::items, config);
  const auto items = batch_nodes(batch, Side::items);
  auto uniform = uniformity_loss(gather(out.items, items), config);

  Matrix grad_items = std::move(align.grad);
  scatter_add(grad_items, items, uniform.grad);
  // Propagated users are a stop-gradient target.
  const Matrix no_user_grad = Matrix::Zero(out.users.rows(), out.users.cols());
  auto back = propagate_backward(graph, no_user_grad, grad_items, layers);

  UserTutoringLoss result;
  result.loss = {align.value, uniform.value};
  result.grad_adapter = adapter.backward(cache, back.items);
  return result;
}

PhaseLoss phase_loss(Phase phase, std::span<const Interaction> batch, const PhaseInputs& in) {
  PhaseLoss out;
  if (phase == Phase::item_tutoring) {
    auto r = item_tutoring_loss(in.graph, in.layers, in.loss, batch, in.users0, in.items0);
    out.loss = r.loss;
    out.grad_users0 = std::move(r.grad_users0);
  } else {
    if (!in.adapter || !in.dropout_rng) {
      throw std::invalid_argument("phase_loss: user tutoring needs an adapter and a dropout stream");
    }
    auto r = user_tutoring_loss(in.graph, in.layers, in.loss, batch, in.users0, in.items0, *in.adapter,
                                *in.dropout_rng);
    out.loss = r.loss;
    out.grad_adapter = std::move(r.grad_adapter);
  }
  return out;
}

}  // namespace collabctx
