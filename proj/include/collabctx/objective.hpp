#pragma once

#include <optional>
#include <random>
#include <span>

#include "collabctx/adapter.hpp"
#include "collabctx/dataset.hpp"
#include "collabctx/matrix.hpp"

namespace collabctx {

// `squared` uses ||a - b||^2 inside the Gaussian kernel; `literal` uses ||a - b||.
enum class UniformityMode { squared, literal };

struct LossConfig {
  bool normalize = true;
  UniformityMode uniformity = UniformityMode::squared;
  int batch_size = 1024;
};

// Copy with every non-zero row scaled to unit L2 norm; zero rows stay zero.
Matrix normalize_rows(const Matrix& x);
// Pulls a gradient w.r.t. normalize_rows(x) back onto x.
Matrix normalize_rows_backward(const Matrix& x, const Matrix& grad_normalized);

enum class Side { users, items };

struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

// Mean squared distance between the endpoints of each edge. The gradient is
// taken w.r.t. the `trainable` table only and has that table's shape.
LossWithGrad alignment_loss(std::span<const Interaction> batch, const Matrix& users,
                            const Matrix& items, Side trainable, const LossConfig& config);
double alignment_value(std::span<const Interaction> batch, const Matrix& users, const Matrix& items,
                       const LossConfig& config);

// log of the mean Gaussian kernel exp(-2 D(a, b)) over all ordered row pairs,
// self-pairs included. Gradient is w.r.t. `rows`.
LossWithGrad uniformity_loss(const Matrix& rows, const LossConfig& config);

// Distinct users (or items) of a batch in ascending order.
std::vector<Index> batch_nodes(std::span<const Interaction> batch, Side side);

struct LossBreakdown {
  double alignment = 0.0;
  double uniformity = 0.0;
  double total() const { return alignment + uniformity; }
};

enum class Phase { item_tutoring, user_tutoring };

struct ItemTutoringLoss {
  LossBreakdown loss;
  Matrix grad_users0;  // w.r.t. user layer-0 embeddings
};

// Users learn against frozen item layer-0 embeddings; uniformity over the
// batch's users only. The propagated items are a constant target, so the
// gradient reaches users0 only through the propagated user rows.
ItemTutoringLoss item_tutoring_loss(const BipartiteGraph& graph, int layers, const LossConfig& config,
                                    std::span<const Interaction> batch, const Matrix& users0,
                                    const Matrix& items0);

struct UserTutoringLoss {
  LossBreakdown loss;
  AdapterGrads grad_adapter;
};

// Adapter learns against frozen users; items enter propagation as
// adapter(item_contextual). Uniformity over the batch's items only. The
// propagated users are a constant target.
UserTutoringLoss user_tutoring_loss(const BipartiteGraph& graph, int layers, const LossConfig& config,
                                    std::span<const Interaction> batch, const Matrix& users0,
                                    const Matrix& item_contextual, const MlpAdapter& adapter,
                                    std::mt19937_64& dropout_rng);

// Everything a phase loss reads.
struct PhaseInputs {
  const BipartiteGraph& graph;
  int layers;
  LossConfig loss;
  const Matrix& users0;
  const Matrix& items0;  // item-side layer-0 table for item tutoring, x_i for user tutoring
  const MlpAdapter* adapter = nullptr;
  std::mt19937_64* dropout_rng = nullptr;
};

struct PhaseLoss {
  LossBreakdown loss;
  std::optional<Matrix> grad_users0;          // item tutoring only
  std::optional<AdapterGrads> grad_adapter;   // user tutoring only
};

PhaseLoss phase_loss(Phase phase, std::span<const Interaction> batch, const PhaseInputs& inputs);

}  // namespace collabctx
