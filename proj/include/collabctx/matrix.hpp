#pragma once

#include <Eigen/Dense>

namespace collabctx {

// Row-major so each node's embedding is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class NodeKind { user, item };

struct EmbeddingTable {
  Matrix values;
  NodeKind kind = NodeKind::item;
  bool trainable = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace collabctx
