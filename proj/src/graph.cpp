#include "collabctx/graph.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "collabctx/parallel.hpp"

namespace collabctx {

namespace {

void check_shapes(const BipartiteGraph& graph, const Matrix& users, const Matrix& items,
                  const char* what) {
  if (users.rows() != graph.user_count || items.rows() != graph.item_count) {
    throw std::invalid_argument(fmt::format("{}: row counts ({}, {}) do not match graph ({}, {})", what,
                                            users.rows(), items.rows(), graph.user_count,
                                            graph.item_count));
  }
  if (users.cols() != items.cols()) {
    throw std::invalid_argument(
        fmt::format("{}: dimension mismatch {} vs {}", what, users.cols(), items.cols()));
  }
}

// dst[r] = src_self[r] + sum over CSR row r of src_other[nbr] * w.
void gather_rows(const std::vector<std::int64_t>& offsets, const std::vector<Index>& nbrs,
                 const std::vector<std::int64_t>& nbr_offsets, const Matrix& self,
                 const Matrix& other, Matrix& dst) {
  const auto rows = static_cast<size_t>(self.rows());
  parallel_for(rows, [&](size_t begin, size_t end) {
    for (size_t r = begin; r < end; ++r) {
      const auto row_begin = offsets[r], row_end = offsets[r + 1];
      dst.row(static_cast<Eigen::Index>(r)) = self.row(static_cast<Eigen::Index>(r));
      if (row_begin == row_end) continue;
      const double self_deg = static_cast<double>(row_end - row_begin);
      for (auto e = row_begin; e < row_end; ++e) {
        const Index n = nbrs[static_cast<size_t>(e)];
        const double nbr_deg = static_cast<double>(nbr_offsets[n + 1] - nbr_offsets[n]);
        const double w = 1.0 / (std::sqrt(self_deg) * std::sqrt(nbr_deg));
        dst.row(static_cast<Eigen::Index>(r)) += w * other.row(n);
      }
    }
  });
}

}  // namespace

double edge_weight(const BipartiteGraph& graph, Index user, Index item) {
  return 1.0 / (std::sqrt(static_cast<double>(graph.user_degree(user))) *
                std::sqrt(static_cast<double>(graph.item_degree(item))));
}

NodeEmbeddings aggregate_layer(const BipartiteGraph& graph, const Matrix& users, const Matrix& items) {
  check_shapes(graph, users, items, "aggregate_layer");
  NodeEmbeddings out{Matrix(users.rows(), users.cols()), Matrix(items.rows(), items.cols())};
  gather_rows(graph.user_offsets, graph.user_items, graph.item_offsets, users, items, out.users);
  gather_rows(graph.item_offsets, graph.item_users, graph.user_offsets, items, users, out.items);
  return out;
}

NodeEmbeddings propagate(const BipartiteGraph& graph, const Matrix& users0, const Matrix& items0,
                         int layers) {
  if (layers < 0) throw std::invalid_argument("propagate: layer count must be >= 0");
  check_shapes(graph, users0, items0, "propagate");
  NodeEmbeddings cur{users0, items0};
  for (int k = 0; k < layers; ++k) cur = aggregate_layer(graph, cur.users, cur.items);
  return cur;
}

NodeEmbeddings propagate_backward(const BipartiteGraph& graph, const Matrix& grad_users,
                                  const Matrix& grad_items, int layers) {
  if (layers < 0) throw std::invalid_argument("propagate_backward: layer count must be >= 0");
  check_shapes(graph, grad_users, grad_items, "propagate_backward");
  // A layer is [I A; A^T I] with symmetric weights, so it is its own transpose.
  NodeEmbeddings cur{grad_users, grad_items};
  for (int k = 0; k < layers; ++k) cur = aggregate_layer(graph, cur.users, cur.items);
  return cur;
}

}  // namespace collabctx
