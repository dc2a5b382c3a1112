#pragma once

#include "collabctx/dataset.hpp"
#include "collabctx/matrix.hpp"

namespace collabctx {

struct NodeEmbeddings {
  Matrix users;
  Matrix items;
};

// Symmetric edge weight 1 / (sqrt(deg u) * sqrt(deg i)).
double edge_weight(const BipartiteGraph& graph, Index user, Index item);

// One residual layer:
//   users'[u] = users[u] + sum_{i in N(u)} items[i] * w(u, i)
//   items'[i] = items[i] + sum_{u in N(i)} users[u] * w(u, i)
// Both sides read the layer-k inputs. Zero-degree rows pass through.
NodeEmbeddings aggregate_layer(const BipartiteGraph& graph, const Matrix& users, const Matrix& items);

// `layers` residual layers from the layer-0 tables; returns the last layer.
NodeEmbeddings propagate(const BipartiteGraph& graph, const Matrix& users0, const Matrix& items0,
                         int layers);

// Adjoint of propagate: maps gradients w.r.t. the outputs onto the layer-0 inputs.
NodeEmbeddings propagate_backward(const BipartiteGraph& graph, const Matrix& grad_users,
                                  const Matrix& grad_items, int layers);

}  // namespace collabctx
