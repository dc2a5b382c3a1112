#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "collabctx/matrix.hpp"

namespace collabctx {

struct AdapterConfig {
  int layers = 2;
  int hidden = 768;
  double dropout = 0.2;
  std::uint64_t seed = 0;
};

// Messages for values outside the documented tuning grid. Off-grid values are
// still accepted.
std::vector<std::string> adapter_grid_warnings(const AdapterConfig& config);

struct DenseLayer {
  Matrix weight;  // d_in x d_out
  Matrix bias;    // 1 x d_out
};

// Per-batch state captured by forward_train and consumed by backward.
struct AdapterCache {
  std::vector<Matrix> inputs;           // input to each layer
  std::vector<Matrix> pre_activations;  // affine output of each hidden layer
  std::vector<Matrix> masks;            // dropout keep masks, already scaled by 1/keep
};

struct AdapterGrads {
  std::vector<DenseLayer> layers;
  Matrix input;
};

// Affine -> ReLU -> dropout stack; the last layer is affine only so outputs
// cover the whole embedding space.
class MlpAdapter {
 public:
  MlpAdapter() = default;
  MlpAdapter(std::vector<DenseLayer> layers, double dropout);

  // Fan-based uniform weights, zero biases; d_W -> hidden -> ... -> d_W.
  static MlpAdapter init(int dim, const AdapterConfig& config);
  // Single identity layer, so forward(x) == x.
  static MlpAdapter identity(int dim);

  // Inference mode: dropout is a no-op.
  Matrix forward(const Matrix& x) const;
  // Training mode with inverted dropout drawn from `rng`.
  Matrix forward_train(const Matrix& x, std::mt19937_64& rng, AdapterCache& cache) const;
  AdapterGrads backward(const AdapterCache& cache, const Matrix& grad_out) const;

  int dim() const;
  double dropout() const { return dropout_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  bool empty() const { return layers_.empty(); }

  friend bool operator==(const MlpAdapter& a, const MlpAdapter& b);

 private:
  std::vector<DenseLayer> layers_;
  double dropout_ = 0.0;
};

}  // namespace collabctx
