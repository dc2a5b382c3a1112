#include "collabctx/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace collabctx {

std::vector<std::string> adapter_grid_warnings(const AdapterConfig& config) {
  std::vector<std::string> out;
  auto in = [](auto v, std::initializer_list<decltype(v)> grid) {
    return std::find(grid.begin(), grid.end(), v) != grid.end();
  };
  if (!in(config.layers, {1, 2, 3})) {
    out.push_back(fmt::format("adapter layers {} outside tuning grid {{1, 2, 3}}", config.layers));
  }
  if (!in(config.hidden, {384, 768, 1536})) {
    out.push_back(fmt::format("adapter hidden {} outside tuning grid {{384, 768, 1536}}", config.hidden));
  }
  if (!in(config.dropout, {0.2, 0.5})) {
    out.push_back(fmt::format("adapter dropout {} outside tuning grid {{0.2, 0.5}}", config.dropout));
  }
  return out;
}

MlpAdapter::MlpAdapter(std::vector<DenseLayer> layers, double dropout)
    : layers_(std::move(layers)), dropout_(dropout) {
  if (layers_.empty()) throw std::invalid_argument("adapter needs at least one layer");
  if (!(dropout_ >= 0.0 && dropout_ < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols()) {
      throw std::invalid_argument(fmt::format("adapter layer {}: bias shape mismatch", l));
    }
    if (l > 0 && layers_[l - 1].weight.cols() != layer.weight.rows()) {
      throw std::invalid_argument(fmt::format("adapter layer {}: input width mismatch", l));
    }
  }
  if (layers_.front().weight.rows() != layers_.back().weight.cols()) {
    throw std::invalid_argument("adapter must map d_W to d_W");
  }
}

MlpAdapter MlpAdapter::init(int dim, const AdapterConfig& config) {
  if (config.layers < 1) throw std::invalid_argument("adapter layer count must be >= 1");
  if (config.hidden < 1 || dim < 1) throw std::invalid_argument("adapter widths must be positive");
  std::mt19937_64 rng(config.seed);
  std::vector<DenseLayer> layers;
  for (int l = 0; l < config.layers; ++l) {
    const int d_in = l == 0 ? dim : config.hidden;
    const int d_out = l == config.layers - 1 ? dim : config.hidden;
    const double bound = std::sqrt(6.0 / (d_in + d_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Matrix(d_in, d_out), Matrix::Zero(1, d_out)};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
    layers.push_back(std::move(layer));
  }
  return MlpAdapter(std::move(layers), config.dropout);
}

MlpAdapter MlpAdapter::identity(int dim) {
  std::vector<DenseLayer> layers{{Matrix::Identity(dim, dim), Matrix::Zero(1, dim)}};
  return MlpAdapter(std::move(layers), 0.0);
}

int MlpAdapter::dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.rows());
}

namespace {

void check_input(const MlpAdapter& adapter, const Matrix& x) {
  if (x.cols() != adapter.dim()) {
    throw std::invalid_argument(
        fmt::format("adapter: input has {} columns, expected {}", x.cols(), adapter.dim()));
  }
}

}  // namespace

Matrix MlpAdapter::forward(const Matrix& x) const {
  check_input(*this, x);
  Matrix a = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = a * layers_[l].weight;
    z.rowwise() += layers_[l].bias.row(0);
    a = l + 1 < layers_.size() ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return a;
}

Matrix MlpAdapter::forward_train(const Matrix& x, std::mt19937_64& rng, AdapterCache& cache) const {
  check_input(*this, x);
  cache = AdapterCache{};
  const double keep = 1.0 - dropout_;
  std::bernoulli_distribution keep_dist(keep);
  Matrix a = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    cache.inputs.push_back(a);
    Matrix z = a * layers_[l].weight;
    z.rowwise() += layers_[l].bias.row(0);
    if (l + 1 == layers_.size()) return z;
    Matrix mask(z.rows(), z.cols());
    if (dropout_ > 0.0) {
      for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = keep_dist(rng) ? 1.0 / keep : 0.0;
    } else {
      mask.setOnes();
    }
    a = z.cwiseMax(0.0).cwiseProduct(mask);
    cache.pre_activations.push_back(std::move(z));
    cache.masks.push_back(std::move(mask));
  }
  return a;
}

AdapterGrads MlpAdapter::backward(const AdapterCache& cache, const Matrix& grad_out) const {
  if (cache.inputs.size() != layers_.size() || cache.masks.size() + 1 != layers_.size()) {
    throw std::logic_error("adapter backward: forward cache missing for this batch");
  }
  if (grad_out.rows() != cache.inputs.front().rows() || grad_out.cols() != dim()) {
    throw std::invalid_argument("adapter backward: gradient shape does not match cached batch");
  }
  AdapterGrads grads;
  grads.layers.resize(layers_.size());
  Matrix g = grad_out;
  for (size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      const auto& z = cache.pre_activations[l];
      g = g.cwiseProduct(cache.masks[l]).cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    }
    grads.layers[l].weight = cache.inputs[l].transpose() * g;
    grads.layers[l].bias = g.colwise().sum();
    g = g * layers_[l].weight.transpose();
  }
  grads.input = std::move(g);
  return grads;
}

bool operator==(const MlpAdapter& a, const MlpAdapter& b) {
  if (a.dropout_ != b.dropout_ || a.layers_.size() != b.layers_.size()) return false;
  for (size_t l = 0; l < a.layers_.size(); ++l) {
    const auto& x = a.layers_[l];
    const auto& y = b.layers_[l];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols()) return false;
    if (x.weight != y.weight || x.bias != y.bias) return false;
  }
  return true;
}

}  // namespace collabctx
