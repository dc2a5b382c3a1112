#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "collabctx/dataset.hpp"
#include "collabctx/matrix.hpp"

namespace collabctx {

// Planted-cluster data: item embeddings are Gaussian blobs around per-cluster
// centers; a user interacts with each item of its own cluster with
// probability p_in and with every other item with probability p_out.
struct SynthConfig {
  int clusters = 4;
  int users = 200;
  int items = 120;
  int dim = 16;
  double p_in = 0.3;
  double p_out = 0.01;
  double center_std = 1.0;
  double noise_std = 0.35;
  std::uint64_t seed = 7;
};

struct SynthData {
  InteractionSet interactions;  // ids "u<n>" / "i<n>", every item in the id map
  Matrix item_embeddings;       // item-index order
  std::vector<int> user_cluster;
  std::vector<int> item_cluster;
};

SynthData generate_planted_clusters(const SynthConfig& config);

// Writes interactions.tsv and items.ccemb into `dir`.
void write_synth(const SynthData& data, const std::filesystem::path& dir);

}  // namespace collabctx
