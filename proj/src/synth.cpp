#include "collabctx/synth.hpp"

#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "collabctx/embedding_io.hpp"

namespace collabctx {

SynthData generate_planted_clusters(const SynthConfig& c) {
  if (c.clusters < 1 || c.users < 1 || c.items < 1 || c.dim < 1) {
    throw std::invalid_argument("synth: sizes must be positive");
  }
  if (!(c.p_in >= 0 && c.p_in <= 1 && c.p_out >= 0 && c.p_out <= 1)) {
    throw std::invalid_argument("synth: probabilities must be in [0, 1]");
  }
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick_cluster(0, c.clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Matrix centers(c.clusters, c.dim);
  for (Eigen::Index r = 0; r < centers.rows(); ++r)
    for (Eigen::Index d = 0; d < centers.cols(); ++d) centers(r, d) = c.center_std * normal(rng);

  SynthData out;
  out.item_embeddings.resize(c.items, c.dim);
  for (int i = 0; i < c.items; ++i) {
    out.item_cluster.push_back(i % c.clusters);
    for (int d = 0; d < c.dim; ++d) {
      out.item_embeddings(i, d) = centers(i % c.clusters, d) + c.noise_std * normal(rng);
    }
  }
  for (int u = 0; u < c.users; ++u) out.user_cluster.push_back(pick_cluster(rng));

  auto& inter = out.interactions;
  for (int u = 0; u < c.users; ++u) inter.users.intern(fmt::format("u{}", u));
  for (int i = 0; i < c.items; ++i) inter.items.intern(fmt::format("i{}", i));
  for (int u = 0; u < c.users; ++u) {
    for (int i = 0; i < c.items; ++i) {
      const double p = out.user_cluster[u] == out.item_cluster[i] ? c.p_in : c.p_out;
      if (unit(rng) < p) inter.pairs.push_back({u, i});
    }
  }
  inter.user_count = inter.users.size();
  inter.item_count = inter.items.size();
  return out;
}

void write_synth(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_interactions(dir / "interactions.tsv", data.interactions);
  write_embedding_file(dir / "items.ccemb", data.interactions.items.raw_ids(), data.item_embeddings);
}

}  // namespace collabctx
