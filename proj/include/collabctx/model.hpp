#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "collabctx/adapter.hpp"
#include "collabctx/dataset.hpp"
#include "collabctx/matrix.hpp"
#include "collabctx/objective.hpp"

namespace collabctx {

enum class InferenceMode { with_mlp, without_mlp };

const char* to_string(InferenceMode mode);
InferenceMode parse_inference_mode(const std::string& text);
const char* to_string(UniformityMode mode);
UniformityMode parse_uniformity_mode(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-6;
  int layers = 2;  // graph propagation depth K
  int patience = 30;
  int max_epochs = 300;
  int rounds = 1;
  std::uint64_t seed = 2024;
  double user_init_std = 0.1;
  int embedding_dim = 768;
  LossConfig loss;
  AdapterConfig adapter;
  // Cosine scoring at inference; follows loss.normalize unless overridden.
  bool normalize_scores = true;

  // Every violated constraint, not just the first.
  std::vector<std::string> validate() const;
  // Warnings for values outside the documented tuning grid.
  std::vector<std::string> grid_warnings() const;
};

// key=value lines, stable key order.
std::string to_kv_text(const TrainConfig& config);
TrainConfig train_config_from_kv(const std::string& text);
// Overlays keys present in `text` onto `base`; unknown keys are collected.
TrainConfig apply_kv(TrainConfig base, const std::string& text, std::vector<std::string>* unknown);

// Final propagated embeddings for one inference mode, before any scoring normalization.
struct InferenceTables {
  Matrix users;
  Matrix items;
};

struct EpochRecord {
  std::string phase;  // "item_tutoring" or "user_tutoring"
  int round = 1;
  int epoch = 0;      // 0 is the evaluation before any update
  double train_loss = 0.0;
  double valid_recall10 = 0.0;
  double valid_ndcg10 = 0.0;
};

struct PhaseSummary {
  std::string phase;
  int round = 1;
  int best_epoch = 0;
  int epochs_run = 0;
  double valid_recall10 = 0.0;
  double valid_ndcg10 = 0.0;
  InferenceMode eval_mode = InferenceMode::without_mlp;
};

struct TrainedModel {
  TrainConfig config;
  IdMap users;
  IdMap items;
  Matrix user_layer0;
  Matrix item_contextual;  // x_i exactly as loaded
  MlpAdapter adapter;
  InferenceTables contextual;  // propagate(user_layer0, x)
  InferenceTables mapped;      // propagate(user_layer0, adapter(x))
  std::vector<EpochRecord> history;
  std::vector<PhaseSummary> phases;
  int selected_phase = -1;  // index into phases of the returned snapshot

  const InferenceTables& tables(InferenceMode mode) const {
    return mode == InferenceMode::with_mlp ? mapped : contextual;
  }
};

InferenceTables build_inference_tables(const BipartiteGraph& graph, const Matrix& users0,
                                       const Matrix& items0, int layers);
// Recomputes both cached table pairs from the layer-0 parameters.
void refresh_inference_cache(TrainedModel& model, const BipartiteGraph& graph);

}  // namespace collabctx
