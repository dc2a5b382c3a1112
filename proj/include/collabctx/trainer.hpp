#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "collabctx/dataset.hpp"
#include "collabctx/model.hpp"
#include "collabctx/objective.hpp"
#include "collabctx/optimizer.hpp"

namespace collabctx {

const char* to_string(Phase phase);

// Everything needed to continue training from an epoch boundary. All
// randomness is re-derived from (seed, round, phase, epoch), so no generator
// state is stored.
struct TrainState {
  Matrix user_layer0;
  MlpAdapter adapter;
  std::vector<EpochRecord> history;
  std::vector<PhaseSummary> phases;

  // Best completed-phase snapshot so far.
  int global_best_phase = -1;
  double global_best_ndcg = -1.0;
  Matrix global_user_layer0;
  MlpAdapter global_adapter;

  // Phase in progress.
  int round = 1;
  Phase phase = Phase::item_tutoring;
  int epoch = 0;  // completed epochs; 0 means only the initial evaluation ran
  bool phase_started = false;
  long adam_t = 0;
  std::vector<AdamMoments> moments;
  int best_epoch = 0;
  double best_ndcg = -1.0;
  double best_recall = 0.0;
  int stale = 0;
  Matrix best_user_layer0;
  MlpAdapter best_adapter;
  bool finished = false;
};

struct TrainData {
  const SplitBundle& bundle;
  const Matrix& item_contextual;  // rows in item-index order
};

struct TrainHooks {
  // Called after every completed epoch with the resumable state.
  std::function<void(const TrainState&)> on_epoch;
  // Called for every epoch record as it is produced.
  std::function<void(const EpochRecord&)> on_record;
  // Stop (returning nullopt from train) once this many epochs ran in this call.
  std::optional<int> stop_after_epochs;
};

// Fresh state: Gaussian user layer-0, freshly initialized adapter.
TrainState initial_state(const TrainConfig& config, Index user_count, int dim);

// Runs `config.rounds` alternations of item and user tutoring starting from
// `state`. Returns the model built from the best phase snapshot, or nullopt
// when hooks.stop_after_epochs interrupted the run.
std::optional<TrainedModel> train(const TrainConfig& config, const TrainData& data, TrainState state,
                                  const TrainHooks& hooks = {});
TrainedModel train(const TrainConfig& config, const TrainData& data);

// Single phases on an explicit state, for callers that drive the schedule
// themselves. The phase runs to early stop and restores its best epoch.
void item_tutoring_phase(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                         TrainState& state, const TrainHooks& hooks = {});
void user_tutoring_phase(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                         TrainState& state, const TrainHooks& hooks = {});

// Mean phase loss over all training batches at the current parameters, with
// batches in the epoch-`epoch` shuffle order.
double epoch_loss(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                  const TrainState& state, Phase phase, int epoch);

// Appends one "phase round epoch train_loss valid_recall@10 valid_ndcg@10" line.
std::string format_epoch_record(const EpochRecord& record);

}  // namespace collabctx
