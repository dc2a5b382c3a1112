#include "collabctx/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "collabctx/eval.hpp"
#include "collabctx/graph.hpp"

namespace collabctx {

const char* to_string(Phase phase) {
  return phase == Phase::item_tutoring ? "item_tutoring" : "user_tutoring";
}

std::string format_epoch_record(const EpochRecord& r) {
  return fmt::format("{}\t{}\t{}\t{:.8f}\t{:.6f}\t{:.6f}\n", r.phase, r.round, r.epoch, r.train_loss,
                     r.valid_recall10, r.valid_ndcg10);
}

namespace {

// Stream tags keep the derived generators independent of each other.
enum class Stream : std::uint32_t { user_init = 1, adapter_init = 2, shuffle = 3, dropout = 4 };

std::mt19937_64 derived_rng(std::uint64_t seed, Stream stream, int round = 0, Phase phase = Phase::item_tutoring,
                            int epoch = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(round),
                    static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

std::vector<Interaction> epoch_order(const TrainConfig& config, const InteractionSet& train, int round,
                                     Phase phase, int epoch) {
  std::vector<Interaction> edges = train.pairs;
  auto rng = derived_rng(config.seed, Stream::shuffle, round, phase, epoch);
  std::shuffle(edges.begin(), edges.end(), rng);
  return edges;
}

template <typename Fn>
void for_each_batch(const std::vector<Interaction>& edges, int batch_size, Fn&& fn) {
  for (size_t start = 0; start < edges.size(); start += static_cast<size_t>(batch_size)) {
    const size_t len = std::min(edges.size() - start, static_cast<size_t>(batch_size));
    fn(std::span<const Interaction>(edges.data() + start, len));
  }
}

// Item-side layer-0 table used as the frozen tutor. The first round tutors with
// the raw contextual embeddings; later rounds with the current adapter output.
Matrix tutor_items(const TrainData& data, const TrainState& state) {
  return state.round == 1 ? data.item_contextual : state.adapter.forward(data.item_contextual);
}

InferenceMode eval_mode(Phase phase, int round) {
  return phase == Phase::item_tutoring && round == 1 ? InferenceMode::without_mlp : InferenceMode::with_mlp;
}

struct ValidMetrics {
  double recall10 = 0.0;
  double ndcg10 = 0.0;
};

ValidMetrics validate(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                      const TrainState& state, Phase phase) {
  const Matrix items0 = phase == Phase::item_tutoring ? tutor_items(data, state)
                                                      : state.adapter.forward(data.item_contextual);
  const auto tables = build_inference_tables(graph, state.user_layer0, items0, config.layers);
  static const std::vector<int> ks{10};
  auto report =
      full_ranking(tables, config.normalize_scores, make_ranking_task(data.bundle, EvalSplit::valid), ks);
  return {report.recall.at(10), report.ndcg.at(10)};
}

std::vector<Matrix*> adapter_params(MlpAdapter& adapter) {
  std::vector<Matrix*> out;
  for (auto& layer : adapter.layers()) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

void check_finite(const Matrix& m, const TrainState& s) {
  if (!m.allFinite()) {
    throw std::runtime_error(fmt::format("non-finite parameters in {} round {} epoch {}", to_string(s.phase),
                                         s.round, s.epoch));
  }
}

class PhaseRunner {
 public:
  PhaseRunner(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
              const TrainHooks& hooks)
      : config_(config), data_(data), graph_(graph), hooks_(hooks) {}

  // Returns false when interrupted by hooks.stop_after_epochs.
  bool run(TrainState& s, Phase phase) {
    if (!s.phase_started) start(s, phase);
    if (s.phase != phase) throw std::logic_error("resumed state is in a different phase");
    while (s.epoch < config_.max_epochs && s.stale < config_.patience) {
      if (hooks_.stop_after_epochs && epochs_run_ >= *hooks_.stop_after_epochs) return false;
      run_epoch(s);
      ++epochs_run_;
      if (hooks_.on_epoch) hooks_.on_epoch(s);
    }
    finish(s);
    if (hooks_.on_epoch) hooks_.on_epoch(s);
    return true;
  }

 private:
  void start(TrainState& s, Phase phase) {
    s.phase = phase;
    s.epoch = 0;
    s.adam_t = 0;
    s.stale = 0;
    s.moments.clear();
    if (phase == Phase::item_tutoring) {
      s.moments.push_back(AdamMoments::zeros_like(s.user_layer0));
    } else {
      for (Matrix* p : adapter_params(s.adapter)) s.moments.push_back(AdamMoments::zeros_like(*p));
    }
    const auto metrics = validate(config_, data_, graph_, s, phase);
    const double loss = epoch_loss(config_, data_, graph_, s, phase, 0);
    record(s, loss, metrics);
    s.best_epoch = 0;
    s.best_ndcg = metrics.ndcg10;
    s.best_recall = metrics.recall10;
    s.best_user_layer0 = s.user_layer0;
    s.best_adapter = s.adapter;
    s.phase_started = true;
  }

  void run_epoch(TrainState& s) {
    ++s.epoch;
    const auto edges = epoch_order(config_, data_.bundle.train, s.round, s.phase, s.epoch);
    const AdamConfig adam{config_.learning_rate, config_.weight_decay};
    double loss_sum = 0.0;
    size_t batches = 0;

    if (s.phase == Phase::item_tutoring) {
      const Matrix items0 = tutor_items(data_, s);
      for_each_batch(edges, config_.loss.batch_size, [&](std::span<const Interaction> batch) {
        auto r = item_tutoring_loss(graph_, config_.layers, config_.loss, batch, s.user_layer0, items0);
        loss_sum += r.loss.total();
        ++batches;
        adam_step(s.user_layer0, r.grad_users0, s.moments[0], adam, ++s.adam_t, true);
        check_finite(s.user_layer0, s);
      });
    } else {
      auto dropout = derived_rng(config_.seed, Stream::dropout, s.round, s.phase, s.epoch);
      for_each_batch(edges, config_.loss.batch_size, [&](std::span<const Interaction> batch) {
        auto r = user_tutoring_loss(graph_, config_.layers, config_.loss, batch, s.user_layer0,
                                    data_.item_contextual, s.adapter, dropout);
        loss_sum += r.loss.total();
        ++batches;
        ++s.adam_t;
        auto params = adapter_params(s.adapter);
        for (size_t l = 0; l < r.grad_adapter.layers.size(); ++l) {
          // Weight decay on weights only, not biases.
          adam_step(*params[2 * l], r.grad_adapter.layers[l].weight, s.moments[2 * l], adam, s.adam_t, true);
          adam_step(*params[2 * l + 1], r.grad_adapter.layers[l].bias, s.moments[2 * l + 1], adam, s.adam_t,
                    false);
          check_finite(*params[2 * l], s);
        }
      });
    }

    const auto metrics = validate(config_, data_, graph_, s, s.phase);
    record(s, loss_sum / static_cast<double>(std::max<size_t>(batches, 1)), metrics);
    if (metrics.ndcg10 > s.best_ndcg) {
      s.best_ndcg = metrics.ndcg10;
      s.best_recall = metrics.recall10;
      s.best_epoch = s.epoch;
      s.stale = 0;
      if (s.phase == Phase::item_tutoring) s.best_user_layer0 = s.user_layer0;
      else s.best_adapter = s.adapter;
    } else {
      ++s.stale;
    }
  }

  void finish(TrainState& s) {
    if (s.phase == Phase::item_tutoring) s.user_layer0 = s.best_user_layer0;
    else s.adapter = s.best_adapter;

    PhaseSummary summary;
    summary.phase = to_string(s.phase);
    summary.round = s.round;
    summary.best_epoch = s.best_epoch;
    summary.epochs_run = s.epoch;
    summary.valid_recall10 = s.best_recall;
    summary.valid_ndcg10 = s.best_ndcg;
    summary.eval_mode = eval_mode(s.phase, s.round);
    s.phases.push_back(summary);
    if (s.best_ndcg > s.global_best_ndcg) {
      s.global_best_ndcg = s.best_ndcg;
      s.global_best_phase = static_cast<int>(s.phases.size()) - 1;
      s.global_user_layer0 = s.user_layer0;
      s.global_adapter = s.adapter;
    }

    s.phase_started = false;
    s.moments.clear();
    s.best_user_layer0 = Matrix();
    s.best_adapter = MlpAdapter();
    if (s.phase == Phase::item_tutoring) {
      s.phase = Phase::user_tutoring;
    } else {
      s.phase = Phase::item_tutoring;
      ++s.round;
      if (s.round > config_.rounds) s.finished = true;
    }
    s.epoch = 0;
  }

  void record(TrainState& s, double loss, const ValidMetrics& m) {
    EpochRecord r{to_string(s.phase), s.round, s.epoch, loss, m.recall10, m.ndcg10};
    s.history.push_back(r);
    if (hooks_.on_record) hooks_.on_record(r);
  }

  const TrainConfig& config_;
  const TrainData& data_;
  const BipartiteGraph& graph_;
  const TrainHooks& hooks_;
  int epochs_run_ = 0;
};

void check_inputs(const TrainConfig& config, const TrainData& data) {
  auto errors = config.validate();
  if (!errors.empty()) {
    std::string all;
    for (const auto& e : errors) all += "\n  " + e;
    throw std::invalid_argument("invalid training config:" + all);
  }
  if (data.bundle.train.empty()) throw std::invalid_argument("train: empty train set");
  if (data.item_contextual.rows() != data.bundle.item_count()) {
    throw std::invalid_argument("train: item embedding rows do not match item count");
  }
  if (data.item_contextual.cols() != config.embedding_dim) {
    throw std::invalid_argument(fmt::format("train: embedding dim {} does not match configured {}",
                                            data.item_contextual.cols(), config.embedding_dim));
  }
}

void run_single_phase(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                      TrainState& state, const TrainHooks& hooks, Phase phase) {
  check_inputs(config, data);
  if (state.phase_started && state.phase != phase) {
    throw std::logic_error("another phase is in progress");
  }
  state.phase = phase;
  PhaseRunner(config, data, graph, hooks).run(state, phase);
}

}  // namespace

double epoch_loss(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                  const TrainState& state, Phase phase, int epoch) {
  const auto edges = epoch_order(config, data.bundle.train, state.round, phase, epoch);
  double sum = 0.0;
  size_t batches = 0;
  if (phase == Phase::item_tutoring) {
    const Matrix items0 = tutor_items(data, state);
    for_each_batch(edges, config.loss.batch_size, [&](std::span<const Interaction> batch) {
      sum += item_tutoring_loss(graph, config.layers, config.loss, batch, state.user_layer0, items0).loss.total();
      ++batches;
    });
  } else {
    auto dropout = derived_rng(config.seed, Stream::dropout, state.round, phase, epoch);
    for_each_batch(edges, config.loss.batch_size, [&](std::span<const Interaction> batch) {
      sum += user_tutoring_loss(graph, config.layers, config.loss, batch, state.user_layer0,
                                data.item_contextual, state.adapter, dropout)
                 .loss.total();
      ++batches;
    });
  }
  return sum / static_cast<double>(std::max<size_t>(batches, 1));
}

TrainState initial_state(const TrainConfig& config, Index user_count, int dim) {
  TrainState s;
  auto rng = derived_rng(config.seed, Stream::user_init);
  std::normal_distribution<double> normal(0.0, config.user_init_std);
  s.user_layer0.resize(user_count, dim);
  for (Eigen::Index r = 0; r < s.user_layer0.rows(); ++r)
    for (Eigen::Index c = 0; c < s.user_layer0.cols(); ++c) s.user_layer0(r, c) = normal(rng);
  AdapterConfig adapter = config.adapter;
  adapter.seed = derived_rng(config.seed, Stream::adapter_init)();
  s.adapter = MlpAdapter::init(dim, adapter);
  return s;
}

void item_tutoring_phase(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                         TrainState& state, const TrainHooks& hooks) {
  run_single_phase(config, data, graph, state, hooks, Phase::item_tutoring);
}

void user_tutoring_phase(const TrainConfig& config, const TrainData& data, const BipartiteGraph& graph,
                         TrainState& state, const TrainHooks& hooks) {
  run_single_phase(config, data, graph, state, hooks, Phase::user_tutoring);
}

std::optional<TrainedModel> train(const TrainConfig& config, const TrainData& data, TrainState state,
                                  const TrainHooks& hooks) {
  check_inputs(config, data);
  const auto graph = build_graph(data.bundle.train);
  PhaseRunner runner(config, data, graph, hooks);
  while (!state.finished) {
    if (!runner.run(state, state.phase)) return std::nullopt;
  }

  TrainedModel model;
  model.config = config;
  model.users = data.bundle.train.users;
  model.items = data.bundle.train.items;
  model.user_layer0 = state.global_user_layer0;
  model.item_contextual = data.item_contextual;
  model.adapter = state.global_adapter;
  model.history = std::move(state.history);
  model.phases = std::move(state.phases);
  model.selected_phase = state.global_best_phase;
  refresh_inference_cache(model, graph);
  return model;
}

TrainedModel train(const TrainConfig& config, const TrainData& data) {
  check_inputs(config, data);
  auto state = initial_state(config, data.bundle.user_count(), static_cast<int>(data.item_contextual.cols()));
  return *train(config, data, std::move(state));
}

}  // namespace collabctx
