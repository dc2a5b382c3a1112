#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "collabctx/dataset.hpp"
#include "collabctx/model.hpp"

namespace collabctx {

enum class EvalSplit { valid, test, cold_test };
const char* to_string(EvalSplit split);

inline const std::vector<int> kDefaultTopK = {10, 50};

struct EvalReport {
  EvalSplit split = EvalSplit::test;
  InferenceMode mode = InferenceMode::with_mlp;
  std::map<int, double> recall;
  std::map<int, double> ndcg;
  Index users_evaluated = 0;

  bool cold() const { return split == EvalSplit::cold_test; }
};

class EmptyReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double recall_at_k(std::span<const Index> ranked, std::span<const Index> truth, int k);
// Binary gain, 1/log2(rank + 1) discount, ideal DCG over min(|truth|, k) hits.
double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> truth, int k);

// Per-user ground truth and excluded items for one evaluation split.
struct RankingTask {
  EvalSplit split = EvalSplit::test;
  std::vector<std::vector<Index>> truth;     // sorted, per user
  std::vector<std::vector<Index>> excluded;  // sorted, per user
  std::vector<bool> candidate;               // per item
};

// Warm splits rank all warm items minus the user's train (and, for test, valid)
// items; the cold split ranks only the cold pool.
RankingTask make_ranking_task(const SplitBundle& bundle, EvalSplit split);

// Top-k candidate indices by descending score, ties by ascending index.
std::vector<Index> top_k(std::span<const double> scores, const std::vector<bool>& candidate,
                         std::span<const Index> excluded, int k);

using UserScorer = std::function<void(Index user, std::vector<double>& scores)>;

EvalReport full_ranking(const RankingTask& task, const UserScorer& scorer, std::span<const int> ks);
// Dot-product scoring of `tables`, rows L2-normalized first when `normalize`.
EvalReport full_ranking(const InferenceTables& tables, bool normalize, const RankingTask& task,
                        std::span<const int> ks);
EvalReport full_ranking(const TrainedModel& model, const SplitBundle& bundle, EvalSplit split,
                        InferenceMode mode, std::span<const int> ks = kDefaultTopK);

// Scores every candidate by training-set item degree.
EvalReport popularity_ranking(const SplitBundle& bundle, EvalSplit split,
                              std::span<const int> ks = kDefaultTopK);

double score(const TrainedModel& model, Index user, Index item, InferenceMode mode);

std::string to_kv_text(const EvalReport& report);
std::string to_json_line(const EvalReport& report);

// kind<TAB>index<TAB>v0..v{d-1}; kinds item_contextual, item_mapped, user_learned.
void export_projections(const TrainedModel& model, const std::filesystem::path& path);

}  // namespace collabctx
