#include "collabctx/eval.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "collabctx/fileio.hpp"
#include "collabctx/objective.hpp"
#include "collabctx/parallel.hpp"

namespace collabctx {

const char* to_string(EvalSplit split) {
  switch (split) {
    case EvalSplit::valid: return "valid";
    case EvalSplit::test: return "test";
    case EvalSplit::cold_test: return "cold_test";
  }
  return "?";
}

namespace {

bool contains_sorted(std::span<const Index> sorted, Index x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

}  // namespace

double recall_at_k(std::span<const Index> ranked, std::span<const Index> truth, int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (truth.empty()) throw std::invalid_argument("recall_at_k: empty ground truth");
  const auto limit = std::min<size_t>(ranked.size(), static_cast<size_t>(k));
  size_t hits = 0;
  for (size_t r = 0; r < limit; ++r) hits += contains_sorted(truth, ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> truth, int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  if (truth.empty()) throw std::invalid_argument("ndcg_at_k: empty ground truth");
  const auto limit = std::min<size_t>(ranked.size(), static_cast<size_t>(k));
  double dcg = 0.0;
  for (size_t r = 0; r < limit; ++r) {
    if (contains_sorted(truth, ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  const auto ideal = std::min<size_t>(truth.size(), static_cast<size_t>(k));
  for (size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

RankingTask make_ranking_task(const SplitBundle& bundle, EvalSplit split) {
  RankingTask task;
  task.split = split;
  const auto n_users = static_cast<size_t>(bundle.user_count());
  task.truth.resize(n_users);
  task.excluded.resize(n_users);
  for (const auto& p : bundle.train.pairs) task.excluded[p.user].push_back(p.item);
  if (split == EvalSplit::test) {
    for (const auto& p : bundle.valid.pairs) task.excluded[p.user].push_back(p.item);
  }
  const InteractionSet& source = split == EvalSplit::valid  ? bundle.valid
                                 : split == EvalSplit::test ? bundle.test
                                                            : bundle.cold_test;
  for (const auto& p : source.pairs) task.truth[p.user].push_back(p.item);
  for (auto* lists : {&task.truth, &task.excluded}) {
    for (auto& v : *lists) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
  auto cold = bundle.cold_mask();
  task.candidate.resize(cold.size());
  for (size_t i = 0; i < cold.size(); ++i) {
    task.candidate[i] = split == EvalSplit::cold_test ? cold[i] : !cold[i];
  }
  return task;
}

std::vector<Index> top_k(std::span<const double> scores, const std::vector<bool>& candidate,
                         std::span<const Index> excluded, int k) {
  std::vector<Index> pool;
  pool.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    const auto idx = static_cast<Index>(i);
    if (candidate[i] && !contains_sorted(excluded, idx)) pool.push_back(idx);
  }
  const auto limit = std::min<size_t>(pool.size(), static_cast<size_t>(std::max(k, 0)));
  auto better = [&scores](Index a, Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(limit), pool.end(), better);
  pool.resize(limit);
  return pool;
}

EvalReport full_ranking(const RankingTask& task, const UserScorer& scorer, std::span<const int> ks) {
  if (ks.empty()) throw std::invalid_argument("full_ranking: no cutoffs");
  const int max_k = *std::max_element(ks.begin(), ks.end());
  const size_t n_users = task.truth.size();

  std::vector<Index> users;
  for (size_t u = 0; u < n_users; ++u) {
    const auto& truth = task.truth[u];
    bool any = std::any_of(truth.begin(), truth.end(), [&](Index i) { return task.candidate[i]; });
    if (any) users.push_back(static_cast<Index>(u));
  }
  if (users.empty()) {
    throw EmptyReportError(fmt::format("no evaluable users in split '{}'", to_string(task.split)));
  }

  // Per-user metrics land in fixed slots so the final sums are order-independent.
  const size_t nk = ks.size();
  std::vector<double> per_user(users.size() * nk * 2, 0.0);
  parallel_for(users.size(), [&](size_t begin, size_t end) {
    std::vector<double> scores;
    for (size_t slot = begin; slot < end; ++slot) {
      const Index u = users[slot];
      scorer(u, scores);
      auto ranked = top_k(scores, task.candidate, task.excluded[u], max_k);
      for (size_t k = 0; k < nk; ++k) {
        per_user[(slot * nk + k) * 2] = recall_at_k(ranked, task.truth[u], ks[k]);
        per_user[(slot * nk + k) * 2 + 1] = ndcg_at_k(ranked, task.truth[u], ks[k]);
      }
    }
  }, 16);

  EvalReport report;
  report.split = task.split;
  report.users_evaluated = static_cast<Index>(users.size());
  for (size_t k = 0; k < nk; ++k) {
    double r = 0.0, n = 0.0;
    for (size_t slot = 0; slot < users.size(); ++slot) {
      r += per_user[(slot * nk + k) * 2];
      n += per_user[(slot * nk + k) * 2 + 1];
    }
    report.recall[ks[k]] = r / static_cast<double>(users.size());
    report.ndcg[ks[k]] = n / static_cast<double>(users.size());
  }
  return report;
}

EvalReport full_ranking(const InferenceTables& tables, bool normalize, const RankingTask& task,
                        std::span<const int> ks) {
  const Matrix users = normalize ? normalize_rows(tables.users) : tables.users;
  const Matrix items = normalize ? normalize_rows(tables.items) : tables.items;
  if (users.cols() != items.cols()) throw std::invalid_argument("full_ranking: dimension mismatch");
  return full_ranking(
      task,
      [&](Index u, std::vector<double>& scores) {
        scores.resize(static_cast<size_t>(items.rows()));
        Eigen::Map<Vector> out(scores.data(), items.rows());
        out.noalias() = items * users.row(u).transpose();
      },
      ks);
}

EvalReport full_ranking(const TrainedModel& model, const SplitBundle& bundle, EvalSplit split,
                        InferenceMode mode, std::span<const int> ks) {
  auto report = full_ranking(model.tables(mode), model.config.normalize_scores,
                             make_ranking_task(bundle, split), ks);
  report.mode = mode;
  return report;
}

EvalReport popularity_ranking(const SplitBundle& bundle, EvalSplit split, std::span<const int> ks) {
  std::vector<double> degree(static_cast<size_t>(bundle.item_count()), 0.0);
  for (const auto& p : bundle.train.pairs) degree[p.item] += 1.0;
  return full_ranking(
      make_ranking_task(bundle, split), [&](Index, std::vector<double>& scores) { scores = degree; }, ks);
}

double score(const TrainedModel& model, Index user, Index item, InferenceMode mode) {
  const auto& t = model.tables(mode);
  if (user < 0 || user >= t.users.rows() || item < 0 || item >= t.items.rows()) {
    throw std::out_of_range(fmt::format("score: index out of range (user {}, item {})", user, item));
  }
  RowVector hu = t.users.row(user);
  RowVector hi = t.items.row(item);
  if (model.config.normalize_scores) {
    if (hu.norm() > 0) hu.normalize();
    if (hi.norm() > 0) hi.normalize();
  }
  return hu.dot(hi);
}

std::string to_kv_text(const EvalReport& r) {
  std::string s;
  s += fmt::format("setting={}\n", r.cold() ? "cold" : "warm");
  s += fmt::format("split={}\n", to_string(r.split));
  s += fmt::format("mode={}\n", to_string(r.mode));
  s += fmt::format("users_evaluated={}\n", r.users_evaluated);
  for (const auto& [k, v] : r.recall) s += fmt::format("recall@{}={:.6f}\n", k, v);
  for (const auto& [k, v] : r.ndcg) s += fmt::format("ndcg@{}={:.6f}\n", k, v);
  return s;
}

std::string to_json_line(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["setting"] = r.cold() ? "cold" : "warm";
  j["split"] = to_string(r.split);
  j["mode"] = to_string(r.mode);
  j["users_evaluated"] = r.users_evaluated;
  for (const auto& [k, v] : r.recall) j[fmt::format("recall@{}", k)] = v;
  for (const auto& [k, v] : r.ndcg) j[fmt::format("ndcg@{}", k)] = v;
  return j.dump();
}

void export_projections(const TrainedModel& model, const std::filesystem::path& path) {
  const auto dim = model.item_contextual.cols();
  std::string text = "kind\tindex";
  for (Eigen::Index c = 0; c < dim; ++c) text += fmt::format("\tv{}", c);
  text += '\n';
  auto emit = [&](std::string_view kind, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      text += fmt::format("{}\t{}", kind, r);
      for (Eigen::Index c = 0; c < m.cols(); ++c) text += fmt::format("\t{:.17g}", m(r, c));
      text += '\n';
    }
  };
  emit("item_contextual", model.item_contextual);
  emit("item_mapped", model.adapter.forward(model.item_contextual));
  emit("user_learned", model.mapped.users);
  write_file_atomic(path, text);
}

}  // namespace collabctx
