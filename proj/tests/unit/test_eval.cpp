#include <doctest.h>

#include <random>

#include "collabctx/eval.hpp"
#include "support/oracles.hpp"

using namespace collabctx;

TEST_CASE("recall and NDCG hand values") {
  std::vector<Index> ranked = {0, 1, 2};
  std::vector<Index> one = {1};
  std::vector<Index> two = {0, 2};
  CHECK(ndcg_at_k(ranked, one, 10) == doctest::Approx(0.6309297536));
  CHECK(ndcg_at_k(ranked, two, 10) == doctest::Approx(1.5 / (1 + 1 / std::log2(3.0))));
  CHECK(ndcg_at_k(ranked, two, 10) == doctest::Approx(0.9197).epsilon(1e-4));
  CHECK(recall_at_k(ranked, two, 1) == doctest::Approx(0.5));
  CHECK(recall_at_k(ranked, two, 10) == 1.0);
  CHECK(ndcg_at_k(ranked, std::vector<Index>{7}, 10) == 0.0);
}

TEST_CASE("top_k agrees with a brute-force sort, including ties") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 30;
    std::vector<double> scores(n);
    std::vector<bool> cand(n);
    std::vector<Index> excl;
    for (int i = 0; i < n; ++i) {
      scores[i] = level(rng) * 0.5;
      cand[i] = level(rng) != 0;
      if (level(rng) == 0) excl.push_back(i);
    }
    for (int k : {1, 5, 10, 50}) CHECK(top_k(scores, cand, excl, k) == oracle::brute_top_k(scores, cand, excl, k));
  }
}

TEST_CASE("ranking tasks exclude seen items and restrict the candidate pool") {
  auto s = parse_interactions(
      "a\tx\na\ty\na\tz\na\tw\na\tc\n"
      "b\tx\nb\ty\nb\tz\nb\tw\nb\tc\n");
  SplitBundle b;
  b.train = s.with_pairs({{0, 0}, {0, 1}, {1, 0}});
  b.valid = s.with_pairs({{0, 2}});
  b.test = s.with_pairs({{0, 3}, {1, 2}});
  b.cold_items = {4};
  b.cold_test = s.with_pairs({{0, 4}, {1, 4}});
  auto test = make_ranking_task(b, EvalSplit::test);
  CHECK(test.excluded[0] == std::vector<Index>{0, 1, 2});
  CHECK(test.excluded[1] == std::vector<Index>{0});
  CHECK_FALSE(test.candidate[4]);
  auto valid = make_ranking_task(b, EvalSplit::valid);
  CHECK(valid.excluded[0] == std::vector<Index>{0, 1});
  auto cold = make_ranking_task(b, EvalSplit::cold_test);
  CHECK(cold.candidate == std::vector<bool>{false, false, false, false, true});

  InferenceTables t{Matrix::Ones(2, 2), Matrix::Identity(5, 2)};
  auto r = full_ranking(t, false, cold, kDefaultTopK);
  CHECK(r.users_evaluated == 2);
  CHECK(r.recall.at(10) == 1.0);
  CHECK(r.ndcg.at(10) == 1.0);
}

TEST_CASE("full ranking equals brute-force per-user metrics") {
  std::mt19937_64 rng(21);
  auto s = oracle::random_interactions(8, 20, 0.3, rng);
  SplitBundle b;
  std::vector<Interaction> train, test;
  for (auto p : s.pairs) ((p.user + p.item) % 3 == 0 ? test : train).push_back(p);
  b.train = s.with_pairs(train);
  b.valid = s.with_pairs({});
  b.test = s.with_pairs(test);
  b.cold_test = s.with_pairs({});
  InferenceTables t{oracle::random_matrix(8, 3, rng), oracle::random_matrix(20, 3, rng)};
  auto task = make_ranking_task(b, EvalSplit::test);
  auto report = full_ranking(t, false, task, kDefaultTopK);

  double sum = 0;
  int users = 0;
  for (Index u = 0; u < 8; ++u) {
    if (task.truth[u].empty()) continue;
    std::vector<double> sc(20);
    for (int i = 0; i < 20; ++i) sc[i] = t.users.row(u).dot(t.items.row(i));
    auto ranked = oracle::brute_top_k(sc, task.candidate, task.excluded[u], 10);
    sum += ndcg_at_k(ranked, task.truth[u], 10);
    ++users;
  }
  CHECK(report.users_evaluated == users);
  CHECK(report.ndcg.at(10) == doctest::Approx(sum / users).epsilon(1e-12));
}

TEST_CASE("a split without truth is an error") {
  auto s = parse_interactions("a\tx\n");
  SplitBundle b;
  b.train = s;
  b.valid = b.test = b.cold_test = s.with_pairs({});
  InferenceTables t{Matrix::Ones(1, 2), Matrix::Ones(1, 2)};
  CHECK_THROWS_AS(full_ranking(t, false, make_ranking_task(b, EvalSplit::test), kDefaultTopK), EmptyReportError);
}

TEST_CASE("report serializations") {
  EvalReport r;
  r.split = EvalSplit::cold_test;
  r.mode = InferenceMode::without_mlp;
  r.recall = {{10, 0.5}};
  r.ndcg = {{10, 0.25}};
  r.users_evaluated = 3;
  CHECK(to_kv_text(r).find("ndcg@10=0.250000") != std::string::npos);
  CHECK(to_json_line(r).find("\"mode\":\"without_mlp\"") != std::string::npos);
}
