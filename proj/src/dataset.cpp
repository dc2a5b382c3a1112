#include "collabctx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "collabctx/fileio.hpp"

namespace collabctx {

Index IdMap::intern(const std::string& raw) {
  auto [it, inserted] = index_.try_emplace(raw, static_cast<Index>(raw_.size()));
  if (inserted) raw_.push_back(raw);
  return it->second;
}

Index IdMap::at(const std::string& raw) const {
  auto it = index_.find(raw);
  if (it == index_.end()) throw std::out_of_range("unknown id: " + raw);
  return it->second;
}

std::vector<Index> IdMap::compact(const std::vector<bool>& keep) {
  std::vector<Index> remap(raw_.size(), -1);
  std::vector<std::string> kept;
  index_.clear();
  for (size_t i = 0; i < raw_.size(); ++i) {
    if (!keep[i]) continue;
    remap[i] = static_cast<Index>(kept.size());
    index_.emplace(raw_[i], remap[i]);
    kept.push_back(std::move(raw_[i]));
  }
  raw_ = std::move(kept);
  return remap;
}

InteractionSet InteractionSet::with_pairs(std::vector<Interaction> p) const {
  InteractionSet out;
  out.pairs = std::move(p);
  out.user_count = user_count;
  out.item_count = item_count;
  out.users = users;
  out.items = items;
  return out;
}

bool BipartiteGraph::has_edge(Index u, Index i) const {
  auto first = user_items.begin() + user_offsets[u];
  auto last = user_items.begin() + user_offsets[u + 1];
  return std::binary_search(first, last, i);
}

std::vector<bool> SplitBundle::cold_mask() const {
  std::vector<bool> mask(static_cast<size_t>(item_count()), false);
  for (Index i : cold_items) mask[i] = true;
  return mask;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(fmt::format("{}: cannot open file", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

InteractionSet parse_interactions(const std::string& text, const std::string& source) {
  InteractionSet out;
  std::vector<Interaction> seen;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
      throw DatasetError(fmt::format("{}:{}: malformed line, expected user<TAB>item", source, line_no));
    }
    Index u = out.users.intern(std::string(fields[0]));
    Index i = out.items.intern(std::string(fields[1]));
    seen.push_back({u, i});
  }
  if (seen.empty()) throw DatasetError(fmt::format("{}: empty input", source));

  // Dedup while keeping first-seen order.
  std::vector<Interaction> sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  std::vector<bool> taken(sorted.size(), false);
  for (const auto& p : seen) {
    auto pos = static_cast<size_t>(std::lower_bound(sorted.begin(), sorted.end(), p) - sorted.begin());
    if (taken[pos]) continue;
    // Duplicates collapse onto the first slot of their equal range.
    taken[pos] = true;
    out.pairs.push_back(p);
  }
  out.user_count = out.users.size();
  out.item_count = out.items.size();
  return out;
}

InteractionSet load_interactions(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DatasetError(fmt::format("{}: file not found", path.string()));
  }
  return parse_interactions(read_text(path), path.string());
}

InteractionSet k_core_filter(const InteractionSet& inters, int k) {
  if (k < 1) throw std::invalid_argument("k_core_filter: k must be >= 1");
  const auto n_users = static_cast<size_t>(inters.user_count);
  const auto n_items = static_cast<size_t>(inters.item_count);
  std::vector<Index> user_deg(n_users, 0), item_deg(n_items, 0);
  for (const auto& p : inters.pairs) {
    ++user_deg[p.user];
    ++item_deg[p.item];
  }

  // Incidence lists so each removal only touches its own edges.
  std::vector<std::vector<size_t>> user_edges(n_users), item_edges(n_items);
  for (size_t e = 0; e < inters.pairs.size(); ++e) {
    user_edges[inters.pairs[e].user].push_back(e);
    item_edges[inters.pairs[e].item].push_back(e);
  }
  std::vector<bool> edge_alive(inters.pairs.size(), true);
  std::vector<bool> user_alive(n_users, true), item_alive(n_items, true);

  // Queue entries: (is_item, index).
  std::vector<std::pair<bool, Index>> queue;
  for (size_t u = 0; u < n_users; ++u)
    if (user_deg[u] < k) queue.emplace_back(false, static_cast<Index>(u));
  for (size_t i = 0; i < n_items; ++i)
    if (item_deg[i] < k) queue.emplace_back(true, static_cast<Index>(i));

  while (!queue.empty()) {
    auto [is_item, node] = queue.back();
    queue.pop_back();
    auto& alive = is_item ? item_alive : user_alive;
    if (!alive[node]) continue;
    alive[node] = false;
    for (size_t e : (is_item ? item_edges : user_edges)[node]) {
      if (!edge_alive[e]) continue;
      edge_alive[e] = false;
      const auto& p = inters.pairs[e];
      if (is_item) {
        if (--user_deg[p.user] < k && user_alive[p.user]) queue.emplace_back(false, p.user);
      } else {
        if (--item_deg[p.item] < k && item_alive[p.item]) queue.emplace_back(true, p.item);
      }
    }
  }

  InteractionSet out;
  out.users = inters.users;
  out.items = inters.items;
  auto user_remap = out.users.compact(user_alive);
  auto item_remap = out.items.compact(item_alive);
  for (size_t e = 0; e < inters.pairs.size(); ++e) {
    if (!edge_alive[e]) continue;
    const auto& p = inters.pairs[e];
    out.pairs.push_back({user_remap[p.user], item_remap[p.item]});
  }
  if (out.pairs.empty()) throw DatasetError("k-core eliminated all data");
  out.user_count = out.users.size();
  out.item_count = out.items.size();
  return out;
}

ColdSplit cold_item_split_count(const InteractionSet& inters, Index cold_count, std::uint64_t seed) {
  if (cold_count < 1 || cold_count > inters.item_count) {
    throw std::invalid_argument(
        fmt::format("cold item count {} outside [1, {}]", cold_count, inters.item_count));
  }
  std::vector<Index> order(static_cast<size_t>(inters.item_count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  ColdSplit out;
  out.cold_items.assign(order.begin(), order.begin() + cold_count);
  std::sort(out.cold_items.begin(), out.cold_items.end());
  std::vector<bool> cold(static_cast<size_t>(inters.item_count), false);
  for (Index i : out.cold_items) cold[i] = true;

  std::vector<Interaction> warm, cold_pairs;
  for (const auto& p : inters.pairs) (cold[p.item] ? cold_pairs : warm).push_back(p);
  out.warm = inters.with_pairs(std::move(warm));
  out.cold_test = inters.with_pairs(std::move(cold_pairs));
  return out;
}

ColdSplit cold_item_split(const InteractionSet& inters, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument(fmt::format("cold fraction {} outside (0, 1)", fraction));
  }
  // Small slack so products like 0.05 * 20 land on the intended integer.
  auto count = static_cast<Index>(std::floor(fraction * inters.item_count + 1e-9));
  if (count < 1) {
    throw std::invalid_argument(
        fmt::format("cold fraction {} selects no items out of {}", fraction, inters.item_count));
  }
  return cold_item_split_count(inters, count, seed);
}

std::array<Index, 3> holdout_counts(Index n, SplitRatios ratios) {
  auto portion = [n](double r) { return static_cast<Index>(std::floor(r * n + 1e-9)); };
  Index valid = portion(ratios.valid);
  Index test = portion(ratios.test);
  Index train = n - valid - test;
  if (n > 0 && train < 1) {
    // Keep at least one training interaction per user.
    if (test > 0) --test; else --valid;
    train = n - valid - test;
  }
  return {train, valid, test};
}

SplitBundle holdout_split(const ColdSplit& cold, SplitRatios ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (std::abs(total - 1.0) > 1e-9 || ratios.train < 0 || ratios.valid < 0 || ratios.test < 0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  const InteractionSet& warm = cold.warm;
  if (warm.empty()) throw DatasetError("holdout_split: empty input");

  std::vector<std::vector<Index>> per_user(static_cast<size_t>(warm.user_count));
  for (const auto& p : warm.pairs) per_user[p.user].push_back(p.item);

  std::mt19937_64 rng(seed);
  std::vector<Interaction> train, valid, test;
  for (Index u = 0; u < warm.user_count; ++u) {
    auto& items = per_user[u];
    if (items.empty()) continue;
    std::sort(items.begin(), items.end());
    std::shuffle(items.begin(), items.end(), rng);
    auto [n_train, n_valid, n_test] = holdout_counts(static_cast<Index>(items.size()), ratios);
    size_t pos = 0;
    for (Index k = 0; k < n_train; ++k) train.push_back({u, items[pos++]});
    for (Index k = 0; k < n_valid; ++k) valid.push_back({u, items[pos++]});
    for (Index k = 0; k < n_test; ++k) test.push_back({u, items[pos++]});
  }
  for (auto* v : {&train, &valid, &test}) std::sort(v->begin(), v->end());

  SplitBundle out;
  out.train = warm.with_pairs(std::move(train));
  out.valid = warm.with_pairs(std::move(valid));
  out.test = warm.with_pairs(std::move(test));
  out.cold_items = cold.cold_items;
  out.cold_test = cold.cold_test;
  return out;
}

BipartiteGraph build_graph(const InteractionSet& train) {
  BipartiteGraph g;
  g.user_count = train.user_count;
  g.item_count = train.item_count;
  g.user_offsets.assign(static_cast<size_t>(g.user_count) + 1, 0);
  g.item_offsets.assign(static_cast<size_t>(g.item_count) + 1, 0);
  for (const auto& p : train.pairs) {
    ++g.user_offsets[p.user + 1];
    ++g.item_offsets[p.item + 1];
  }
  std::partial_sum(g.user_offsets.begin(), g.user_offsets.end(), g.user_offsets.begin());
  std::partial_sum(g.item_offsets.begin(), g.item_offsets.end(), g.item_offsets.begin());
  g.user_items.resize(train.pairs.size());
  g.item_users.resize(train.pairs.size());

  // Filling from sorted pairs yields sorted rows on both sides.
  std::vector<Interaction> sorted = train.pairs;
  std::sort(sorted.begin(), sorted.end());
  auto ucur = g.user_offsets;
  auto icur = g.item_offsets;
  for (const auto& p : sorted) {
    g.user_items[ucur[p.user]++] = p.item;
    g.item_users[icur[p.item]++] = p.user;
  }
  return g;
}

void write_interactions(const std::filesystem::path& path, const InteractionSet& inters) {
  std::string text;
  for (const auto& p : inters.pairs) {
    text += inters.users.raw(p.user);
    text += '\t';
    text += inters.items.raw(p.item);
    text += '\n';
  }
  write_file_atomic(path, text);
}

InteractionSet read_split(const std::filesystem::path& path, const IdMap& users, const IdMap& items) {
  InteractionSet out;
  out.users = users;
  out.items = items;
  out.user_count = users.size();
  out.item_count = items.size();
  std::istringstream in(read_text(path));
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2) {
      throw DatasetError(fmt::format("{}:{}: malformed line", path.string(), line_no));
    }
    std::string u(fields[0]), i(fields[1]);
    if (!users.contains(u) || !items.contains(i)) {
      throw DatasetError(fmt::format("{}:{}: id not in id map", path.string(), line_no));
    }
    out.pairs.push_back({users.at(u), items.at(i)});
  }
  return out;
}

void write_id_map(const std::filesystem::path& path, const IdMap& ids) {
  std::string text;
  for (Index i = 0; i < ids.size(); ++i) text += fmt::format("{}\t{}\n", i, ids.raw(i));
  write_file_atomic(path, text);
}

IdMap read_id_map(const std::filesystem::path& path) {
  IdMap ids;
  std::istringstream in(read_text(path));
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2 || std::stol(std::string(fields[0])) != ids.size()) {
      throw DatasetError(fmt::format("{}:{}: malformed id map line", path.string(), line_no));
    }
    ids.intern(std::string(fields[1]));
  }
  return ids;
}

std::vector<std::string> write_split_bundle(const std::filesystem::path& dir, const SplitBundle& b) {
  std::filesystem::create_directories(dir);
  write_id_map(dir / "users.tsv", b.train.users);
  write_id_map(dir / "items.tsv", b.train.items);
  write_interactions(dir / "train.tsv", b.train);
  write_interactions(dir / "valid.tsv", b.valid);
  write_interactions(dir / "test.tsv", b.test);
  write_interactions(dir / "cold_test.tsv", b.cold_test);
  std::string cold;
  for (Index i : b.cold_items) cold += b.train.items.raw(i) + "\n";
  write_file_atomic(dir / "cold_items.tsv", cold);
  return {"users.tsv", "items.tsv", "train.tsv", "valid.tsv", "test.tsv", "cold_test.tsv", "cold_items.tsv"};
}

SplitBundle read_split_bundle(const std::filesystem::path& dir) {
  for (const char* name : {"users.tsv", "items.tsv", "train.tsv", "valid.tsv", "test.tsv", "cold_test.tsv",
                           "cold_items.tsv"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw DatasetError(fmt::format("{}: missing split file {}", dir.string(), name));
    }
  }
  const IdMap users = read_id_map(dir / "users.tsv");
  const IdMap items = read_id_map(dir / "items.tsv");
  SplitBundle b;
  b.train = read_split(dir / "train.tsv", users, items);
  b.valid = read_split(dir / "valid.tsv", users, items);
  b.test = read_split(dir / "test.tsv", users, items);
  b.cold_test = read_split(dir / "cold_test.tsv", users, items);
  std::istringstream in(read_text(dir / "cold_items.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!items.contains(line)) {
      throw DatasetError(fmt::format("{}: cold item '{}' not in id map", dir.string(), line));
    }
    b.cold_items.push_back(items.at(line));
  }
  std::sort(b.cold_items.begin(), b.cold_items.end());
  return b;
}

}  // namespace collabctx
