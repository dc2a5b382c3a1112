#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace collabctx {

using Index = std::int32_t;

struct Interaction {
  Index user = 0;
  Index item = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

// Bidirectional raw-ID <-> contiguous index table for one node kind.
class IdMap {
 public:
  // Returns the index for `raw`, assigning the next free one on first sight.
  Index intern(const std::string& raw);
  // Throws std::out_of_range for unknown IDs.
  Index at(const std::string& raw) const;
  bool contains(const std::string& raw) const { return index_.count(raw) > 0; }
  const std::string& raw(Index idx) const { return raw_.at(static_cast<size_t>(idx)); }
  Index size() const { return static_cast<Index>(raw_.size()); }
  const std::vector<std::string>& raw_ids() const { return raw_; }

  // Keeps only indices with keep[idx] set; returns old -> new index (-1 for dropped).
  std::vector<Index> compact(const std::vector<bool>& keep);

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.raw_ == b.raw_; }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, Index> index_;
};

// Deduplicated implicit-feedback pairs over contiguous user/item indices.
struct InteractionSet {
  std::vector<Interaction> pairs;
  Index user_count = 0;
  Index item_count = 0;
  IdMap users;
  IdMap items;

  bool empty() const { return pairs.empty(); }
  // Same node spaces, different edges.
  InteractionSet with_pairs(std::vector<Interaction> p) const;
};

// CSR adjacency in both directions of the user-item bipartite graph.
struct BipartiteGraph {
  Index user_count = 0;
  Index item_count = 0;
  std::vector<std::int64_t> user_offsets;  // size user_count + 1
  std::vector<Index> user_items;
  std::vector<std::int64_t> item_offsets;  // size item_count + 1
  std::vector<Index> item_users;

  std::int64_t edge_count() const { return static_cast<std::int64_t>(user_items.size()); }
  Index user_degree(Index u) const {
    return static_cast<Index>(user_offsets[u + 1] - user_offsets[u]);
  }
  Index item_degree(Index i) const {
    return static_cast<Index>(item_offsets[i + 1] - item_offsets[i]);
  }
  bool has_edge(Index u, Index i) const;
};

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct ColdSplit {
  InteractionSet warm;
  std::vector<Index> cold_items;  // sorted ascending
  InteractionSet cold_test;
};

struct SplitBundle {
  InteractionSet train;
  InteractionSet valid;
  InteractionSet test;
  std::vector<Index> cold_items;  // sorted ascending
  InteractionSet cold_test;

  // Node spaces shared by every split.
  Index user_count() const { return train.user_count; }
  Index item_count() const { return train.item_count; }
  std::vector<bool> cold_mask() const;
};

// Errors carry the offending file and line where one applies.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads "user<TAB>item[<TAB>...]" lines; blank lines are skipped.
InteractionSet load_interactions(const std::filesystem::path& path);
// Same parsing from an in-memory buffer; `source` names it in error messages.
InteractionSet parse_interactions(const std::string& text, const std::string& source = "<memory>");

// Iteratively drops users and items with degree < k, then remaps contiguously.
InteractionSet k_core_filter(const InteractionSet& inters, int k);

// floor(fraction * item_count) cold items sampled uniformly under `seed`.
ColdSplit cold_item_split(const InteractionSet& inters, double fraction, std::uint64_t seed);
ColdSplit cold_item_split_count(const InteractionSet& inters, Index cold_count, std::uint64_t seed);

// Per-user shuffle, train receives rounding remainders.
SplitBundle holdout_split(const ColdSplit& cold, SplitRatios ratios, std::uint64_t seed);
// Counts assigned to (train, valid, test) for one user's `n` interactions.
std::array<Index, 3> holdout_counts(Index n, SplitRatios ratios);

BipartiteGraph build_graph(const InteractionSet& train);

// Writes pairs as raw IDs, one "user<TAB>item" per line, in pair order.
void write_interactions(const std::filesystem::path& path, const InteractionSet& inters);
// Reads a raw-ID split file against fixed ID maps; unknown IDs are an error.
InteractionSet read_split(const std::filesystem::path& path, const IdMap& users, const IdMap& items);

void write_id_map(const std::filesystem::path& path, const IdMap& ids);
IdMap read_id_map(const std::filesystem::path& path);

// Directory layout: users.tsv, items.tsv (index<TAB>raw id), train.tsv,
// valid.tsv, test.tsv, cold_test.tsv (raw-id pairs), cold_items.tsv (raw ids).
// Returns the written file names in a fixed order.
std::vector<std::string> write_split_bundle(const std::filesystem::path& dir, const SplitBundle& bundle);
SplitBundle read_split_bundle(const std::filesystem::path& dir);

}  // namespace collabctx
