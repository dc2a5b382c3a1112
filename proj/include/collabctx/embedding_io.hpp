#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "collabctx/dataset.hpp"
#include "collabctx/matrix.hpp"

namespace collabctx {

// CCEMB1 layout, all integers and floats little-endian:
//   "CCEMB1" | u32 count | u32 dim | count x { u32 id_len | id bytes | dim x f32 }
inline constexpr std::string_view kEmbeddingMagic = "CCEMB1";
inline constexpr int kDefaultEmbeddingDim = 768;

class EmbeddingFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmbeddingHeader {
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
};

struct EmbeddingFile {
  std::vector<std::string> ids;
  Matrix values;  // ids.size() x dim, widened from f32
};

std::string encode_embeddings(const std::vector<std::string>& ids, const Matrix& values);
EmbeddingFile decode_embeddings(std::string_view bytes, const std::string& source = "<memory>");

void write_embedding_file(const std::filesystem::path& path, const std::vector<std::string>& ids,
                          const Matrix& values);
EmbeddingFile read_embedding_file(const std::filesystem::path& path);
EmbeddingHeader read_embedding_header(const std::filesystem::path& path);

// Rows come back in `expected_ids` index order and marked frozen. Extra IDs in
// the file are ignored; missing ones are reported (first 10).
EmbeddingTable load_embeddings(const std::filesystem::path& path, const IdMap& expected_ids,
                               std::optional<int> expected_dim = std::nullopt);
EmbeddingTable embeddings_for(const EmbeddingFile& file, const IdMap& expected_ids,
                              std::optional<int> expected_dim = std::nullopt,
                              const std::string& source = "<memory>");

}  // namespace collabctx
