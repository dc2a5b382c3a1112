#include "collabctx/embedding_io.hpp"

#include <unordered_map>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "collabctx/fileio.hpp"

namespace collabctx {

using detail::ByteReader;
using detail::ByteWriter;

std::string encode_embeddings(const std::vector<std::string>& ids, const Matrix& values) {
  if (static_cast<Eigen::Index>(ids.size()) != values.rows()) {
    throw std::invalid_argument("encode_embeddings: id count does not match row count");
  }
  ByteWriter w;
  w.bytes(kEmbeddingMagic);
  w.u32(static_cast<std::uint32_t>(ids.size()));
  w.u32(static_cast<std::uint32_t>(values.cols()));
  for (size_t r = 0; r < ids.size(); ++r) {
    w.str(ids[r]);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      w.f32(static_cast<float>(values(static_cast<Eigen::Index>(r), c)));
    }
  }
  return w.data();
}

namespace {

EmbeddingHeader decode_header(ByteReader& r, const std::string& source) {
  try {
    auto magic = r.bytes(kEmbeddingMagic.size());
    if (magic != kEmbeddingMagic) {
      throw EmbeddingFormatError(
          fmt::format("{}: corrupt header, expected magic \"{}\"", source, kEmbeddingMagic));
    }
    EmbeddingHeader h;
    h.count = r.u32();
    h.dim = r.u32();
    return h;
  } catch (const detail::TruncatedInput&) {
    throw EmbeddingFormatError(
        fmt::format("{}: corrupt header, expected magic \"{}\" and counts", source, kEmbeddingMagic));
  }
}

}  // namespace

EmbeddingFile decode_embeddings(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes);
  auto header = decode_header(r, source);
  if (header.dim == 0) throw EmbeddingFormatError(fmt::format("{}: zero dimension", source));
  EmbeddingFile out;
  out.values.resize(header.count, header.dim);
  out.ids.reserve(header.count);
  try {
    for (std::uint32_t row = 0; row < header.count; ++row) {
      out.ids.push_back(r.str());
      for (std::uint32_t c = 0; c < header.dim; ++c) out.values(row, c) = r.f32();
    }
  } catch (const detail::TruncatedInput&) {
    throw EmbeddingFormatError(
        fmt::format("{}: truncated after {} of {} records", source, out.ids.size(), header.count));
  }
  if (!r.done()) {
    throw EmbeddingFormatError(fmt::format("{}: {} trailing bytes", source, r.remaining()));
  }
  return out;
}

void write_embedding_file(const std::filesystem::path& path, const std::vector<std::string>& ids,
                          const Matrix& values) {
  write_file_atomic(path, encode_embeddings(ids, values));
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  return decode_embeddings(read_file_bytes(path), path.string());
}

EmbeddingHeader read_embedding_header(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  return decode_header(r, path.string());
}

EmbeddingTable embeddings_for(const EmbeddingFile& file, const IdMap& expected_ids,
                              std::optional<int> expected_dim, const std::string& source) {
  const auto dim = file.values.cols();
  if (expected_dim && *expected_dim != dim) {
    throw EmbeddingFormatError(
        fmt::format("{}: dimension mismatch, file has {} but {} expected", source, dim, *expected_dim));
  }
  std::unordered_map<std::string_view, Eigen::Index> rows;
  for (size_t r = 0; r < file.ids.size(); ++r) rows.emplace(file.ids[r], static_cast<Eigen::Index>(r));

  EmbeddingTable table;
  table.kind = NodeKind::item;
  table.trainable = false;
  table.values.resize(expected_ids.size(), dim);
  std::vector<std::string> missing;
  for (Index i = 0; i < expected_ids.size(); ++i) {
    auto it = rows.find(expected_ids.raw(i));
    if (it == rows.end()) {
      missing.push_back(expected_ids.raw(i));
      continue;
    }
    table.values.row(i) = file.values.row(it->second);
  }
  if (!missing.empty()) {
    std::string listed;
    for (size_t k = 0; k < missing.size() && k < 10; ++k) {
      if (k) listed += ", ";
      listed += missing[k];
    }
    throw EmbeddingFormatError(
        fmt::format("{}: {} required ids missing: {}{}", source, missing.size(), listed,
                    missing.size() > 10 ? ", ..." : ""));
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const IdMap& expected_ids,
                               std::optional<int> expected_dim) {
  return embeddings_for(read_embedding_file(path), expected_ids, expected_dim, path.string());
}

}  // namespace collabctx
