#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "collabctx/model.hpp"
#include "collabctx/trainer.hpp"

namespace collabctx {

// CCMDL1 layout, little-endian:
//   "CCMDL1"
//   u32 len | config text (key=value lines, see to_kv_text(TrainConfig))
//   u32 len | meta text (key=value lines, keys may repeat)
//   u32 section_count
//   section_count x { u32 len | name | u32 rows | u32 cols |
//                     rows x { u32 id_len | id bytes | cols x f64 } }
// Sections reuse the CCEMB1 record layout with f64 payloads so parameters
// round-trip exactly.
inline constexpr std::string_view kModelMagic = "CCMDL1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointSection {
  std::string name;
  std::vector<std::string> row_ids;
  Matrix values;
};

struct CheckpointFile {
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CheckpointSection> sections;

  const CheckpointSection& section(const std::string& name) const;
  bool has_section(const std::string& name) const;
  // Last value for `key`; throws if absent.
  const std::string& meta_value(const std::string& key) const;
  std::vector<std::string> meta_values(const std::string& key) const;
};

std::string encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

std::string encode_model(const TrainedModel& model);
TrainedModel decode_model(std::string_view bytes, const std::string& source = "<memory>");
void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

// Resumable training state; written atomically.
void save_train_state(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path, TrainConfig* config = nullptr);

}  // namespace collabctx
