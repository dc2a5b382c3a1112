#include "collabctx/checkpoint.hpp"

#include <sstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "collabctx/fileio.hpp"

namespace collabctx {

using detail::ByteReader;
using detail::ByteWriter;

const CheckpointSection& CheckpointFile::section(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return s;
  throw CheckpointError("checkpoint section missing: " + name);
}

bool CheckpointFile::has_section(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return true;
  return false;
}

const std::string& CheckpointFile::meta_value(const std::string& key) const {
  for (auto it = meta.rbegin(); it != meta.rend(); ++it)
    if (it->first == key) return it->second;
  throw CheckpointError("checkpoint meta key missing: " + key);
}

std::vector<std::string> CheckpointFile::meta_values(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : meta)
    if (k == key) out.push_back(v);
  return out;
}

std::string encode_checkpoint(const CheckpointFile& file) {
  ByteWriter w;
  w.bytes(kModelMagic);
  w.str(file.config_text);
  std::string meta;
  for (const auto& [k, v] : file.meta) meta += fmt::format("{}={}\n", k, v);
  w.str(meta);
  w.u32(static_cast<std::uint32_t>(file.sections.size()));
  for (const auto& s : file.sections) {
    if (static_cast<Eigen::Index>(s.row_ids.size()) != s.values.rows()) {
      throw CheckpointError("section " + s.name + ": id count does not match rows");
    }
    w.str(s.name);
    w.u32(static_cast<std::uint32_t>(s.values.rows()));
    w.u32(static_cast<std::uint32_t>(s.values.cols()));
    for (Eigen::Index r = 0; r < s.values.rows(); ++r) {
      w.str(s.row_ids[static_cast<size_t>(r)]);
      for (Eigen::Index c = 0; c < s.values.cols(); ++c) w.f64(s.values(r, c));
    }
  }
  return w.data();
}

CheckpointFile decode_checkpoint(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes);
  CheckpointFile file;
  try {
    if (r.bytes(kModelMagic.size()) != kModelMagic) {
      throw CheckpointError(fmt::format("{}: not a model checkpoint, expected magic \"{}\"", source, kModelMagic));
    }
    file.config_text = r.str();
    std::istringstream meta(r.str());
    std::string line;
    while (std::getline(meta, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError(source + ": malformed meta line");
      file.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    const auto count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
      CheckpointSection s;
      s.name = r.str();
      const auto rows = r.u32(), cols = r.u32();
      s.values.resize(rows, cols);
      s.row_ids.reserve(rows);
      for (std::uint32_t row = 0; row < rows; ++row) {
        s.row_ids.push_back(r.str());
        for (std::uint32_t c = 0; c < cols; ++c) s.values(row, c) = r.f64();
      }
      file.sections.push_back(std::move(s));
    }
  } catch (const detail::TruncatedInput&) {
    throw CheckpointError(source + ": truncated checkpoint");
  }
  if (!r.done()) throw CheckpointError(source + ": trailing bytes after checkpoint");
  return file;
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> index_ids(Eigen::Index n) {
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  return ids;
}

void put_matrix(CheckpointFile& f, std::string name, const Matrix& m, std::vector<std::string> ids = {}) {
  if (ids.empty()) ids = index_ids(m.rows());
  f.sections.push_back({std::move(name), std::move(ids), m});
}

void put_adapter(CheckpointFile& f, const std::string& prefix, const MlpAdapter& a) {
  f.meta.emplace_back(prefix + ".count", std::to_string(a.layers().size()));
  f.meta.emplace_back(prefix + ".dropout", num(a.dropout()));
  for (size_t l = 0; l < a.layers().size(); ++l) {
    put_matrix(f, fmt::format("{}.{}.weight", prefix, l), a.layers()[l].weight);
    put_matrix(f, fmt::format("{}.{}.bias", prefix, l), a.layers()[l].bias);
  }
}

MlpAdapter get_adapter(const CheckpointFile& f, const std::string& prefix) {
  const auto count = std::stoul(f.meta_value(prefix + ".count"));
  if (count == 0) return MlpAdapter();
  std::vector<DenseLayer> layers;
  for (size_t l = 0; l < count; ++l) {
    layers.push_back({f.section(fmt::format("{}.{}.weight", prefix, l)).values,
                      f.section(fmt::format("{}.{}.bias", prefix, l)).values});
  }
  return MlpAdapter(std::move(layers), std::stod(f.meta_value(prefix + ".dropout")));
}

std::string encode_record(const EpochRecord& r) {
  return fmt::format("{} {} {} {} {} {}", r.phase, r.round, r.epoch, num(r.train_loss), num(r.valid_recall10),
                     num(r.valid_ndcg10));
}

EpochRecord decode_record(const std::string& text) {
  std::istringstream in(text);
  EpochRecord r;
  std::string loss, recall, ndcg;
  in >> r.phase >> r.round >> r.epoch >> loss >> recall >> ndcg;
  if (!in) throw CheckpointError("malformed history entry: " + text);
  r.train_loss = std::stod(loss);
  r.valid_recall10 = std::stod(recall);
  r.valid_ndcg10 = std::stod(ndcg);
  return r;
}

std::string encode_summary(const PhaseSummary& p) {
  return fmt::format("{} {} {} {} {} {} {}", p.phase, p.round, p.best_epoch, p.epochs_run, num(p.valid_recall10),
                     num(p.valid_ndcg10), to_string(p.eval_mode));
}

PhaseSummary decode_summary(const std::string& text) {
  std::istringstream in(text);
  PhaseSummary p;
  std::string recall, ndcg, mode;
  in >> p.phase >> p.round >> p.best_epoch >> p.epochs_run >> recall >> ndcg >> mode;
  if (!in) throw CheckpointError("malformed phase entry: " + text);
  p.valid_recall10 = std::stod(recall);
  p.valid_ndcg10 = std::stod(ndcg);
  p.eval_mode = parse_inference_mode(mode);
  return p;
}

void put_progress(CheckpointFile& f, const std::vector<EpochRecord>& history,
                  const std::vector<PhaseSummary>& phases) {
  for (const auto& p : phases) f.meta.emplace_back("phase", encode_summary(p));
  for (const auto& r : history) f.meta.emplace_back("history", encode_record(r));
}

}  // namespace

std::string encode_model(const TrainedModel& m) {
  CheckpointFile f;
  f.config_text = to_kv_text(m.config);
  f.meta.emplace_back("kind", "model");
  f.meta.emplace_back("selected_phase", std::to_string(m.selected_phase));
  put_progress(f, m.history, m.phases);
  put_matrix(f, "users.layer0", m.user_layer0, m.users.raw_ids());
  put_matrix(f, "items.contextual", m.item_contextual, m.items.raw_ids());
  put_adapter(f, "adapter", m.adapter);
  put_matrix(f, "users.final.without_mlp", m.contextual.users, m.users.raw_ids());
  put_matrix(f, "items.final.without_mlp", m.contextual.items, m.items.raw_ids());
  put_matrix(f, "users.final.with_mlp", m.mapped.users, m.users.raw_ids());
  put_matrix(f, "items.final.with_mlp", m.mapped.items, m.items.raw_ids());
  return encode_checkpoint(f);
}

TrainedModel decode_model(std::string_view bytes, const std::string& source) {
  auto f = decode_checkpoint(bytes, source);
  if (f.meta_value("kind") != "model") throw CheckpointError(source + ": not a trained-model checkpoint");
  TrainedModel m;
  m.config = train_config_from_kv(f.config_text);
  m.selected_phase = std::stoi(f.meta_value("selected_phase"));
  for (const auto& v : f.meta_values("phase")) m.phases.push_back(decode_summary(v));
  for (const auto& v : f.meta_values("history")) m.history.push_back(decode_record(v));
  const auto& users = f.section("users.layer0");
  const auto& items = f.section("items.contextual");
  for (const auto& id : users.row_ids) m.users.intern(id);
  for (const auto& id : items.row_ids) m.items.intern(id);
  m.user_layer0 = users.values;
  m.item_contextual = items.values;
  m.adapter = get_adapter(f, "adapter");
  m.contextual = {f.section("users.final.without_mlp").values, f.section("items.final.without_mlp").values};
  m.mapped = {f.section("users.final.with_mlp").values, f.section("items.final.with_mlp").values};
  return m;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
  write_file_atomic(path, encode_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) {
  return decode_model(read_file_bytes(path), path.string());
}

void save_train_state(const std::filesystem::path& path, const TrainConfig& config, const TrainState& s) {
  CheckpointFile f;
  f.config_text = to_kv_text(config);
  auto put = [&f](std::string key, std::string value) { f.meta.emplace_back(std::move(key), std::move(value)); };
  put("kind", "train_state");
  put("round", std::to_string(s.round));
  put("cursor.phase", to_string(s.phase));
  put("cursor.epoch", std::to_string(s.epoch));
  put("cursor.started", s.phase_started ? "1" : "0");
  put("cursor.finished", s.finished ? "1" : "0");
  put("adam_t", std::to_string(s.adam_t));
  put("best_epoch", std::to_string(s.best_epoch));
  put("best_ndcg", num(s.best_ndcg));
  put("best_recall", num(s.best_recall));
  put("stale", std::to_string(s.stale));
  put("global_best_phase", std::to_string(s.global_best_phase));
  put("global_best_ndcg", num(s.global_best_ndcg));
  put("moments.count", std::to_string(s.moments.size()));
  put_progress(f, s.history, s.phases);
  put_matrix(f, "users.layer0", s.user_layer0);
  put_adapter(f, "adapter", s.adapter);
  put_matrix(f, "best.users.layer0", s.best_user_layer0);
  put_adapter(f, "best.adapter", s.best_adapter);
  put_matrix(f, "global.users.layer0", s.global_user_layer0);
  put_adapter(f, "global.adapter", s.global_adapter);
  for (size_t k = 0; k < s.moments.size(); ++k) {
    put_matrix(f, fmt::format("moment.{}.m", k), s.moments[k].m);
    put_matrix(f, fmt::format("moment.{}.v", k), s.moments[k].v);
  }
  write_file_atomic(path, encode_checkpoint(f));
}

TrainState load_train_state(const std::filesystem::path& path, TrainConfig* config) {
  auto f = decode_checkpoint(read_file_bytes(path), path.string());
  if (f.meta_value("kind") != "train_state") throw CheckpointError(path.string() + ": not a training state");
  if (config) *config = train_config_from_kv(f.config_text);
  TrainState s;
  s.round = std::stoi(f.meta_value("round"));
  s.phase = f.meta_value("cursor.phase") == "item_tutoring" ? Phase::item_tutoring : Phase::user_tutoring;
  s.epoch = std::stoi(f.meta_value("cursor.epoch"));
  s.phase_started = f.meta_value("cursor.started") == "1";
  s.finished = f.meta_value("cursor.finished") == "1";
  s.adam_t = std::stol(f.meta_value("adam_t"));
  s.best_epoch = std::stoi(f.meta_value("best_epoch"));
  s.best_ndcg = std::stod(f.meta_value("best_ndcg"));
  s.best_recall = std::stod(f.meta_value("best_recall"));
  s.stale = std::stoi(f.meta_value("stale"));
  s.global_best_phase = std::stoi(f.meta_value("global_best_phase"));
  s.global_best_ndcg = std::stod(f.meta_value("global_best_ndcg"));
  for (const auto& v : f.meta_values("phase")) s.phases.push_back(decode_summary(v));
  for (const auto& v : f.meta_values("history")) s.history.push_back(decode_record(v));
  s.user_layer0 = f.section("users.layer0").values;
  s.adapter = get_adapter(f, "adapter");
  s.best_user_layer0 = f.section("best.users.layer0").values;
  s.best_adapter = get_adapter(f, "best.adapter");
  s.global_user_layer0 = f.section("global.users.layer0").values;
  s.global_adapter = get_adapter(f, "global.adapter");
  const auto moments = std::stoul(f.meta_value("moments.count"));
  for (size_t k = 0; k < moments; ++k) {
    s.moments.push_back({f.section(fmt::format("moment.{}.m", k)).values,
                         f.section(fmt::format("moment.{}.v", k)).values});
  }
  return s;
}

}  // namespace collabctx
