#include "collabctx/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "collabctx/graph.hpp"

namespace collabctx {

const char* to_string(InferenceMode mode) {
  return mode == InferenceMode::with_mlp ? "with_mlp" : "without_mlp";
}

InferenceMode parse_inference_mode(const std::string& text) {
  if (text == "with_mlp") return InferenceMode::with_mlp;
  if (text == "without_mlp") return InferenceMode::without_mlp;
  throw std::invalid_argument("unknown inference mode: " + text);
}

const char* to_string(UniformityMode mode) {
  return mode == UniformityMode::squared ? "squared" : "literal";
}

UniformityMode parse_uniformity_mode(const std::string& text) {
  if (text == "squared") return UniformityMode::squared;
  if (text == "literal") return UniformityMode::literal;
  throw std::invalid_argument("unknown uniformity mode: " + text);
}

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (!(learning_rate > 0)) errors.push_back("learning_rate must be positive");
  if (!(weight_decay >= 0)) errors.push_back("weight_decay must be non-negative");
  if (layers < 0) errors.push_back("layers must be >= 0");
  if (patience < 1) errors.push_back("patience must be >= 1");
  if (max_epochs < 1) errors.push_back("max_epochs must be >= 1");
  if (rounds < 1) errors.push_back("rounds must be >= 1");
  if (!(user_init_std > 0)) errors.push_back("user_init_std must be positive");
  if (embedding_dim < 1) errors.push_back("embedding_dim must be >= 1");
  if (loss.batch_size < 1) errors.push_back("loss.batch_size must be >= 1");
  if (adapter.layers < 1) errors.push_back("adapter.layers must be >= 1");
  if (adapter.hidden < 1) errors.push_back("adapter.hidden must be >= 1");
  if (!(adapter.dropout >= 0 && adapter.dropout < 1)) errors.push_back("adapter.dropout must be in [0, 1)");
  return errors;
}

std::vector<std::string> TrainConfig::grid_warnings() const {
  std::vector<std::string> out = adapter_grid_warnings(adapter);
  auto on_grid = [](double v, std::initializer_list<double> grid) {
    for (double g : grid)
      if (std::abs(v - g) <= 1e-12 * g) return true;
    return false;
  };
  if (!on_grid(learning_rate, {1e-4, 1e-3, 1e-2})) {
    out.push_back(fmt::format("learning_rate {} outside tuning grid {{1e-4, 1e-3, 1e-2}}", learning_rate));
  }
  if (!on_grid(weight_decay, {1e-4, 1e-5, 1e-6})) {
    out.push_back(fmt::format("weight_decay {} outside tuning grid {{1e-4, 1e-5, 1e-6}}", weight_decay));
  }
  if (layers < 1 || layers > 3) out.push_back(fmt::format("layers {} outside tuning grid {{1, 2, 3}}", layers));
  return out;
}

std::string to_kv_text(const TrainConfig& c) {
  std::string s;
  auto put = [&s](std::string_view key, const auto& value) { s += fmt::format("{}={}\n", key, value); };
  put("learning_rate", fmt::format("{:.17g}", c.learning_rate));
  put("weight_decay", fmt::format("{:.17g}", c.weight_decay));
  put("layers", c.layers);
  put("patience", c.patience);
  put("max_epochs", c.max_epochs);
  put("rounds", c.rounds);
  put("seed", c.seed);
  put("user_init_std", fmt::format("{:.17g}", c.user_init_std));
  put("embedding_dim", c.embedding_dim);
  put("loss.normalize", c.loss.normalize ? "true" : "false");
  put("loss.uniformity", to_string(c.loss.uniformity));
  put("loss.batch_size", c.loss.batch_size);
  put("adapter.layers", c.adapter.layers);
  put("adapter.hidden", c.adapter.hidden);
  put("adapter.dropout", fmt::format("{:.17g}", c.adapter.dropout));
  put("normalize_scores", c.normalize_scores ? "true" : "false");
  return s;
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(fmt::format("{}: expected true/false, got '{}'", key, v));
}

std::string trim(std::string s) {
  const char* ws = " \t\r";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

}  // namespace

TrainConfig apply_kv(TrainConfig c, const std::string& text, std::vector<std::string>* unknown) {
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(fmt::format("config line {}: expected key=value", line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    try {
      if (key == "learning_rate") c.learning_rate = std::stod(v);
      else if (key == "weight_decay") c.weight_decay = std::stod(v);
      else if (key == "layers") c.layers = std::stoi(v);
      else if (key == "patience") c.patience = std::stoi(v);
      else if (key == "max_epochs") c.max_epochs = std::stoi(v);
      else if (key == "rounds") c.rounds = std::stoi(v);
      else if (key == "seed") c.seed = std::stoull(v);
      else if (key == "user_init_std") c.user_init_std = std::stod(v);
      else if (key == "embedding_dim") c.embedding_dim = std::stoi(v);
      else if (key == "loss.normalize") c.loss.normalize = parse_bool(key, v);
      else if (key == "loss.uniformity") c.loss.uniformity = parse_uniformity_mode(v);
      else if (key == "loss.batch_size") c.loss.batch_size = std::stoi(v);
      else if (key == "adapter.layers") c.adapter.layers = std::stoi(v);
      else if (key == "adapter.hidden") c.adapter.hidden = std::stoi(v);
      else if (key == "adapter.dropout") c.adapter.dropout = std::stod(v);
      else if (key == "normalize_scores") c.normalize_scores = parse_bool(key, v);
      else if (unknown) unknown->push_back(key);
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(fmt::format("config line {} ({}): {}", line_no, key, e.what()));
    }
  }
  return c;
}

TrainConfig train_config_from_kv(const std::string& text) {
  std::vector<std::string> unknown;
  auto c = apply_kv(TrainConfig{}, text, &unknown);
  if (!unknown.empty()) throw std::invalid_argument("unknown config key: " + unknown.front());
  return c;
}

InferenceTables build_inference_tables(const BipartiteGraph& graph, const Matrix& users0,
                                       const Matrix& items0, int layers) {
  auto out = propagate(graph, users0, items0, layers);
  return {std::move(out.users), std::move(out.items)};
}

void refresh_inference_cache(TrainedModel& model, const BipartiteGraph& graph) {
  const int k = model.config.layers;
  model.contextual = build_inference_tables(graph, model.user_layer0, model.item_contextual, k);
  model.mapped =
      build_inference_tables(graph, model.user_layer0, model.adapter.forward(model.item_contextual), k);
}

}  // namespace collabctx
