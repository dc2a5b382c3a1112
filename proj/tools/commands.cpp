#include "commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "collabctx/checkpoint.hpp"
#include "collabctx/dataset.hpp"
#include "collabctx/embedding_io.hpp"
#include "collabctx/eval.hpp"
#include "collabctx/fileio.hpp"
#include "collabctx/synth.hpp"
#include "collabctx/trainer.hpp"

namespace collabctx::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Bad flags, missing inputs, invalid configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(fmt::format("{} not found: {}", what, path.string()));
}

ordered_json kv_to_json(const std::string& kv) {
  ordered_json j = ordered_json::object();
  std::istringstream in(kv);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

// Run manifest: every artifact is listed with its checksum.
class Manifest {
 public:
  explicit Manifest(std::string command) {
    j_["command"] = std::move(command);
    j_["started_at"] = utc_now();
  }
  ordered_json& json() { return j_; }
  void input(const std::string& name, const fs::path& path) {
    j_["inputs"][name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }
  void artifact(const fs::path& path) {
    j_["artifacts"][path.filename().string()] = sha256_file(path);
  }
  void write(const fs::path& path) {
    j_["finished_at"] = utc_now();
    write_file_atomic(path, j_.dump(2) + "\n");
  }

 private:
  ordered_json j_ = ordered_json::object();
};

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
  if (out.size() != 3) throw UsageError("--ratios expects three comma-separated values");
  return out;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  fs::path interactions;
  std::optional<fs::path> embeddings;
  fs::path out;
  int k = 5;
  double cold_fraction = 0.05;
  std::optional<int> cold_count;
  std::string ratios = "0.8,0.1,0.1";
  std::uint64_t seed = 2024;
  std::optional<int> dim;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  require_file(a.interactions, "interactions file");
  if (a.embeddings) require_file(*a.embeddings, "embedding file");
  auto r = parse_ratios(a.ratios);
  const SplitRatios ratios{r[0], r[1], r[2]};

  Manifest manifest("preprocess");
  manifest.input("interactions", a.interactions);
  if (a.embeddings) manifest.input("embeddings", *a.embeddings);

  const auto raw = load_interactions(a.interactions);
  const auto core = k_core_filter(raw, a.k);
  const auto cold = a.cold_count ? cold_item_split_count(core, *a.cold_count, a.seed)
                                 : cold_item_split(core, a.cold_fraction, a.seed);
  const auto bundle = holdout_split(cold, ratios, a.seed);
  if (a.embeddings) load_embeddings(*a.embeddings, bundle.train.items, a.dim);

  const auto files = write_split_bundle(a.out, bundle);
  for (const auto& f : files) manifest.artifact(a.out / f);

  auto& j = manifest.json();
  j["seed"] = a.seed;
  j["k_core"] = a.k;
  if (a.cold_count) j["cold_count"] = *a.cold_count;
  else j["cold_fraction"] = a.cold_fraction;
  j["ratios"] = {ratios.train, ratios.valid, ratios.test};
  j["counts"] = {{"raw_interactions", raw.pairs.size()},
                 {"users", core.user_count},
                 {"items", core.item_count},
                 {"interactions", core.pairs.size()},
                 {"cold_items", bundle.cold_items.size()},
                 {"train", bundle.train.pairs.size()},
                 {"valid", bundle.valid.pairs.size()},
                 {"test", bundle.test.pairs.size()},
                 {"cold_test", bundle.cold_test.pairs.size()}};
  manifest.write(a.out / "manifest.json");

  out << fmt::format("users={} items={} interactions={} cold_items={} train={} valid={} test={} cold_test={}\n",
                     core.user_count, core.item_count, core.pairs.size(), bundle.cold_items.size(),
                     bundle.train.pairs.size(), bundle.valid.pairs.size(), bundle.test.pairs.size(),
                     bundle.cold_test.pairs.size());
  return kExitOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  fs::path data;
  fs::path embeddings;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<double> lr, weight_decay, dropout, init_std;
  std::optional<int> layers, batch_size, patience, max_epochs, rounds, dim, adapter_layers, adapter_hidden;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> uniformity;
  bool no_normalize = false;
  bool resume = false;
  std::optional<int> stop_after;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig c;
  if (a.config) {
    require_file(*a.config, "config file");
    std::vector<std::string> unknown;
    c = apply_kv(c, read_file_bytes(*a.config), &unknown);
    if (!unknown.empty()) throw UsageError("unknown config key: " + unknown.front());
  }
  if (a.lr) c.learning_rate = *a.lr;
  if (a.weight_decay) c.weight_decay = *a.weight_decay;
  if (a.layers) c.layers = *a.layers;
  if (a.batch_size) c.loss.batch_size = *a.batch_size;
  if (a.patience) c.patience = *a.patience;
  if (a.max_epochs) c.max_epochs = *a.max_epochs;
  if (a.rounds) c.rounds = *a.rounds;
  if (a.seed) c.seed = *a.seed;
  if (a.dim) c.embedding_dim = *a.dim;
  if (a.init_std) c.user_init_std = *a.init_std;
  if (a.adapter_layers) c.adapter.layers = *a.adapter_layers;
  if (a.adapter_hidden) c.adapter.hidden = *a.adapter_hidden;
  if (a.dropout) c.adapter.dropout = *a.dropout;
  if (a.uniformity) c.loss.uniformity = parse_uniformity_mode(*a.uniformity);
  if (a.no_normalize) {
    c.loss.normalize = false;
    c.normalize_scores = false;
  }
  auto errors = c.validate();
  if (!errors.empty()) {
    std::string all = "invalid training config:";
    for (const auto& e : errors) all += "\n  " + e;
    throw UsageError(all);
  }
  return c;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.embeddings, "embedding file");
  if (!fs::is_directory(a.data)) throw UsageError("data directory not found: " + a.data.string());
  const fs::path state_path = a.out / "train_state.ccmdl";
  const fs::path log_path = a.out / "metrics.log";
  const fs::path model_path = a.out / "model.ccmdl";

  TrainConfig config = resolve_config(a);
  std::optional<TrainState> resumed;
  if (a.resume) {
    if (!fs::exists(state_path)) throw UsageError("--resume: no training state at " + state_path.string());
    TrainConfig stored;
    resumed = load_train_state(state_path, &stored);
    if (to_kv_text(stored) != to_kv_text(config)) {
      err << "note: resuming with the configuration stored in " << state_path.string() << "\n";
    }
    config = stored;
  }
  for (const auto& w : config.grid_warnings()) err << "warning: " << w << "\n";

  const auto bundle = read_split_bundle(a.data);
  const auto items = load_embeddings(a.embeddings, bundle.train.items, config.embedding_dim);

  Manifest manifest("train");
  manifest.input("embeddings", a.embeddings);
  for (const char* f : {"train.tsv", "valid.tsv", "users.tsv", "items.tsv"}) manifest.input(f, a.data / f);
  if (a.config) manifest.json()["config_path"] = a.config->string();
  manifest.json()["resolved_config"] = kv_to_json(to_kv_text(config));
  manifest.json()["seed"] = config.seed;

  fs::create_directories(a.out);
  std::ofstream log(log_path, a.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open " + log_path.string());

  TrainHooks hooks;
  hooks.on_record = [&log](const EpochRecord& r) {
    log << format_epoch_record(r);
    log.flush();
  };
  hooks.on_epoch = [&](const TrainState& s) { save_train_state(state_path, config, s); };
  hooks.stop_after_epochs = a.stop_after;

  const TrainData data{bundle, items.values};
  auto state = resumed ? std::move(*resumed)
                       : initial_state(config, bundle.user_count(), static_cast<int>(items.values.cols()));
  auto model = train(config, data, std::move(state), hooks);
  log.close();
  if (!model) {
    err << "training interrupted; rerun with --resume to continue\n";
    return kExitRuntime;
  }
  save_model(model_path, *model);
  manifest.artifact(model_path);
  manifest.artifact(log_path);
  manifest.write(a.out / "manifest.json");

  const auto& best = model->phases.at(static_cast<size_t>(model->selected_phase));
  out << fmt::format("phases={} selected={}:{} valid_ndcg@10={:.6f} valid_recall@10={:.6f}\n",
                     model->phases.size(), best.phase, best.round, best.valid_ndcg10, best.valid_recall10);
  return kExitOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  fs::path data;
  fs::path model;
  std::optional<fs::path> out;
  bool cold = false;
  std::string setting = "warm";
  std::string mode = "both";
  std::string split = "test";
  std::vector<int> topk = kDefaultTopK;
  std::optional<int> layers, dim;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_file(a.model, "model checkpoint");
  if (!fs::is_directory(a.data)) throw UsageError("data directory not found: " + a.data.string());
  const std::string setting = a.cold ? "cold" : a.setting;
  if (setting != "warm" && setting != "cold" && setting != "both") throw UsageError("--setting: warm|cold|both");
  if (a.split != "test" && a.split != "valid") throw UsageError("--split: test|valid");

  const auto model = load_model(a.model);
  const auto bundle = read_split_bundle(a.data);
  if (a.layers && *a.layers != model.config.layers) {
    throw UsageError(fmt::format("checkpoint was trained with layers={}, requested {}", model.config.layers, *a.layers));
  }
  if (a.dim && *a.dim != model.item_contextual.cols()) {
    throw UsageError(
        fmt::format("checkpoint has dim {}, requested {}", model.item_contextual.cols(), *a.dim));
  }
  if (!(model.users == bundle.train.users) || !(model.items == bundle.train.items)) {
    throw UsageError("checkpoint id maps do not match the data directory");
  }

  std::vector<InferenceMode> modes;
  if (a.mode == "both") modes = {InferenceMode::with_mlp, InferenceMode::without_mlp};
  else modes = {parse_inference_mode(a.mode)};
  std::vector<EvalSplit> splits;
  if (setting != "cold") splits.push_back(a.split == "test" ? EvalSplit::test : EvalSplit::valid);
  if (setting != "warm") splits.push_back(EvalSplit::cold_test);

  std::string text, lines;
  for (auto split : splits) {
    for (auto mode : modes) {
      auto report = full_ranking(model, bundle, split, mode, a.topk);
      text += to_kv_text(report) + "\n";
      lines += to_json_line(report) + "\n";
    }
  }
  out << text;
  if (a.out) {
    write_file_atomic(*a.out / "eval_report.txt", text);
    write_file_atomic(*a.out / "eval_report.jsonl", lines);
  }
  return kExitOk;
}

// ------------------------------------------------------------------- inspect

struct InspectArgs {
  std::optional<fs::path> header;
  std::optional<fs::path> model;
  std::optional<fs::path> projections;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  if (!a.header && !a.model) throw UsageError("inspect: give --header FILE or --model FILE");
  if (a.header) {
    require_file(*a.header, "embedding file");
    const auto h = read_embedding_header(*a.header);
    out << fmt::format("magic={}\ncount={}\ndim={}\n", kEmbeddingMagic, h.count, h.dim);
  }
  if (a.model) {
    require_file(*a.model, "model checkpoint");
    const auto model = load_model(*a.model);
    out << fmt::format("users={}\nitems={}\ndim={}\nadapter_layers={}\nselected_phase={}\n", model.users.size(),
                       model.items.size(), model.item_contextual.cols(), model.adapter.layers().size(),
                       model.selected_phase);
    if (a.projections) {
      export_projections(model, *a.projections);
      out << fmt::format("projections={} rows={}\n", a.projections->string(),
                         2 * model.items.size() + model.users.size());
    }
  }
  return kExitOk;
}

// --------------------------------------------------------------------- synth

int cmd_synth(const SynthConfig& c, const fs::path& out_dir, std::ostream& out) {
  const auto data = generate_planted_clusters(c);
  write_synth(data, out_dir);
  out << fmt::format("users={} items={} interactions={} dim={}\n", c.users, c.items,
                     data.interactions.pairs.size(), c.dim);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-phase contextual collaborative filtering: preprocess, train, evaluate, inspect"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "k-core filter, cold-item split and train/valid/test split");
  p->add_option("--interactions", pre.interactions, "user<TAB>item file")->required();
  p->add_option("--embeddings", pre.embeddings, "CCEMB1 item embeddings to validate against");
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--k", pre.k, "k-core threshold")->capture_default_str();
  p->add_option("--cold-fraction", pre.cold_fraction, "fraction of items held out cold")->capture_default_str();
  p->add_option("--cold-count", pre.cold_count, "exact number of cold items (overrides fraction)");
  p->add_option("--ratios", pre.ratios, "train,valid,test ratios")->capture_default_str();
  p->add_option("--seed", pre.seed)->capture_default_str();
  p->add_option("--dim", pre.dim, "required embedding dimension when --embeddings is given");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "item tutoring then user tutoring");
  t->add_option("--data", tr.data, "preprocess output directory")->required();
  t->add_option("--embeddings", tr.embeddings, "CCEMB1 item embeddings")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--config", tr.config, "key=value config file; flags override it");
  t->add_option("--lr", tr.lr);
  t->add_option("--weight-decay", tr.weight_decay);
  t->add_option("--layers", tr.layers, "graph propagation layers");
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--patience", tr.patience);
  t->add_option("--max-epochs", tr.max_epochs);
  t->add_option("--rounds", tr.rounds, "item/user tutoring alternations");
  t->add_option("--seed", tr.seed);
  t->add_option("--dim", tr.dim, "expected embedding dimension");
  t->add_option("--init-std", tr.init_std, "std of the Gaussian user initialization");
  t->add_option("--adapter-layers", tr.adapter_layers);
  t->add_option("--adapter-hidden", tr.adapter_hidden);
  t->add_option("--dropout", tr.dropout);
  t->add_option("--uniformity", tr.uniformity, "squared|literal");
  t->add_flag("--no-normalize", tr.no_normalize, "disable L2 normalization in losses and scoring");
  t->add_flag("--resume", tr.resume, "continue from <out>/train_state.ccmdl");
  t->add_option("--stop-after-epochs", tr.stop_after, "interrupt after N epochs (testing)")->group("");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "full-ranking Recall@K / NDCG@K");
  e->add_option("--data", ev.data, "preprocess output directory")->required();
  e->add_option("--model", ev.model, "CCMDL1 checkpoint")->required();
  e->add_option("--out", ev.out, "directory for eval_report.txt / eval_report.jsonl");
  e->add_flag("--cold", ev.cold, "cold-start report only");
  e->add_option("--setting", ev.setting, "warm|cold|both")->capture_default_str();
  e->add_option("--mode", ev.mode, "with_mlp|without_mlp|both")->capture_default_str();
  e->add_option("--split", ev.split, "warm split: test|valid")->capture_default_str();
  e->add_option("--topk", ev.topk, "cutoffs")->delimiter(',');
  e->add_option("--layers", ev.layers, "reject checkpoints trained with a different layer count");
  e->add_option("--dim", ev.dim, "reject checkpoints with a different dimension");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "file headers and projection export");
  i->add_option("--header", in.header, "print a CCEMB1 header");
  i->add_option("--model", in.model, "CCMDL1 checkpoint");
  i->add_option("--projections", in.projections, "write item/user projection table (needs --model)");

  SynthConfig sc;
  fs::path synth_out;
  auto* s = app.add_subcommand("synth", "planted-cluster synthetic dataset");
  s->add_option("--out", synth_out)->required();
  s->add_option("--clusters", sc.clusters)->capture_default_str();
  s->add_option("--users", sc.users)->capture_default_str();
  s->add_option("--items", sc.items)->capture_default_str();
  s->add_option("--dim", sc.dim)->capture_default_str();
  s->add_option("--p-in", sc.p_in)->capture_default_str();
  s->add_option("--p-out", sc.p_out)->capture_default_str();
  s->add_option("--noise", sc.noise_std)->capture_default_str();
  s->add_option("--seed", sc.seed)->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*p) return cmd_preprocess(pre, out);
    if (*t) return cmd_train(tr, out, err);
    if (*e) return cmd_eval(ev, out);
    if (*i) return cmd_inspect(in, out);
    if (*s) return cmd_synth(sc, synth_out, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& ex) {
    err << "configuration error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace collabctx::cli
