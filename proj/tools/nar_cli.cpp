// Command-line front end: synthesize benchmark spaces, train the ranker,
// run the sampling search, and evaluate checkpoints on record files.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nar/bench_data.hpp"
#include "nar/checkpoint.hpp"
#include "nar/search.hpp"
#include "nar/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nar;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "nar-out";
  std::string profile = "synth";
  ModelConfig model;
  TrainConfig train;
  SearchConfig search;
  int repeats = 1;
  SyntheticSpec synth;
  std::string records_path;
  Family family = Family::synth;
  SplitConfig split;
};

void apply_profile(RunConfig& c, const std::string& profile) {
  c.profile = profile;
  if (profile == "nb101") {
    c.family = Family::dag7;
    c.model = ModelConfig{};  // paper-scale transformer: 6 layers
    c.model.family = Family::dag7;
    c.train.batch_size = 256;
    c.train.epochs = 35;
    c.train.optimizer.warmup_steps = 50;
    c.train.optimizer.beta2 = 0.982;
    c.train.optimizer.weight_decay = 5e-4;
    c.split.train_fraction = 0.01;
    c.split.train_count = 0;
    c.split.validation_size = 1024;
    c.search.sample_size = 256;
    c.search.mode = SearchMode::statistics;
  } else if (profile == "nb201") {
    c.family = Family::fixed4;
    c.model = ModelConfig{};
    c.model.family = Family::fixed4;
    c.train.batch_size = 128;
    c.train.epochs = 55;
    c.train.optimizer.warmup_steps = 30;
    c.train.optimizer.beta2 = 0.99;
    c.train.optimizer.weight_decay = 1e-2;
    c.split.train_fraction = 0.0;
    c.split.train_count = 1000;
    c.split.validation_size = 256;
    c.search.sample_size = 128;
    c.search.mode = SearchMode::interval;
  } else if (profile == "synth") {
    c.family = Family::synth;
    c.model = ModelConfig{};
    c.model.family = Family::synth;
    c.model.layers = 2;
    c.model.dim = 32;
    c.model.heads = 4;
    c.model.ffn_dim = 64;
    c.model.dropout = 0.05;
    c.train.batch_size = 64;
    c.train.epochs = 36;
    c.train.optimizer.warmup_steps = 50;
    c.train.optimizer.beta2 = 0.982;
    c.train.optimizer.weight_decay = 5e-4;
    c.split.train_fraction = 0.02;
    c.split.train_count = 0;
    c.split.validation_size = 512;
    c.search.sample_size = 64;
    c.search.mode = SearchMode::statistics;
  } else {
    throw ConfigError("unknown profile '" + profile + "'");
  }
}

void require_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key()) == 0) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void maybe(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void apply_config_file(RunConfig& c, const json& j) {
  require_keys(j, {"seed", "out", "profile", "model", "train", "search", "synth", "data"}, "config");
  if (j.contains("profile")) apply_profile(c, j.at("profile").get<std::string>());
  maybe(j, "seed", c.seed);
  maybe(j, "out", c.out);
  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, {"layers", "dim", "heads", "ffn_dim", "tiers", "ranking_weight", "dropout"}, "model");
    maybe(m, "layers", c.model.layers);
    maybe(m, "dim", c.model.dim);
    maybe(m, "heads", c.model.heads);
    maybe(m, "ffn_dim", c.model.ffn_dim);
    maybe(m, "tiers", c.model.tiers);
    maybe(m, "ranking_weight", c.model.ranking_weight);
    maybe(m, "dropout", c.model.dropout);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    require_keys(t,
                 {"batch_size", "epochs", "warmup", "beta1", "beta2", "eps", "weight_decay", "grad_clip",
                  "histogram_bins"},
                 "train");
    maybe(t, "batch_size", c.train.batch_size);
    maybe(t, "epochs", c.train.epochs);
    maybe(t, "warmup", c.train.optimizer.warmup_steps);
    maybe(t, "beta1", c.train.optimizer.beta1);
    maybe(t, "beta2", c.train.optimizer.beta2);
    maybe(t, "eps", c.train.optimizer.eps);
    maybe(t, "weight_decay", c.train.optimizer.weight_decay);
    maybe(t, "grad_clip", c.train.grad_clip);
    maybe(t, "histogram_bins", c.train.histogram_bins);
  }
  if (j.contains("search")) {
    const json& s = j.at("search");
    require_keys(s,
                 {"iterations", "sample_size", "random_fraction", "constraint_reuse", "top_k", "kl_threshold",
                  "min_count_factor", "compare_from_tier", "mode", "retry_cap", "repeats"},
                 "search");
    maybe(s, "iterations", c.search.iterations);
    maybe(s, "sample_size", c.search.sample_size);
    maybe(s, "random_fraction", c.search.random_fraction);
    maybe(s, "constraint_reuse", c.search.constraint_reuse);
    maybe(s, "top_k", c.search.top_k);
    maybe(s, "kl_threshold", c.search.selection.kl_threshold);
    maybe(s, "min_count_factor", c.search.selection.min_count_factor);
    maybe(s, "compare_from_tier", c.search.selection.compare_from_tier);
    maybe(s, "retry_cap", c.search.retry_cap);
    maybe(s, "repeats", c.repeats);
    if (s.contains("mode")) c.search.mode = search_mode_from_name(s.at("mode").get<std::string>());
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    require_keys(s, {"nodes", "max_edges", "cells", "max_structures"}, "synth");
    maybe(s, "nodes", c.synth.nodes);
    maybe(s, "max_edges", c.synth.max_edges);
    maybe(s, "cells", c.synth.cells);
    maybe(s, "max_structures", c.synth.max_structures);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, {"records", "family", "train_fraction", "train_count", "validation_size"}, "data");
    maybe(d, "records", c.records_path);
    if (d.contains("family")) c.family = family_from_name(d.at("family").get<std::string>());
    maybe(d, "train_fraction", c.split.train_fraction);
    maybe(d, "train_count", c.split.train_count);
    maybe(d, "validation_size", c.split.validation_size);
  }
}

void finalize(RunConfig& c) {
  c.model.family = c.family;
  switch (c.family) {
    case Family::dag7:
      c.model.channels = 19;
      c.model.patch = 7;
      break;
    case Family::fixed4:
      c.model.channels = 31;
      c.model.patch = 4;
      break;
    case Family::synth:
      c.model.channels = 1 + 2 * c.synth.cells;
      c.model.patch = c.synth.nodes;
      break;
  }
  c.train.optimizer.model_dim = c.model.dim;
  c.train.seed = c.seed;
  c.search.seed = c.seed;
  c.synth.seed = c.seed;
  c.split.seed = c.seed;
  try {
    c.model.validate();
    c.search.validate();
    c.train.validate(c.model.tiers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.repeats < 1) throw ConfigError("repeats must be positive");
}

json resolved_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["profile"] = c.profile;
  j["model"] = {{"layers", c.model.layers},   {"dim", c.model.dim},
                {"heads", c.model.heads},     {"ffn_dim", c.model.ffn_dim},
                {"tiers", c.model.tiers},     {"ranking_weight", c.model.ranking_weight},
                {"dropout", c.model.dropout}, {"channels", c.model.channels},
                {"patch", c.model.patch}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"warmup", c.train.optimizer.warmup_steps},
                {"beta1", c.train.optimizer.beta1},
                {"beta2", c.train.optimizer.beta2},
                {"eps", c.train.optimizer.eps},
                {"weight_decay", c.train.optimizer.weight_decay},
                {"grad_clip", c.train.grad_clip},
                {"histogram_bins", c.train.histogram_bins}};
  j["search"] = {{"iterations", c.search.iterations},
                 {"sample_size", c.search.sample_size},
                 {"random_fraction", c.search.random_fraction},
                 {"constraint_reuse", c.search.constraint_reuse},
                 {"top_k", c.search.top_k},
                 {"kl_threshold", c.search.selection.kl_threshold},
                 {"min_count_factor", c.search.selection.min_count_factor},
                 {"compare_from_tier", c.search.selection.compare_from_tier},
                 {"mode", search_mode_name(c.search.mode)},
                 {"retry_cap", c.search.retry_cap},
                 {"repeats", c.repeats}};
  j["synth"] = {{"nodes", c.synth.nodes},
                {"max_edges", c.synth.max_edges},
                {"cells", c.synth.cells},
                {"max_structures", c.synth.max_structures}};
  j["data"] = {{"records", c.records_path},
               {"family", family_name(c.family)},
               {"train_fraction", c.split.train_fraction},
               {"train_count", c.split.train_count},
               {"validation_size", c.split.validation_size}};
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void echo_configs(const RunConfig& c, const std::string& config_path) {
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "config_resolved.json", resolved_json(c).dump(2) + "\n");
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    write_text(fs::path(c.out) / "config_input.json", bytes);
  }
}

std::vector<ArchitectureRecord> load_records_checked(const std::string& path, Family family) {
  if (path.empty()) throw ConfigError("no record file configured (use --records or data.records)");
  try {
    return load_records(path, family);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

int cmd_synth(const RunConfig& c, const std::string& config_path) {
  SyntheticSpace space;
  try {
    space = generate_synthetic(c.synth);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  echo_configs(c, config_path);
  const fs::path out = fs::path(c.out) / "synthetic.jsonl";
  write_records(out.string(), space.space.records);
  std::cout << "wrote " << space.space.records.size() << " records to " << out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, const std::string& config_path) {
  const std::vector<ArchitectureRecord> all = load_records_checked(c.records_path, c.family);
  if (all.empty()) throw DataError("record file " + c.records_path + " is empty");
  for (const ArchitectureRecord& rec : all) {
    if (!rec.accuracy()) throw DataError("record '" + rec.id + "' carries no accuracy; training needs ground truth");
  }
  const DataSplit split = split_records(all.size(), c.split);
  if (split.train.size() < static_cast<std::size_t>(c.model.tiers)) {
    throw DataError("train split of " + std::to_string(split.train.size()) + " records is too small");
  }
  std::vector<ArchitectureRecord> train_set, val_set;
  for (std::size_t idx : split.train) train_set.push_back(all[idx]);
  for (std::size_t idx : split.validation) val_set.push_back(all[idx]);

  echo_configs(c, config_path);
  const TrainResult result = train(train_set, c.model, c.train);

  std::string log_lines;
  for (const IterationLog& entry : result.log) {
    json j;
    j["iteration"] = entry.iteration;
    j["epoch"] = entry.epoch;
    j["l1"] = entry.l1;
    j["l2"] = entry.l2;
    j["total"] = entry.total;
    j["lr"] = entry.lr;
    j["tier_counts"] = entry.tier_counts;
    log_lines += j.dump();
    log_lines += '\n';
  }
  write_text(fs::path(c.out) / "train_log.jsonl", log_lines);
  save_checkpoint((fs::path(c.out) / "checkpoint.bin").string(), result.model, result.buckets);

  json metrics;
  metrics["train_records"] = train_set.size();
  metrics["validation_records"] = val_set.size();
  metrics["final_loss"] = result.log.back().total;
  if (!val_set.empty()) {
    const Metrics m = validate(result.model, result.buckets, val_set);
    metrics["kendall_tau"] = m.tau;
    metrics["tier_accuracy"] = m.tier_accuracy;
    metrics["adjacent_tier_accuracy"] = m.adjacent_accuracy;
  }
  write_text(fs::path(c.out) / "metrics.json", metrics.dump(2) + "\n");
  std::cout << "checkpoint written to " << (fs::path(c.out) / "checkpoint.bin").string() << "\n";
  if (metrics.contains("kendall_tau")) {
    std::cout << "validation tau " << metrics["kendall_tau"] << ", tier accuracy " << metrics["tier_accuracy"]
              << "\n";
  }
  return 0;
}

int cmd_search(const RunConfig& c, const std::string& config_path, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("search needs --checkpoint");
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (ckpt.model.config.family != c.family) {
    throw ConfigError("checkpoint family " + family_name(ckpt.model.config.family) +
                      " does not match configured family " + family_name(c.family));
  }
  std::vector<ArchitectureRecord> records = load_records_checked(c.records_path, c.family);
  RecordSpace space;
  try {
    space = make_space(std::move(records));
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }

  echo_configs(c, config_path);
  std::vector<double> best_accuracies;
  for (int repeat = 0; repeat < c.repeats; ++repeat) {
    SearchConfig sc = c.search;
    sc.seed = c.seed + static_cast<std::uint64_t>(repeat);
    const SearchReport report = search(ckpt.model, ckpt.buckets, space, sc);
    const std::string suffix = c.repeats > 1 ? "_" + std::to_string(repeat) : "";
    write_text(fs::path(c.out) / ("report" + suffix + ".jsonl"), report_to_jsonl(report));
    write_text(fs::path(c.out) / ("summary" + suffix + ".json"), report_summary_json(report));
    best_accuracies.push_back(report.best_accuracy);
    std::cout << "repeat " << repeat << ": best " << report.best_accuracy << " (" << report.best_id << "), "
              << report.reported_queries << " queries\n";
  }

  double mean = 0.0;
  for (double a : best_accuracies) mean += a;
  mean /= static_cast<double>(best_accuracies.size());
  double var = 0.0;
  for (double a : best_accuracies) var += (a - mean) * (a - mean);
  const double stdev = best_accuracies.size() > 1 ? std::sqrt(var / static_cast<double>(best_accuracies.size() - 1)) : 0.0;
  json agg;
  agg["repeats"] = c.repeats;
  agg["best_accuracy_mean"] = mean;
  agg["best_accuracy_std"] = stdev;
  agg["best_accuracies"] = best_accuracies;
  write_text(fs::path(c.out) / "search_summary.json", agg.dump(2) + "\n");
  std::cout << "best accuracy " << mean << " +/- " << stdev << " over " << c.repeats << " runs\n";
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& config_path, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("eval needs --checkpoint");
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const std::vector<ArchitectureRecord> records = load_records_checked(c.records_path, ckpt.model.config.family);
  if (records.empty()) throw DataError("record file " + c.records_path + " is empty");
  for (const ArchitectureRecord& rec : records) {
    if (!rec.accuracy()) throw DataError("record '" + rec.id + "' carries no accuracy; eval needs ground truth");
  }

  echo_configs(c, config_path);
  std::vector<double> scores, accuracies;
  std::vector<int> predicted;
  for (const ArchitectureRecord& rec : records) {
    const Prediction p = predict(ckpt.model, ckpt.buckets, rec);
    scores.push_back(p.score);
    predicted.push_back(p.tier);
    accuracies.push_back(*rec.accuracy());
  }
  const Metrics m = validate(ckpt.model, ckpt.buckets, records);

  json metrics;
  metrics["count"] = records.size();
  metrics["kendall_tau"] = m.tau;
  metrics["tier_accuracy"] = m.tier_accuracy;
  metrics["adjacent_tier_accuracy"] = m.adjacent_accuracy;
  write_text(fs::path(c.out) / "metrics.json", metrics.dump(2) + "\n");

  // rank within the evaluated set, best first, ties by id
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (accuracies[a] != accuracies[b]) return accuracies[a] > accuracies[b];
    return records[a].id < records[b].id;
  });
  std::vector<std::size_t> rank(records.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  std::vector<std::string> ids;
  for (const ArchitectureRecord& rec : records) ids.push_back(rec.id);
  const std::vector<int> tiers = build_labels(accuracies, ids, ckpt.model.config.tiers);

  std::string csv = "id,score,accuracy,true_rank,true_tier\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    csv += records[i].id + "," + json(scores[i]).dump() + "," + json(accuracies[i]).dump() + "," +
           std::to_string(rank[i]) + "," + std::to_string(tiers[i] + 1) + "\n";
  }
  write_text(fs::path(c.out) / "scatter.csv", csv);
  std::cout << "kendall tau " << m.tau << " over " << records.size() << " records\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural architecture ranker: tier-classifying predictor with statistics-guided sampling"};
  app.require_subcommand(1);

  std::string config_path, profile, out_dir, records, checkpoint, mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeats;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--profile", profile, "configuration profile")->check(CLI::IsMember({"nb101", "nb201", "synth"}));
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* synth = app.add_subcommand("synth", "enumerate a synthetic space and write its record file");
  add_common(synth);
  CLI::App* train_cmd = app.add_subcommand("train", "train the ranker on a record file");
  add_common(train_cmd);
  train_cmd->add_option("--records", records, "record file (line-delimited JSON)");
  CLI::App* search_cmd = app.add_subcommand("search", "run the sampling search against a trained checkpoint");
  add_common(search_cmd);
  search_cmd->add_option("--records", records, "record file defining the search space");
  search_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint");
  search_cmd->add_option("--mode", mode, "sampling mode")->check(CLI::IsMember({"random", "statistics", "interval"}));
  search_cmd->add_option("--repeats", repeats, "independent repeats (mean/std reported)");
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a record file with a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--records", records, "record file to score");
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    apply_profile(cfg, "synth");
    if (!profile.empty()) apply_profile(cfg, profile);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
      }
      if (!profile.empty() && j.contains("profile")) j.erase("profile");  // flag wins
      try {
        apply_config_file(cfg, j);
      } catch (const json::exception& e) {
        throw ConfigError("config error: " + std::string(e.what()));
      }
    }
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!records.empty()) cfg.records_path = records;
    if (!mode.empty()) cfg.search.mode = search_mode_from_name(mode);
    if (repeats) cfg.repeats = *repeats;
    finalize(cfg);

    if (app.got_subcommand("synth")) return cmd_synth(cfg, config_path);
    if (app.got_subcommand("train")) return cmd_train(cfg, config_path);
    if (app.got_subcommand("search")) return cmd_search(cfg, config_path, checkpoint);
    if (app.got_subcommand("eval")) return cmd_eval(cfg, config_path, checkpoint);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  }
}
