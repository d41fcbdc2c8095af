#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pangaea/pangaea.h"

using json = nlohmann::json;

namespace {

struct DataFlags {
  std::string modality, input, labels, csv, label_column, series, points;
  std::vector<std::string> categorical;
  std::optional<std::size_t> synthetic, limit;

  void add(CLI::App* app, const std::string& prefix = "") {
    const std::string p = prefix.empty() ? "--" : "--" + prefix + "-";
    if (prefix.empty()) app->add_option("--modality", modality, "Sample modality");
    app->add_option(p + "input", input, "Samples tensor file (.pgt)");
    app->add_option(p + "labels", labels, "Labels tensor file (.pgt)");
    app->add_option(p + "csv", csv, "Table CSV file");
    app->add_option(p + "label-column", label_column, "Label column of the CSV");
    app->add_option(p + "categorical", categorical, "Categorical CSV columns")->delimiter(',');
    app->add_option(p + "series", series, "One long series (.pgt), framed into windows");
    app->add_option(p + "points", points, "Raw point clouds [N,S,3] (.pgt)");
    app->add_option(p + "synthetic", synthetic, "Generate this many synthetic samples");
    app->add_option(p + "limit", limit, "Use only the first N samples");
  }

  bool given() const {
    return !input.empty() || !csv.empty() || !series.empty() || !points.empty() || synthetic;
  }

  json spec(const std::string& mod, std::uint64_t seed) const {
    json s = {{"modality", mod}};
    if (!input.empty()) s["samples"] = input;
    if (!labels.empty()) s["labels"] = labels;
    if (!csv.empty()) s["csv"] = csv;
    if (!label_column.empty()) s["label_column"] = label_column;
    if (!categorical.empty()) s["categorical"] = categorical;
    if (!series.empty()) s["series"] = series;
    if (!points.empty()) s["points"] = points;
    if (synthetic) s["synthetic"] = {{"count", *synthetic}, {"seed", seed}};
    if (limit) s["limit"] = *limit;
    return s;
  }
};

struct Common {
  std::string manifest, out, config, checkpoint;
  std::optional<std::uint64_t> seed;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

json base_request(const std::string& command, const Common& c) {
  json req = c.manifest.empty() ? json::object() : read_json_file(c.manifest);
  if (!req.is_object()) throw std::runtime_error("manifest must be a JSON object");
  req["command"] = command;
  if (!c.out.empty()) req["out"] = c.out;
  if (c.seed) req["seed"] = *c.seed;
  if (!c.config.empty()) req["model"] = read_json_file(c.config);
  if (!c.checkpoint.empty()) req["checkpoint"] = c.checkpoint;
  return req;
}

std::uint64_t seed_of(const json& req) { return req.value("seed", std::uint64_t{0}); }

void merge(json& target, const json& overrides) {
  for (const auto& [k, v] : overrides.items()) target[k] = v;
}

json parse_points(const std::string& text) {
  json pts = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::runtime_error("points are written x:y,x:y,...");
    try {
      pts.push_back({std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw std::runtime_error("point '" + item + "' is not numeric");
    }
  }
  return pts;
}

void add_common(CLI::App* app, Common& c, bool with_checkpoint = false) {
  app->add_option("--manifest", c.manifest, "JSON request file; flags override its fields");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--config", c.config, "Model configuration JSON file");
  if (with_checkpoint) app->add_option("--checkpoint", c.checkpoint, "Checkpoint file (.pgck)");
}

int fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified triplet encoding and transformer toolkit", "pangaea"};
  app.set_version_flag("--version", std::string(pg_version()));
  app.require_subcommand(1);

  Common common;
  DataFlags data, eval_data;
  std::optional<std::size_t> steps, epochs, batch_size, threads, index, vocab, count, head_out_dim;
  std::optional<double> lr, noise;
  std::vector<std::string> modalities;
  std::string mode, loss, head, points, points_file, combinations, attention, segments;
  bool freeze_body = false;

  auto* encode = app.add_subcommand("encode", "Encode one sample into triplets");
  add_common(encode, common);
  data.add(encode);
  encode->add_option("--index", index, "Sample index within the data");
  encode->add_option("--vocab", vocab, "Text vocabulary size");

  auto* pretrain = app.add_subcommand("pretrain", "Multi-dataset reconstruction pre-training");
  add_common(pretrain, common);
  pretrain->add_option("--modalities", modalities, "Pre-training modalities")->delimiter(',');
  pretrain->add_option("--steps", steps, "Training steps");
  pretrain->add_option("--mode", mode, "parallel or ct")->check(CLI::IsMember({"parallel", "ct"}));
  pretrain->add_option("--batch-size", batch_size, "Samples per dataset per step");
  pretrain->add_option("--lr", lr, "Peak learning rate");
  pretrain->add_option("--threads", threads, "Worker threads (0 = hardware)");

  auto* finetune = app.add_subcommand("finetune", "Attach a task head and fine-tune");
  add_common(finetune, common, true);
  data.add(finetune);
  eval_data.add(finetune, "eval");
  finetune->add_option("--epochs", epochs, "Training epochs");
  finetune->add_option("--batch-size", batch_size, "Minibatch size");
  finetune->add_option("--lr", lr, "Learning rate");
  finetune->add_option("--loss", loss, "ce, bce or mse")->check(CLI::IsMember({"ce", "bce", "mse"}));
  finetune->add_option("--head", head, "Task head name");
  finetune->add_option("--head-out-dim", head_out_dim, "Task head output width");
  finetune->add_flag("--freeze-body", freeze_body, "Train only the head");

  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  add_common(eval, common, true);
  data.add(eval);
  eval->add_option("--head", head, "Task head name");
  eval->add_option("--loss", loss, "ce, bce or mse")->check(CLI::IsMember({"ce", "bce", "mse"}));

  auto* fit = app.add_subcommand("fit-scaling", "Fit y = 1-(1-p)^x + c");
  add_common(fit, common);
  fit->add_option("--points", points, "Inline points x:y,x:y,...");
  fit->add_option("--points-file", points_file, "CSV with columns x,y");
  fit->add_option("--combinations", combinations, "JSON list of {subset, scores}");

  auto* affinity = app.add_subcommand("affinity", "Cross-modal attention affinity");
  add_common(affinity, common, true);
  affinity->add_option("--attention", attention, "Attention tensor [L,H,T,T] (.pgt)");
  affinity->add_option("--segments", segments, "JSON list of per-token modality labels");

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--modality", data.modality, "Sample modality");
  gen->add_option("--count", count, "Number of samples");
  gen->add_option("--noise", noise, "Noise level");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a checkpoint");
  add_common(inspect, common, true);
  inspect->add_option("path", common.checkpoint, "Checkpoint file (.pgck)");

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  json req;
  try {
    const std::string command = app.get_subcommands().front()->get_name();
    req = base_request(command, common);
    const auto seed = seed_of(req);
    const std::string modality = data.modality.empty() ? req.value("modality", "") : data.modality;

    if (command == "encode") {
      if (data.given()) merge(req, data.spec(modality, seed));
      else if (!modality.empty()) req["modality"] = modality;
      if (!req.contains("samples") && !req.contains("csv") && !req.contains("series") &&
          !req.contains("points") && !req.contains("synthetic"))
        req["synthetic"] = {{"count", 1}, {"seed", seed}};
      if (index) req["index"] = *index;
      if (vocab) req["vocab_size"] = *vocab;
    } else if (command == "pretrain") {
      if (!modalities.empty()) req["modalities"] = modalities;
      if (steps) req["steps"] = *steps;
      if (!mode.empty()) req["mode"] = mode;
      if (batch_size) req["batch_size"] = *batch_size;
      if (lr) req["optimizer"]["lr"] = *lr;
      if (threads) req["threads"] = *threads;
      else if (!req.contains("threads"))
        if (const char* env = std::getenv("PANGAEA_THREADS")) req["threads"] = std::stoul(env);
    } else if (command == "finetune") {
      if (data.given()) req["task"] = data.spec(modality, seed);
      if (eval_data.given()) req["eval"] = eval_data.spec(modality, seed + 1);
      if (epochs) req["epochs"] = *epochs;
      if (batch_size) req["batch_size"] = *batch_size;
      if (lr) req["lr"] = *lr;
      if (!loss.empty()) req["loss"] = loss;
      if (!head.empty()) req["head"] = head;
      if (head_out_dim) req["head_out_dim"] = *head_out_dim;
      if (freeze_body) req["freeze_body"] = true;
    } else if (command == "eval") {
      if (data.given()) req["data"] = data.spec(modality, seed);
      if (!head.empty()) req["head"] = head;
      if (!loss.empty()) req["loss"] = loss;
    } else if (command == "fit-scaling") {
      if (!points.empty()) req["points"] = parse_points(points);
      if (!points_file.empty()) req["points_file"] = points_file;
      if (!combinations.empty()) req["combinations_file"] = combinations;
    } else if (command == "affinity") {
      if (!attention.empty()) req["attention"] = attention;
      if (!segments.empty()) req["segments_file"] = segments;
    } else if (command == "gen-synth") {
      if (!modality.empty()) req["modality"] = modality;
      if (count) req["count"] = *count;
      if (noise) req["noise"] = *noise;
    }
  } catch (const std::exception& e) {
    return fail_line("argument", e.what());
  }

  char* result = nullptr;
  const pg_status status = pg_run_job(req.dump().c_str(), &result);
  if (status != PG_OK) return fail_line(pg_status_name(status), pg_last_error());
  std::cout << json::parse(result).dump(2) << "\n";
  pg_string_free(result);
  return 0;
}
