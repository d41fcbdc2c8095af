#include "pangaea/jobs.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pangaea/checkpoint.hpp"
#include "pangaea/error.hpp"
#include "pangaea/finetune.hpp"
#include "pangaea/pretrain.hpp"
#include "pangaea/scaling.hpp"
#include "pangaea/synth.hpp"

namespace pangaea {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "field '" + key + "': " + e.what());
  }
}

template <typename T>
T required(const json& j, const std::string& key) {
  require(j.contains(key) && !j[key].is_null(), ErrorKind::Config, "missing field '" + key + "'");
  return field<T>(j, key, T{});
}

ModalityKind modality_of(const std::string& name) {
  auto m = parse_modality(name);
  require(m.has_value(), ErrorKind::Config,
          "unknown modality '" + name +
              "' (expected table, timeseries, image, audio, graph, text or pointcloud)");
  return *m;
}

std::size_t sample_rank(ModalityKind m) {
  switch (m) {
    case ModalityKind::Table:
    case ModalityKind::TimeSeries:
    case ModalityKind::Text: return 1;
    case ModalityKind::Graph: return 2;
    case ModalityKind::Image:
    case ModalityKind::Audio:
    case ModalityKind::PointCloud: return 3;
  }
  return 1;
}

// Pre-training modality label for affinity segments.
int segment_of(ModalityKind m) {
  switch (m) {
    case ModalityKind::Text: return 0;
    case ModalityKind::Table: return 1;
    case ModalityKind::TimeSeries: return 2;
    case ModalityKind::Graph: return 3;
    case ModalityKind::Image: return 4;
    default: break;
  }
  throw Error(ErrorKind::Config, std::string("modality '") + modality_name(m) +
                                     "' is not one of the five pre-training modalities");
}

fs::path out_dir(const json& req) {
  fs::path dir = required<std::string>(req, "out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

SynthSpec synth_spec(const json& j, ModalityKind modality) {
  SynthSpec s;
  s.modality = modality;
  s.count = field<std::size_t>(j, "count", s.count);
  s.noise = field<double>(j, "noise", s.noise);
  s.features = field<std::size_t>(j, "features", s.features);
  s.classes = field<std::size_t>(j, "classes", s.classes);
  s.frequencies = field<std::vector<double>>(j, "frequencies", s.frequencies);
  s.pattern_classes = field<std::size_t>(j, "pattern_classes", s.pattern_classes);
  s.nodes = field<std::size_t>(j, "nodes", s.nodes);
  s.communities = field<std::size_t>(j, "communities", s.communities);
  s.feature_dim = field<std::size_t>(j, "feature_dim", s.feature_dim);
  s.p_in = field<double>(j, "p_in", s.p_in);
  s.p_out = field<double>(j, "p_out", s.p_out);
  s.vocab = field<std::size_t>(j, "vocab", s.vocab);
  s.points = field<std::size_t>(j, "points", s.points);
  s.groups = field<std::size_t>(j, "groups", s.groups);
  s.group_size = field<std::size_t>(j, "group_size", s.group_size);
  return s;
}

std::vector<Sample> split_samples(const TensorData& t, ModalityKind modality,
                                  const std::string& path) {
  const std::size_t rank = sample_rank(modality);
  std::vector<Sample> out;
  if (t.shape.size() == rank) {
    out.push_back({modality, t.shape, t.values});
    return out;
  }
  require(t.shape.size() == rank + 1, ErrorKind::Dimension,
          "'" + path + "' has shape " + shape_string(t.shape) + "; expected rank " +
              std::to_string(rank) + " or " + std::to_string(rank + 1) + " for " +
              modality_name(modality));
  Shape inner(t.shape.begin() + 1, t.shape.end());
  const std::size_t n = t.shape[0], per = shape_size(inner);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({modality, inner,
                   std::vector<double>(t.values.begin() + i * per, t.values.begin() + (i + 1) * per)});
  return out;
}

void set_labels(LoadedDataset& d, const TensorData& t, const std::string& path) {
  require(!t.shape.empty() && t.shape[0] == d.samples.size(), ErrorKind::Dimension,
          "labels in '" + path + "' do not have one row per sample");
  d.labels = t.values;
  d.label_width = t.shape.size() == 1 ? 1 : shape_size(t.shape) / t.shape[0];
}

}  // namespace

LoadedDataset load_dataset(const json& spec) {
  require(spec.is_object(), ErrorKind::Config, "data spec must be an object");
  LoadedDataset d;
  d.modality = modality_of(required<std::string>(spec, "modality"));

  if (spec.contains("synthetic")) {
    const auto& s = spec["synthetic"];
    auto data = gen_synthetic(synth_spec(s, d.modality), field<std::uint64_t>(s, "seed", 0));
    d.samples = std::move(data.samples);
    d.labels = std::move(data.labels);
    d.label_width = 1;
  } else if (spec.contains("csv")) {
    require(d.modality == ModalityKind::Table, ErrorKind::Config, "csv input is for tables only");
    const auto path = required<std::string>(spec, "csv");
    const auto label_col = field<std::string>(spec, "label_column", "");
    const auto categorical = field<std::vector<std::string>>(spec, "categorical", {});
    auto header = parse_csv(read_file(path));
    require(!header.empty(), ErrorKind::Parse, "'" + path + "' is empty");
    std::vector<CsvColumn> schema;
    for (const auto& name : header.front())
      schema.push_back(std::count(categorical.begin(), categorical.end(), name) ? CsvColumn::Categorical
                                                                               : CsvColumn::Numeric);
    auto table = read_table_csv(path, schema);
    std::optional<std::size_t> label_index;
    if (!label_col.empty()) {
      auto it = std::find(table.header.begin(), table.header.end(), label_col);
      require(it != table.header.end(), ErrorKind::Config, "no column '" + label_col + "' in '" + path + "'");
      label_index = static_cast<std::size_t>(it - table.header.begin());
    }
    require(!table.rows.empty(), ErrorKind::Parse, "'" + path + "' has no data rows");
    std::vector<std::vector<double>> cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      auto col = table.column(c);
      if (label_index && c == *label_index) {
        for (const auto& v : col)
          require(v.has_value(), ErrorKind::Imputation, "label column has an empty cell");
      }
      cols.push_back(impute_missing(col, schema[c] == CsvColumn::Categorical ? ColumnKind::Discrete
                                                                             : ColumnKind::Continuous));
    }
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      Sample s{ModalityKind::Table, {}, {}};
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (label_index && c == *label_index) d.labels.push_back(cols[c][r]);
        else s.values.push_back(cols[c][r]);
      }
      s.shape = {s.values.size()};
      d.samples.push_back(std::move(s));
    }
    d.label_width = label_index ? 1 : 0;
  } else if (spec.contains("series")) {
    require(d.modality == ModalityKind::TimeSeries, ErrorKind::Config, "series input is for time series");
    const auto path = required<std::string>(spec, "series");
    auto t = read_tensor_file(path);
    const auto stride = field<std::size_t>(spec, "stride", kSeriesLength);
    for (auto& w : frame_timeseries(t.values, kSeriesLength, stride))
      d.samples.push_back({ModalityKind::TimeSeries, {kSeriesLength}, std::move(w)});
  } else if (spec.contains("points")) {
    require(d.modality == ModalityKind::PointCloud, ErrorKind::Config, "points input is for point clouds");
    const auto path = required<std::string>(spec, "points");
    auto t = read_tensor_file(path);
    require(t.shape.size() == 3 && t.shape[2] == 3, ErrorKind::Dimension,
            "'" + path + "' must have shape [N, S, 3]");
    const auto g = field<std::size_t>(spec, "groups", 16);
    const auto k = field<std::size_t>(spec, "group_size", 8);
    const auto seed = field<std::uint64_t>(spec, "seed", 0);
    const std::size_t per = t.shape[1] * 3;
    for (std::size_t i = 0; i < t.shape[0]; ++i)
      d.samples.push_back(group_pointcloud(std::span(t.values).subspan(i * per, per), g, k, seed + i));
  } else {
    const auto path = required<std::string>(spec, "samples");
    d.samples = split_samples(read_tensor_file(path), d.modality, path);
  }
  if (spec.contains("labels")) {
    const auto path = required<std::string>(spec, "labels");
    set_labels(d, read_tensor_file(path), path);
  }
  if (spec.contains("limit")) {
    const auto limit = field<std::size_t>(spec, "limit", d.samples.size());
    if (limit < d.samples.size()) {
      d.samples.resize(limit);
      if (d.label_width) d.labels.resize(limit * d.label_width);
    }
  }
  require(!d.samples.empty(), ErrorKind::Contract, "data spec produced no samples");
  return d;
}

namespace {

// ---------------------------------------------------------------- encode

json job_encode(const json& req) {
  auto data = load_dataset(req);
  const auto index = field<std::size_t>(req, "index", 0);
  require(index < data.samples.size(), ErrorKind::Contract, "sample index out of range");
  const auto vocab = field<std::size_t>(req, "vocab_size", ModelConfig::desk().vocab_size);
  const auto& sample = data.samples[index];
  auto set = encode(sample, field<std::uint64_t>(req, "seed", 0), vocab);
  std::size_t max_local = 0, arity_min = SIZE_MAX, arity_max = 0;
  std::set<std::pair<std::size_t, std::size_t>> part_lengths;
  for (const auto& t : set.triplets) {
    for (auto i : t.local_indices) max_local = std::max(max_local, i);
    arity_min = std::min(arity_min, t.local_indices.size());
    arity_max = std::max(arity_max, t.local_indices.size());
    part_lengths.insert({t.num1.size(), t.num2.size()});
  }
  json lengths = json::array();
  for (const auto& [a, b] : part_lengths) lengths.push_back({a, b});
  json result = {{"modality", modality_name(set.modality)},
                 {"sample_shape", sample.shape},
                 {"samples", data.samples.size()},
                 {"index", index},
                 {"triplets", set.size()},
                 {"expected_triplets", expected_triplet_count(set.modality, sample.shape)},
                 {"part_lengths", lengths},
                 {"local_index_arity", {arity_min, arity_max}},
                 {"max_local_index", max_local}};
  if (req.contains("out")) {
    auto dir = out_dir(req);
    json detail = json::array();
    for (const auto& t : set.triplets)
      detail.push_back({{"global_index", t.global_index},
                        {"local_indices", t.local_indices},
                        {"num1", t.num1},
                        {"num2", t.num2}});
    write_json(dir / "triplets.json", {{"summary", result}, {"triplets", detail}});
    result["written"] = {(dir / "triplets.json").string()};
  }
  return result;
}

// ---------------------------------------------------------------- gen-synth

json job_gen_synth(const json& req) {
  const auto modality = modality_of(required<std::string>(req, "modality"));
  const auto seed = field<std::uint64_t>(req, "seed", 0);
  const json spec_json = req.contains("spec") ? req["spec"] : req;
  auto spec = synth_spec(spec_json, modality);
  auto data = gen_synthetic(spec, seed);
  auto dir = out_dir(req);

  Shape shape = data.samples.front().shape;
  shape.insert(shape.begin(), data.samples.size());
  std::vector<double> flat;
  for (const auto& s : data.samples) flat.insert(flat.end(), s.values.begin(), s.values.end());
  write_tensor_file(dir / "samples.pgt", shape, flat);
  write_tensor_file(dir / "labels.pgt", {data.labels.size()}, data.labels);
  json written = {(dir / "samples.pgt").string(), (dir / "labels.pgt").string()};
  if (modality == ModalityKind::Table) {
    TableCsv t;
    for (std::size_t c = 0; c < spec.features; ++c) t.header.push_back("f" + std::to_string(c));
    t.header.push_back("label");
    t.categories.resize(t.header.size());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      std::vector<std::optional<double>> row(data.samples[i].values.begin(), data.samples[i].values.end());
      row.push_back(data.labels[i]);
      t.rows.push_back(std::move(row));
    }
    write_table_csv(dir / "data.csv", t);
    written.push_back((dir / "data.csv").string());
  }
  json result = {{"modality", modality_name(modality)},
                 {"count", data.samples.size()},
                 {"sample_shape", data.samples.front().shape},
                 {"seed", seed},
                 {"written", written}};
  if (!data.weights.empty()) result["weights"] = data.weights;
  write_json(dir / "dataset.json", result);
  return result;
}

// ---------------------------------------------------------------- pretrain

AdamWConfig optimizer_config(const json& j, AdamWConfig c) {
  c.lr = field<double>(j, "lr", c.lr);
  c.weight_decay = field<double>(j, "weight_decay", c.weight_decay);
  c.beta1 = field<double>(j, "beta1", c.beta1);
  c.beta2 = field<double>(j, "beta2", c.beta2);
  c.eps = field<double>(j, "eps", c.eps);
  c.validate();
  return c;
}

ModelConfig model_config(const json& req) {
  return req.contains("model") ? model_config_from_json(req["model"]) : ModelConfig::desk();
}

json default_dataset(ModalityKind m, std::uint64_t seed) {
  return {{"name", modality_name(m)},
          {"modality", modality_name(m)},
          {"synthetic", {{"count", 512}, {"seed", seed}}}};
}

json job_pretrain(const json& req) {
  const auto seed = field<std::uint64_t>(req, "seed", 0);
  json resolved = req;
  json datasets = req.contains("datasets") ? req["datasets"] : json::array();
  require(datasets.is_array(), ErrorKind::Config, "'datasets' must be a list");
  if (req.contains("modalities")) {
    const auto wanted = field<std::vector<std::string>>(req, "modalities", {});
    require(!wanted.empty(), ErrorKind::Config, "'modalities' is empty");
    json filtered = json::array();
    for (const auto& name : wanted) {
      const auto m = modality_of(name);
      bool found = false;
      for (const auto& ds : datasets)
        if (field<std::string>(ds, "name", "") == name || modality_of(required<std::string>(ds, "modality")) == m) {
          filtered.push_back(ds);
          found = true;
        }
      if (!found) filtered.push_back(default_dataset(m, seed + filtered.size() + 1));
    }
    datasets = filtered;
  }
  require(!datasets.empty(), ErrorKind::Config, "pre-training needs 'datasets' or 'modalities'");
  resolved["datasets"] = datasets;

  std::vector<PretrainDataset> pds;
  std::set<std::string> names;
  for (const auto& ds : datasets) {
    auto data = load_dataset(ds);
    PretrainDataset p;
    p.modality = data.modality;
    p.name = field<std::string>(ds, "name", modality_name(data.modality));
    require(names.insert(p.name).second, ErrorKind::Config, "dataset name '" + p.name + "' repeats");
    require(p.name.find('.') == std::string::npos, ErrorKind::Config, "dataset names may not contain '.'");
    p.samples = normalize(data.samples, data.modality).samples;
    p.corruption = CorruptionSpec::defaults(data.modality);
    if (ds.contains("corruption")) {
      p.corruption.mask_fraction = field<double>(ds["corruption"], "mask_fraction", p.corruption.mask_fraction);
      p.corruption.noise_variance = field<double>(ds["corruption"], "noise_variance", p.corruption.noise_variance);
    }
    p.corruption.validate();
    p.encode_seed = field<std::uint64_t>(ds, "encode_seed", seed);
    pds.push_back(std::move(p));
  }

  const auto steps = field<std::size_t>(req, "steps", 100);
  require(steps > 0, ErrorKind::Config, "steps must be positive");
  const auto mode = field<std::string>(req, "mode", "parallel");
  require(mode == "parallel" || mode == "ct", ErrorKind::Config, "mode must be 'parallel' or 'ct'");

  PretrainConfig pc;
  pc.optimizer = optimizer_config(req.value("optimizer", json::object()), pc.optimizer);
  pc.schedule.total_steps = steps;
  if (req.contains("schedule")) {
    pc.schedule.warmup_ratio = field<double>(req["schedule"], "warmup_ratio", pc.schedule.warmup_ratio);
    pc.schedule.cycles = field<std::size_t>(req["schedule"], "cycles", pc.schedule.cycles);
  }
  pc.batch_size = field<std::size_t>(req, "batch_size", pc.batch_size);
  pc.threads = field<std::size_t>(req, "threads", 0);
  pc.seed = seed;

  const auto config = model_config(req);
  auto dir = out_dir(req);
  resolved["model"] = model_config_to_json(config);
  resolved["steps"] = steps;
  resolved["mode"] = mode;
  resolved["seed"] = seed;
  write_json(dir / "manifest.json", resolved);

  Model model(config, seed);
  Pretrainer trainer(model, std::move(pds), pc);
  std::ofstream log(dir / "log.jsonl");
  require(static_cast<bool>(log), ErrorKind::Io, "cannot write log in '" + dir.string() + "'");
  RecordWriter records(log, "step");
  std::vector<PlotPoint> curve;
  const auto every = std::max<std::size_t>(1, field<std::size_t>(req, "log_every", 1));
  double first = 0.0;
  StepResult last;
  for (std::size_t s = 0; s < steps; ++s) {
    last = mode == "parallel" ? trainer.step_parallel() : trainer.step_ct();
    if (s == 0) first = last.mean_loss;
    curve.push_back({static_cast<double>(last.step), last.mean_loss});
    if (s % every == 0 || s + 1 == steps) {
      records.write(last.step, "lr", last.lr);
      for (std::size_t d = 0; d < last.losses.size(); ++d)
        records.write(last.step, "loss/" + trainer.datasets()[d].name, last.losses[d]);
      records.write(last.step, "loss/mean", last.mean_loss);
      log.flush();
    }
  }
  std::ostringstream rng;
  rng << trainer.rng();
  json extra = {{"kind", "pretrain"}, {"mode", mode}, {"datasets", json::array()}};
  for (const auto& ds : trainer.datasets())
    extra["datasets"].push_back({{"name", ds.name}, {"modality", modality_name(ds.modality)}});
  save_checkpoint(dir / "checkpoint.pgck", model, trainer.step(), rng.str(), extra);
  write_plotdata(dir / "loss.csv", curve, "step", "mean_loss");

  json losses = json::object();
  for (std::size_t d = 0; d < last.losses.size(); ++d) losses[trainer.datasets()[d].name] = last.losses[d];
  const std::size_t tail = std::min<std::size_t>(10, curve.size());
  double tail_mean = 0.0;
  for (std::size_t i = curve.size() - tail; i < curve.size(); ++i) tail_mean += curve[i].y;
  tail_mean /= static_cast<double>(tail);
  return {{"steps", steps},
          {"mode", mode},
          {"first_loss", first},
          {"final_loss", last.mean_loss},
          {"final_losses", losses},
          {"tail_mean_loss", tail_mean},
          {"parameters", model.count_parameters()},
          {"written",
           {(dir / "manifest.json").string(), (dir / "log.jsonl").string(),
            (dir / "checkpoint.pgck").string(), (dir / "loss.csv").string()}}};
}

// ---------------------------------------------------------------- finetune / eval

std::unique_ptr<Model> model_from(const json& req, CheckpointManifest* manifest = nullptr) {
  if (req.contains("checkpoint")) {
    auto loaded = load_checkpoint(required<std::string>(req, "checkpoint"));
    if (manifest) *manifest = loaded.manifest;
    return std::move(loaded.model);
  }
  return std::make_unique<Model>(model_config(req), field<std::uint64_t>(req, "seed", 0));
}

struct TableStats {
  std::vector<double> mean, std;
};

void apply_table_stats(std::vector<Sample>& samples, const TableStats& st) {
  for (auto& s : samples) {
    require(s.values.size() == st.mean.size(), ErrorKind::Dimension,
            "table width differs from the training data");
    for (std::size_t c = 0; c < s.values.size(); ++c) s.values[c] = (s.values[c] - st.mean[c]) / st.std[c];
  }
}

FinetuneData finetune_data(const LoadedDataset& d, const FinetuneConfig& cfg, std::uint64_t encode_seed) {
  FinetuneData f{d.modality, d.samples, d.labels, encode_seed};
  require(!d.labels.empty(), ErrorKind::Config, "task data has no labels");
  (void)cfg;
  return f;
}

json trace_json(const FinetuneResult& r) {
  json out = json::array();
  for (const auto& e : r.trace) {
    json m = json::object();
    for (const auto& [k, v] : e.metrics) m[k] = v;
    out.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"metrics", m}});
  }
  return out;
}

json job_finetune(const json& req) {
  const auto seed = field<std::uint64_t>(req, "seed", 0);
  require(req.contains("task"), ErrorKind::Config, "missing field 'task'");
  auto train = load_dataset(req["task"]);
  std::optional<LoadedDataset> eval;
  if (req.contains("eval")) eval = load_dataset(req["eval"]);
  if (eval)
    require(eval->modality == train.modality, ErrorKind::Config, "eval modality differs from task");

  FinetuneConfig cfg;
  cfg.head = field<std::string>(req, "head", cfg.head);
  cfg.loss = parse_loss_kind(field<std::string>(req, "loss", "ce"));
  std::size_t default_dim = train.label_width;
  if (cfg.loss == LossKind::CE) {
    double top = 0;
    for (double v : train.labels) top = std::max(top, v);
    if (eval)
      for (double v : eval->labels) top = std::max(top, v);
    default_dim = static_cast<std::size_t>(top) + 1;
    default_dim = std::max<std::size_t>(default_dim, 2);
  }
  cfg.head_out_dim = field<std::size_t>(req, "head_out_dim", default_dim);
  cfg.head_layers = field<std::size_t>(req, "head_layers", cfg.head_layers);
  cfg.lr = field<double>(req, "lr", cfg.lr);
  cfg.weight_decay = field<double>(req, "weight_decay", cfg.weight_decay);
  cfg.epochs = field<std::size_t>(req, "epochs", cfg.epochs);
  cfg.batch_size = field<std::size_t>(req, "batch_size", cfg.batch_size);
  cfg.freeze_body = field<bool>(req, "freeze_body", false);
  cfg.zero_init_output = field<bool>(req, "zero_init_output", false);
  cfg.seed = seed;
  cfg.validate();

  json norm = json::object();
  if (field<bool>(req, "normalize", true)) {
    if (train.modality == ModalityKind::Table) {
      auto n = normalize(train.samples, ModalityKind::Table);
      train.samples = std::move(n.samples);
      TableStats st{n.stats.mean, n.stats.std};
      if (eval) apply_table_stats(eval->samples, st);
      norm = {{"mean", st.mean}, {"std", st.std}};
    } else {
      train.samples = normalize(train.samples, train.modality).samples;
      if (eval) eval->samples = normalize(eval->samples, eval->modality).samples;
      norm = {{"modality", modality_name(train.modality)}};
    }
  }

  auto model = model_from(req);
  const auto encode_seed = field<std::uint64_t>(req, "encode_seed", seed);
  auto train_data = finetune_data(train, cfg, encode_seed);
  std::optional<FinetuneData> eval_data;
  if (eval) eval_data = finetune_data(*eval, cfg, encode_seed);
  auto result = finetune(*model, train_data, cfg, eval_data ? &*eval_data : nullptr);

  auto dir = out_dir(req);
  std::ofstream log(dir / "trace.jsonl");
  require(static_cast<bool>(log), ErrorKind::Io, "cannot write trace in '" + dir.string() + "'");
  RecordWriter records(log, "epoch");
  std::vector<PlotPoint> loss_curve, metric_curve;
  const std::string headline = result.trace.front().metrics.front().first;
  for (const auto& e : result.trace) {
    records.write(e.epoch, "train_loss", e.train_loss);
    for (const auto& [k, v] : e.metrics) records.write(e.epoch, k, v);
    loss_curve.push_back({static_cast<double>(e.epoch), e.train_loss});
    metric_curve.push_back({static_cast<double>(e.epoch), e.metric(headline)});
  }
  log.close();
  json extra = {{"kind", "finetune"},
                {"task",
                 {{"head", cfg.head},
                  {"loss", loss_kind_name(cfg.loss)},
                  {"modality", modality_name(train.modality)},
                  {"encode_seed", encode_seed},
                  {"normalization", norm}}}};
  save_checkpoint(dir / "checkpoint.pgck", *model, cfg.epochs, "", extra);
  write_plotdata(dir / "loss.csv", loss_curve, "epoch", "train_loss");
  write_plotdata(dir / (headline + ".csv"), metric_curve, "epoch", headline);

  json final = json::object();
  for (const auto& [k, v] : result.trace.back().metrics) final[k] = v;
  return {{"head", cfg.head},
          {"loss", loss_kind_name(cfg.loss)},
          {"head_out_dim", cfg.head_out_dim},
          {"epochs", cfg.epochs},
          {"trace", trace_json(result)},
          {"final", final},
          {"written",
           {(dir / "trace.jsonl").string(), (dir / "checkpoint.pgck").string(),
            (dir / "loss.csv").string(), (dir / (headline + ".csv")).string()}}};
}

json job_eval(const json& req) {
  CheckpointManifest manifest;
  require(req.contains("checkpoint"), ErrorKind::Config, "missing field 'checkpoint'");
  auto model = model_from(req, &manifest);
  require(req.contains("data"), ErrorKind::Config, "missing field 'data'");
  auto data = load_dataset(req["data"]);
  const json task = manifest.extra.value("task", json::object());

  FinetuneConfig cfg;
  cfg.head = field<std::string>(req, "head", field<std::string>(task, "head", ""));
  if (cfg.head.empty()) {
    std::vector<std::string> candidates;
    for (const auto& h : model->head_names())
      if (h.rfind("recon_", 0) != 0) candidates.push_back(h);
    require(candidates.size() == 1, ErrorKind::Config,
            "checkpoint has " + std::to_string(candidates.size()) + " task heads; pass 'head'");
    cfg.head = candidates.front();
  }
  require(model->has_head(cfg.head), ErrorKind::Config, "checkpoint has no head '" + cfg.head + "'");
  cfg.head_out_dim = model->head_out_dim(cfg.head);
  cfg.head_layers = model->head_layers(cfg.head);
  cfg.loss = parse_loss_kind(field<std::string>(req, "loss", field<std::string>(task, "loss", "ce")));

  const json norm = task.value("normalization", json::object());
  if (field<bool>(req, "normalize", true)) {
    if (data.modality == ModalityKind::Table && norm.contains("mean")) {
      apply_table_stats(data.samples, {norm["mean"].get<std::vector<double>>(),
                                       norm["std"].get<std::vector<double>>()});
    } else {
      data.samples = normalize(data.samples, data.modality).samples;
    }
  }
  FinetuneData fd{data.modality, data.samples, data.labels,
                  field<std::uint64_t>(req, "encode_seed", field<std::uint64_t>(task, "encode_seed", 0))};
  auto rows = evaluate(*model, cfg, fd);
  json metrics = json::object();
  for (const auto& [k, v] : rows) metrics[k] = v;
  json result = {{"head", cfg.head}, {"loss", loss_kind_name(cfg.loss)}, {"samples", fd.size()},
                 {"metrics", metrics}};
  if (req.contains("out")) {
    auto dir = out_dir(req);
    std::ofstream out(dir / "metrics.jsonl");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write metrics in '" + dir.string() + "'");
    for (const auto& [k, v] : rows) {
      nlohmann::ordered_json row = {{"name", k}, {"value", v}};
      out << row.dump() << "\n";
    }
    result["written"] = {(dir / "metrics.jsonl").string()};
  }
  return result;
}

// ---------------------------------------------------------------- fit-scaling

std::vector<ScalingPoint> read_points(const json& req) {
  std::vector<ScalingPoint> pts;
  if (req.contains("points")) {
    for (const auto& p : req["points"]) {
      require(p.is_array() && p.size() == 2, ErrorKind::Config, "points must be [x, y] pairs");
      pts.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return pts;
  }
  const auto path = required<std::string>(req, "points_file");
  auto rows = parse_csv(read_file(path));
  require(rows.size() >= 2, ErrorKind::Parse, "'" + path + "' needs a header and data rows");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    require(rows[r].size() == 2, ErrorKind::Parse,
            "'" + path + "' line " + std::to_string(r + 1) + ": expected 2 columns");
    try {
      pts.push_back({std::stod(rows[r][0]), std::stod(rows[r][1])});
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, "'" + path + "' line " + std::to_string(r + 1) + ": not a number");
    }
  }
  return pts;
}

json job_fit_scaling(const json& req) {
  std::vector<ScalingPoint> pts;
  json gaps = json::array();
  if (req.contains("combinations") || req.contains("combinations_file")) {
    json combos = req.contains("combinations")
                      ? req["combinations"]
                      : json::parse(read_file(required<std::string>(req, "combinations_file")));
    require(combos.is_array(), ErrorKind::Config, "combinations must be a list");
    std::vector<CombinationResult> results;
    for (const auto& c : combos) {
      CombinationResult r;
      r.subset = subset_mask(field<std::vector<std::string>>(c, "subset", {}));
      for (const auto& [task, score] : required<json>(c, "scores").items())
        r.scores.push_back({task, score.get<double>()});
      results.push_back(std::move(r));
    }
    auto curve = aggregate_by_cardinality(results);
    pts = curve.points;
    gaps = curve.gaps;
  } else {
    pts = read_points(req);
  }
  auto fit = fit_scaling(pts);
  json points = json::array();
  for (const auto& q : fit.points) points.push_back({q.x, q.y});
  json result = {{"p", fit.p},           {"c", fit.c},
                 {"residual_sse", fit.residual_sse}, {"boundary", fit.boundary},
                 {"iterations", fit.iterations}, {"points", points},
                 {"gaps", gaps}};
  if (req.contains("out")) {
    auto dir = out_dir(req);
    std::vector<PlotPoint> curve, data;
    for (int x = 0; x <= 5; ++x) curve.push_back({double(x), predicted_y(fit.p, fit.c, x)});
    for (const auto& q : fit.points) data.push_back({q.x, q.y});
    write_plotdata(dir / "curve.csv", curve, "x", "y");
    write_plotdata(dir / "points.csv", data, "x", "y");
    write_json(dir / "fit.json", result);
    result["written"] = {(dir / "fit.json").string(), (dir / "curve.csv").string(),
                         (dir / "points.csv").string()};
  }
  return result;
}

// ---------------------------------------------------------------- affinity

json matrix_json(const AffinityMatrix& a) {
  json m = json::array();
  for (const auto& row : a.values) {
    json r = json::array();
    for (double v : row) r.push_back(std::isnan(v) ? json(nullptr) : json(v));
    m.push_back(r);
  }
  return m;
}

json job_affinity(const json& req) {
  AffinityOptions opt;
  opt.layers = field<std::vector<std::size_t>>(req, "layers", {});
  opt.heads = field<std::vector<std::size_t>>(req, "heads", {});
  std::vector<AttentionMap> maps;
  std::vector<int> segments;
  if (req.contains("attention")) {
    const auto path = required<std::string>(req, "attention");
    auto t = read_tensor_file(path);
    require(t.shape.size() == 4 && t.shape[2] == t.shape[3], ErrorKind::Dimension,
            "'" + path + "' must have shape [layers, heads, T, T]");
    const std::size_t per = t.shape[1] * t.shape[2] * t.shape[3];
    for (std::size_t l = 0; l < t.shape[0]; ++l)
      maps.push_back({l, 0, t.shape[1], t.shape[2],
                      std::vector<double>(t.values.begin() + l * per, t.values.begin() + (l + 1) * per)});
    if (req.contains("segments")) segments = field<std::vector<int>>(req, "segments", {});
    else segments = json::parse(read_file(required<std::string>(req, "segments_file"))).get<std::vector<int>>();
  } else {
    require(req.contains("inputs"), ErrorKind::Config, "affinity needs 'attention' or 'inputs'");
    auto model = model_from(req);
    std::vector<std::pair<int, TripletSet>> parts;
    for (const auto& in : req["inputs"]) {
      auto data = load_dataset(in);
      const auto index = field<std::size_t>(in, "index", 0);
      require(index < data.samples.size(), ErrorKind::Contract, "input index out of range");
      auto samples = normalize({data.samples[index]}, data.modality).samples;
      parts.push_back({segment_of(data.modality),
                       encode(samples.front(), field<std::uint64_t>(in, "encode_seed", 0),
                              model->config().vocab_size)});
    }
    auto mixed = mixed_sequence(*model, parts);
    AttentionCapture cap;
    model->forward(mixed.seq, &cap);
    maps = std::move(cap.maps);
    segments = mixed.segments;
  }
  auto a = attention_affinity(maps, segments, opt);
  json names = json::array();
  for (auto n : kPretrainModalityNames) names.push_back(n);
  json result = {{"modalities", names}, {"matrix", matrix_json(a)}, {"present", a.present},
                 {"tokens", segments.size()}, {"maps", maps.size()}};
  if (req.contains("out")) {
    auto dir = out_dir(req);
    write_json(dir / "affinity.json", result);
    json written = {(dir / "affinity.json").string()};
    if (!req.contains("attention")) {
      const std::size_t t = maps.front().tokens, h = maps.front().heads;
      std::vector<double> flat;
      for (const auto& m : maps) flat.insert(flat.end(), m.weights.begin(), m.weights.end());
      write_tensor_file(dir / "attention.pgt", {maps.size(), h, t, t}, flat);
      write_json(dir / "segments.json", segments);
      written.push_back((dir / "attention.pgt").string());
      written.push_back((dir / "segments.json").string());
    }
    result["written"] = written;
  }
  return result;
}

// ---------------------------------------------------------------- inspect-checkpoint

json job_inspect(const json& req) {
  const auto path = required<std::string>(req, "checkpoint");
  auto loaded = load_checkpoint(path);
  const auto& m = loaded.manifest;
  json heads = json::array();
  for (const auto& h : m.heads) heads.push_back({{"name", h.name}, {"out_dim", h.out_dim}, {"layers", h.layers}});
  auto breakdown = loaded.model->parameter_breakdown();
  return {{"path", path},
          {"version", m.version},
          {"step", m.step},
          {"config", model_config_to_json(m.config)},
          {"heads", heads},
          {"tensors", m.params.size()},
          {"parameters", breakdown.total},
          {"breakdown", breakdown.components},
          {"extra", m.extra}};
}

}  // namespace

const std::vector<std::string>& job_commands() {
  static const std::vector<std::string> names = {"encode",       "pretrain", "finetune",
                                                 "eval",         "fit-scaling", "affinity",
                                                 "gen-synth",    "inspect-checkpoint"};
  return names;
}

json run_job(const json& request) {
  require(request.is_object(), ErrorKind::Config, "request must be a JSON object");
  const auto command = required<std::string>(request, "command");
  try {
    if (command == "encode") return job_encode(request);
    if (command == "pretrain") return job_pretrain(request);
    if (command == "finetune") return job_finetune(request);
    if (command == "eval") return job_eval(request);
    if (command == "fit-scaling") return job_fit_scaling(request);
    if (command == "affinity") return job_affinity(request);
    if (command == "gen-synth") return job_gen_synth(request);
    if (command == "inspect-checkpoint") return job_inspect(request);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed request: ") + e.what());
  }
  throw Error(ErrorKind::Config, "unknown command '" + command + "'");
}

}  // namespace pangaea
