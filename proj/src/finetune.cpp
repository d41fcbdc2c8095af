#include "pangaea/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pangaea/error.hpp"
#include "pangaea/metrics.hpp"
#include "pangaea/optim.hpp"

namespace pangaea {

const char* loss_kind_name(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::CE: return "ce";
    case LossKind::BCE: return "bce";
    case LossKind::MSE: return "mse";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ce") return LossKind::CE;
  if (name == "bce") return LossKind::BCE;
  if (name == "mse") return LossKind::MSE;
  throw Error(ErrorKind::Config, "unknown loss kind '" + name + "' (expected ce, bce or mse)");
}

void FinetuneConfig::validate() const {
  require(!head.empty() && head.find('.') == std::string::npos, ErrorKind::Config,
          "head name must be non-empty and contain no '.'");
  require(head_out_dim > 0, ErrorKind::Config, "head_out_dim must be positive");
  require(head_layers == 1 || head_layers == 2, ErrorKind::Config, "head_layers must be 1 or 2");
  require(loss != LossKind::CE || head_out_dim >= 2, ErrorKind::Config,
          "cross-entropy needs at least two classes");
  require(lr >= 0.0 && std::isfinite(lr), ErrorKind::Config, "lr must be finite and >= 0");
  require(batch_size > 0, ErrorKind::Config, "batch_size must be positive");
}

double EpochRecord::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw Error(ErrorKind::Contract, "no metric '" + name + "' in epoch " + std::to_string(epoch));
}

namespace {

void check_data(const FinetuneConfig& config, const FinetuneData& data) {
  require(data.size() > 0, ErrorKind::Contract, "fine-tuning data is empty");
  for (const auto& s : data.samples)
    require(s.modality == data.modality, ErrorKind::Contract,
            "sample modality differs from the task modality");
  const std::size_t per = config.loss == LossKind::CE ? 1 : config.head_out_dim;
  require(data.targets.size() == data.size() * per, ErrorKind::Config,
          "expected " + std::to_string(data.size() * per) + " targets for head_out_dim " +
              std::to_string(config.head_out_dim) + ", got " + std::to_string(data.targets.size()));
  for (double t : data.targets) {
    if (config.loss == LossKind::CE)
      require(t >= 0 && t == std::floor(t) && t < static_cast<double>(config.head_out_dim),
              ErrorKind::Config, "class label out of range for head_out_dim");
    if (config.loss == LossKind::BCE)
      require(t == 0.0 || t == 1.0, ErrorKind::Config, "BCE targets must be 0 or 1");
  }
}

Tensor forward_rows(const Model& model, const std::string& head, const FinetuneData& data,
                    std::span<const std::size_t> indices) {
  const std::size_t vocab = model.config().vocab_size;
  std::vector<TokenSeq> seqs;
  seqs.reserve(indices.size());
  for (auto i : indices) seqs.push_back(model.tokenize(encode(data.samples[i], data.encode_seed, vocab)));
  auto batch = make_batch(seqs);
  return model.decode_recon(head, model.forward(batch), batch);
}

}  // namespace

Tensor predict(const Model& model, const std::string& head, const FinetuneData& data,
               std::size_t batch_size) {
  require(data.size() > 0, ErrorKind::Contract, "nothing to predict");
  require(batch_size > 0, ErrorKind::Config, "batch_size must be positive");
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    parts.push_back(forward_rows(model, head, data, idx));
  }
  auto out = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return Tensor::from(out.shape(), std::vector<double>(out.data().begin(), out.data().end()));
}

Tensor finetune_loss(const Model& model, const FinetuneConfig& config, const FinetuneData& data,
                     std::span<const std::size_t> indices) {
  require(!indices.empty(), ErrorKind::Contract, "empty fine-tuning batch");
  auto out = forward_rows(model, config.head, data, indices);
  const std::size_t c = config.head_out_dim, n = indices.size();
  switch (config.loss) {
    case LossKind::CE: {
      std::vector<std::size_t> ids;
      for (auto i : indices) ids.push_back(static_cast<std::size_t>(data.targets[i]));
      return cross_entropy(out, ids);
    }
    case LossKind::BCE: {
      // -log sigmoid(z) for y=1 and -log(1-sigmoid(z)) for y=0 equal a
      // two-way softmax cross-entropy over the logits [0, z].
      auto z = reshape(out, {n * c, 1});
      auto pair = concat_cols({Tensor::zeros({n * c, 1}), z});
      std::vector<std::size_t> ids;
      for (auto i : indices)
        for (std::size_t k = 0; k < c; ++k) ids.push_back(static_cast<std::size_t>(data.targets[i * c + k]));
      return cross_entropy(pair, ids);
    }
    case LossKind::MSE: {
      std::vector<double> t;
      for (auto i : indices) t.insert(t.end(), data.targets.begin() + i * c, data.targets.begin() + (i + 1) * c);
      return mse_loss(out, Tensor::from({n, c}, std::move(t)));
    }
  }
  throw Error(ErrorKind::Contract, "unknown loss kind");
}

std::vector<MetricRow> evaluate(const Model& model, const FinetuneConfig& config,
                                const FinetuneData& data) {
  config.validate();
  check_data(config, data);
  auto out = predict(model, config.head, data);
  const std::size_t n = data.size(), c = config.head_out_dim;
  std::vector<MetricRow> rows;
  switch (config.loss) {
    case LossKind::CE: {
      EvalBatch b{data.targets, {}, TaskKind::Classification};
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
          if (out.at(i, k) > out.at(i, best)) best = k;
        b.y_hat.push_back(static_cast<double>(best));
      }
      rows.emplace_back("acc", metric_acc(b));
      rows.emplace_back("f1", metric_f1(b, c == 2 ? F1Average::Binary : F1Average::Weighted).value);
      if (c == 2) {
        EvalBatch s{data.targets, {}, TaskKind::RankingScore};
        for (std::size_t i = 0; i < n; ++i) s.y_hat.push_back(out.at(i, 1) - out.at(i, 0));
        const bool both = std::count(s.y.begin(), s.y.end(), 1.0) > 0 &&
                          std::count(s.y.begin(), s.y.end(), 0.0) > 0;
        if (both) rows.emplace_back("auc", metric_auc(s));
      }
      break;
    }
    case LossKind::BCE: {
      EvalBatch b{data.targets, {}, TaskKind::Classification};
      for (double z : out.data()) b.y_hat.push_back(z > 0.0 ? 1.0 : 0.0);
      rows.emplace_back("acc", metric_acc(b));
      break;
    }
    case LossKind::MSE: {
      EvalBatch b{data.targets, std::vector<double>(out.data().begin(), out.data().end()),
                  TaskKind::Regression};
      rows.emplace_back("mse", metric_mse(b));
      rows.emplace_back("mae", metric_mae(b));
      rows.emplace_back("rmse", metric_rmse(b));
      break;
    }
  }
  return rows;
}

FinetuneResult finetune(Model& model, const FinetuneData& train, const FinetuneConfig& config,
                        const FinetuneData* eval) {
  config.validate();
  check_data(config, train);
  if (eval) check_data(config, *eval);
  model.attach_head(config.head, config.head_out_dim, config.head_layers);
  if (config.zero_init_output) model.zero_head_output(config.head);

  AdamWConfig opt_config;
  opt_config.lr = config.lr;
  opt_config.weight_decay = config.weight_decay;
  AdamW optimizer(config.freeze_body ? model.head_parameters(config.head) : model.parameters(),
                  opt_config);
  std::mt19937_64 rng(config.seed);
  const FinetuneData& scored = eval ? *eval : train;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  FinetuneResult result;
  {
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - b);
      total += finetune_loss(model, config, train, std::span(order).subspan(b, len)).item() *
               static_cast<double>(len);
    }
    result.trace.push_back({0, total / static_cast<double>(train.size()),
                            evaluate(model, config, scored)});
  }
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - b);
      auto loss = finetune_loss(model, config, train, std::span(order).subspan(b, len));
      optimizer.step(gradients(loss), config.lr);
      total += loss.item();
      ++batches;
    }
    result.trace.push_back({epoch, total / static_cast<double>(batches),
                            evaluate(model, config, scored)});
  }
  return result;
}

}  // namespace pangaea
