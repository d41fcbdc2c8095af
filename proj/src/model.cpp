#include "pangaea/model.hpp"

#include <cmath>
#include <string>

#include "pangaea/error.hpp"

namespace pangaea {

const char* global_topology_name(GlobalTopology g) noexcept {
  return g == GlobalTopology::Rotary ? "rotary" : "additive";
}

GlobalTopology parse_global_topology(const std::string& name) {
  if (name == "rotary") return GlobalTopology::Rotary;
  if (name == "additive") return GlobalTopology::Additive;
  fail(ErrorKind::Config, "global_topology must be rotary or additive, got '" + name + "'");
}

TokenizerConfig ModelConfig::tokenizer() const {
  return {token_dim, topology_capacity, vocab_size, point_encoder, point_hidden};
}

void ModelConfig::validate() const {
  require(token_dim > 0 && hidden_dim > 0 && intermediate_dim > 0, ErrorKind::Config,
          "model dimensions must be positive");
  require(n_heads > 0 && hidden_dim % n_heads == 0, ErrorKind::Config,
          "hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
              std::to_string(n_heads));
  if (global_topology == GlobalTopology::Rotary)
    require(head_dim() % 2 == 0, ErrorKind::Config,
            "rotary positions need an even head dimension, got " + std::to_string(head_dim()));
  else
    require(max_positions > 0, ErrorKind::Config, "additive topology needs max_positions > 0");
  require(rope_base > 0.0, ErrorKind::Config, "rope_base must be positive");
  require(norm_eps > 0.0, ErrorKind::Config, "norm_eps must be positive");
}

ModelConfig ModelConfig::full() { return {}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.n_blocks = 2;
  c.n_heads = 4;
  c.hidden_dim = 64;
  c.intermediate_dim = 128;
  c.vocab_size = 512;
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.n_blocks == b.n_blocks && a.n_heads == b.n_heads && a.token_dim == b.token_dim &&
         a.hidden_dim == b.hidden_dim && a.intermediate_dim == b.intermediate_dim &&
         a.rope_base == b.rope_base && a.global_topology == b.global_topology &&
         a.max_positions == b.max_positions && a.topology_capacity == b.topology_capacity &&
         a.vocab_size == b.vocab_size && a.point_encoder == b.point_encoder &&
         a.point_hidden == b.point_hidden && a.norm_eps == b.norm_eps && a.init_std == b.init_std;
}

TokenBatch make_batch(const std::vector<TokenSeq>& seqs) {
  require(!seqs.empty(), ErrorKind::Contract, "empty token batch");
  TokenBatch batch;
  batch.offsets.push_back(0);
  std::vector<Tensor> parts;
  for (const auto& s : seqs) {
    require(s.length() > 0 && s.tokens.rows() == s.length(), ErrorKind::Contract,
            "token sequence rows and positions disagree");
    parts.push_back(s.tokens);
    batch.positions.insert(batch.positions.end(), s.positions.begin(), s.positions.end());
    batch.offsets.push_back(batch.positions.size());
  }
  batch.tokens = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return batch;
}

std::vector<double> AttentionMap::head_mean() const {
  std::vector<double> out(tokens * tokens, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < tokens * tokens; ++i) out[i] += weights[h * tokens * tokens + i];
  for (auto& v : out) v /= static_cast<double>(heads);
  return out;
}

std::string parameter_component(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("tok.numeric") || starts("tok.topology")) return "tokenizer";
  if (starts("tok.mask_token") || starts("tok.recon_token")) return "special_tokens";
  if (starts("tok.word")) return "word_table";
  if (starts("tok.point")) return "point_encoder";
  if (starts("pos.")) return "position_table";
  if (starts("proj.")) return "input_proj";
  if (starts("block")) return "blocks";
  if (starts("final_norm")) return "final_norm";
  if (starts("head.")) return "heads";
  return "other";
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {
  config_.validate();
  const double s = config_.init_std;
  const std::size_t d = config_.token_dim, h = config_.hidden_dim, m = config_.intermediate_dim;
  tok_ = register_tokenizer(config_.tokenizer(), store_, rng_, s);
  if (config_.global_topology == GlobalTopology::Additive)
    store_.add_normal("pos.table", {config_.max_positions, d}, s, rng_);
  store_.add_normal("proj.weight", {d, h}, s, rng_);
  store_.add_zeros("proj.bias", {h});
  for (std::size_t b = 0; b < config_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    store_.add_ones(p + "attn_norm", {h});
    store_.add_normal(p + "attn.wq", {h, h}, s, rng_);
    store_.add_normal(p + "attn.wk", {h, h}, s, rng_);
    store_.add_normal(p + "attn.wv", {h, h}, s, rng_);
    store_.add_normal(p + "attn.wo", {h, h}, s, rng_);
    store_.add_ones(p + "ffn_norm", {h});
    store_.add_normal(p + "ffn.gate", {h, m}, s, rng_);
    store_.add_normal(p + "ffn.up", {h, m}, s, rng_);
    store_.add_normal(p + "ffn.down", {m, h}, s, rng_);
  }
  store_.add_ones("final_norm", {h});
}

void Model::attach_head(const std::string& name, std::size_t out_dim, std::size_t layers) {
  require(!name.empty() && name.find('.') == std::string::npos, ErrorKind::Config,
          "head names must be non-empty and contain no '.'");
  require(out_dim > 0, ErrorKind::Config, "head output dimension must be positive");
  require(layers == 1 || layers == 2, ErrorKind::Config, "heads have one or two layers");
  const std::string p = "head." + name + ".";
  store_.remove_prefix(p);
  const std::size_t h = config_.hidden_dim;
  if (layers == 2) {
    store_.add_normal(p + "fc1.weight", {h, h}, config_.init_std, rng_);
    store_.add_zeros(p + "fc1.bias", {h});
  }
  store_.add_normal(p + "fc2.weight", {h, out_dim}, config_.init_std, rng_);
  store_.add_zeros(p + "fc2.bias", {out_dim});
  heads_[name] = {out_dim, layers};
}

bool Model::has_head(const std::string& name) const { return heads_.count(name) > 0; }

std::size_t Model::head_out_dim(const std::string& name) const {
  auto it = heads_.find(name);
  require(it != heads_.end(), ErrorKind::Contract, "no head named '" + name + "' is attached");
  return it->second.out_dim;
}

std::size_t Model::head_layers(const std::string& name) const {
  head_out_dim(name);
  return heads_.at(name).layers;
}

std::vector<std::string> Model::head_names() const {
  std::vector<std::string> out;
  for (const auto& entry : heads_) out.push_back(entry.first);
  return out;
}

void Model::zero_head_output(const std::string& name) {
  head_out_dim(name);
  for (const char* part : {".fc2.weight", ".fc2.bias"}) {
    Tensor t = store_.get("head." + name + part);
    for (auto& v : t.mutable_data()) v = 0.0;
  }
}

std::vector<Tensor> Model::body_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : store_.entries())
    if (p.name.rfind("head.", 0) != 0) out.push_back(p.value);
  return out;
}

std::vector<Tensor> Model::head_parameters(const std::string& name) const {
  head_out_dim(name);
  std::vector<Tensor> out;
  const std::string prefix = "head." + name + ".";
  for (const auto& p : store_.entries())
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.value);
  return out;
}

ParamBreakdown Model::parameter_breakdown() const {
  ParamBreakdown b;
  for (const auto& p : store_.entries()) {
    b.components[parameter_component(p.name)] += p.value.size();
    b.total += p.value.size();
  }
  return b;
}

Tensor Model::block(std::size_t index, const Tensor& x, const TokenBatch& batch,
                    AttentionCapture* capture) const {
  const std::string p = "block" + std::to_string(index) + ".";
  const std::size_t heads = config_.n_heads, hd = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool rotary = config_.global_topology == GlobalTopology::Rotary;

  auto xn = rms_norm(x, store_.get(p + "attn_norm"), config_.norm_eps);
  auto q = matmul(xn, store_.get(p + "attn.wq"));
  auto k = matmul(xn, store_.get(p + "attn.wk"));
  auto v = matmul(xn, store_.get(p + "attn.wv"));

  const std::size_t n_seq = batch.sequences();
  std::vector<AttentionMap*> maps;
  if (capture) {
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t t = batch.offsets[s + 1] - batch.offsets[s];
      capture->maps.push_back({index, s, heads, t, std::vector<double>(heads * t * t)});
    }
    for (std::size_t s = 0; s < n_seq; ++s)
      maps.push_back(&capture->maps[capture->maps.size() - n_seq + s]);
  }

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * hd, (h + 1) * hd);
    auto kh = slice_cols(k, h * hd, (h + 1) * hd);
    auto vh = slice_cols(v, h * hd, (h + 1) * hd);
    if (rotary) {
      qh = rope_rows(qh, batch.positions, config_.rope_base);
      kh = rope_rows(kh, batch.positions, config_.rope_base);
    }
    std::vector<Tensor> seq_out;
    seq_out.reserve(n_seq);
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t a = batch.offsets[s], e = batch.offsets[s + 1];
      auto qs = n_seq == 1 ? qh : slice_rows(qh, a, e);
      auto ks = n_seq == 1 ? kh : slice_rows(kh, a, e);
      auto vs = n_seq == 1 ? vh : slice_rows(vh, a, e);
      auto weights = softmax_rows(scale(matmul(qs, transpose(ks)), inv_sqrt));
      if (capture) {
        const std::size_t t = e - a;
        auto w = weights.data();
        std::copy(w.begin(), w.end(), maps[s]->weights.begin() + h * t * t);
      }
      seq_out.push_back(matmul(weights, vs));
    }
    head_out.push_back(n_seq == 1 ? seq_out.front() : concat_rows(seq_out));
  }
  auto attn = matmul(heads == 1 ? head_out.front() : concat_cols(head_out),
                     store_.get(p + "attn.wo"));
  auto h1 = add(x, attn);

  auto hn = rms_norm(h1, store_.get(p + "ffn_norm"), config_.norm_eps);
  auto gate = silu(matmul(hn, store_.get(p + "ffn.gate")));
  auto up = matmul(hn, store_.get(p + "ffn.up"));
  auto ffn = matmul(mul(gate, up), store_.get(p + "ffn.down"));
  return add(h1, ffn);
}

Tensor Model::forward(const TokenBatch& batch, AttentionCapture* capture) const {
  require(batch.rows() > 0 && batch.sequences() > 0, ErrorKind::Contract, "empty token batch");
  require(batch.tokens.rank() == 2 && batch.tokens.rows() == batch.rows() &&
              batch.tokens.cols() == config_.token_dim,
          ErrorKind::Config,
          "token batch must be [" + std::to_string(batch.rows()) + " x " +
              std::to_string(config_.token_dim) + "], got " + shape_string(batch.tokens.shape()));
  require(batch.offsets.front() == 0 && batch.offsets.back() == batch.rows(), ErrorKind::Contract,
          "token batch offsets do not cover its rows");
  Tensor x = batch.tokens;
  if (config_.global_topology == GlobalTopology::Additive) {
    for (auto pos : batch.positions)
      require(pos < config_.max_positions, ErrorKind::Capacity,
              "position " + std::to_string(pos) + " exceeds the additive table");
    x = add(x, gather_rows(store_.get("pos.table"), batch.positions));
  }
  x = add_row(matmul(x, store_.get("proj.weight")), store_.get("proj.bias"));
  for (std::size_t b = 0; b < config_.n_blocks; ++b) x = block(b, x, batch, capture);
  return rms_norm(x, store_.get("final_norm"), config_.norm_eps);
}

Tensor Model::forward(const TokenSeq& seq, AttentionCapture* capture) const {
  return forward(make_batch({seq}), capture);
}

Tensor Model::apply_head(const std::string& name, const Tensor& rows) const {
  const std::string p = "head." + name + ".";
  Tensor h = rows;
  if (head_layers(name) == 2)
    h = silu(add_row(matmul(rows, store_.get(p + "fc1.weight")), store_.get(p + "fc1.bias")));
  return add_row(matmul(h, store_.get(p + "fc2.weight")), store_.get(p + "fc2.bias"));
}

Tensor Model::decode_recon(const std::string& name, const Tensor& hidden,
                           const TokenBatch& batch) const {
  std::vector<std::size_t> rows(batch.offsets.begin(), batch.offsets.end() - 1);
  return apply_head(name, gather_rows(hidden, rows));
}

Tensor Model::decode_per_token(const std::string& name, const Tensor& hidden,
                               std::span<const std::size_t> rows) const {
  require(!rows.empty(), ErrorKind::Contract, "decode_per_token: empty position list");
  for (auto r : rows)
    require(r < hidden.rows(), ErrorKind::Contract, "decode_per_token: position out of range");
  return apply_head(name, gather_rows(hidden, rows));
}

}  // namespace pangaea
