#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pangaea/params.hpp"
#include "pangaea/tensor.hpp"
#include "pangaea/tokenizer.hpp"

namespace pangaea {

enum class GlobalTopology { Rotary, Additive };

const char* global_topology_name(GlobalTopology g) noexcept;
GlobalTopology parse_global_topology(const std::string& name);

struct ModelConfig {
  std::size_t n_blocks = 8;
  std::size_t n_heads = 8;
  std::size_t token_dim = 512;
  std::size_t hidden_dim = 256;
  std::size_t intermediate_dim = 512;
  double rope_base = 10000.0;
  GlobalTopology global_topology = GlobalTopology::Rotary;
  // Rows of the additive position table; unused for rotary.
  std::size_t max_positions = 1024;
  std::size_t topology_capacity = 1000;
  std::size_t vocab_size = 4096;
  bool point_encoder = true;
  std::size_t point_hidden = 64;
  double norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t head_dim() const { return hidden_dim / n_heads; }
  TokenizerConfig tokenizer() const;
  void validate() const;

  static ModelConfig full();
  // 2 blocks, hidden 64, 4 heads, intermediate 128, vocabulary 512.
  static ModelConfig desk();
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Several token sequences stacked row-wise. Sequence s occupies rows
// [offsets[s], offsets[s+1]); attention never crosses sequences.
struct TokenBatch {
  Tensor tokens;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> offsets;

  std::size_t sequences() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t rows() const { return positions.size(); }
};

TokenBatch make_batch(const std::vector<TokenSeq>& seqs);

// Post-softmax attention of one sequence in one layer, [heads x T x T].
struct AttentionMap {
  std::size_t layer = 0;
  std::size_t sequence = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<double> weights;

  double at(std::size_t head, std::size_t query, std::size_t key) const {
    return weights[(head * tokens + query) * tokens + key];
  }
  // [T x T] average over heads.
  std::vector<double> head_mean() const;
};

struct AttentionCapture {
  std::vector<AttentionMap> maps;
};

struct ParamBreakdown {
  std::map<std::string, std::size_t> components;
  std::size_t total = 0;
};

class Model {
 public:
  explicit Model(const ModelConfig& config, std::uint64_t seed = 0);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  const TokenizerParams& tokenizer() const noexcept { return tok_; }
  const ParamStore& params() const noexcept { return store_; }
  std::vector<Tensor> parameters() const { return store_.tensors(); }
  std::mt19937_64& rng() noexcept { return rng_; }

  // Creates (or re-initializes) an MLP head: two layers hidden -> hidden -> out_dim
  // with silu between, or a single affine layer when layers == 1.
  void attach_head(const std::string& name, std::size_t out_dim, std::size_t layers = 2);
  bool has_head(const std::string& name) const;
  std::size_t head_out_dim(const std::string& name) const;
  std::size_t head_layers(const std::string& name) const;
  std::vector<std::string> head_names() const;
  // Sets the head's final layer weights and bias to zero.
  void zero_head_output(const std::string& name);
  // Parameters outside any head.
  std::vector<Tensor> body_parameters() const;
  std::vector<Tensor> head_parameters(const std::string& name) const;

  TokenSeq tokenize(const TripletSet& set) const { return tokenize_set(set, tok_); }

  // Hidden states [rows x hidden_dim] after the final norm.
  Tensor forward(const TokenBatch& batch, AttentionCapture* capture = nullptr) const;
  Tensor forward(const TokenSeq& seq, AttentionCapture* capture = nullptr) const;

  // Head applied to arbitrary hidden rows.
  Tensor apply_head(const std::string& name, const Tensor& rows) const;
  // Head applied to the reconstruction-token row of every sequence: [sequences x out].
  Tensor decode_recon(const std::string& name, const Tensor& hidden, const TokenBatch& batch) const;
  // Head applied row-wise to the listed hidden rows: [rows.size() x out].
  Tensor decode_per_token(const std::string& name, const Tensor& hidden,
                          std::span<const std::size_t> rows) const;

  std::size_t count_parameters() const { return store_.scalar_count(); }
  ParamBreakdown parameter_breakdown() const;

 private:
  Tensor block(std::size_t index, const Tensor& x, const TokenBatch& batch,
               AttentionCapture* capture) const;

  ModelConfig config_;
  ParamStore store_;
  TokenizerParams tok_;
  std::mt19937_64 rng_;
  struct HeadShape {
    std::size_t out_dim;
    std::size_t layers;
  };
  std::map<std::string, HeadShape> heads_;
};

// Component a parameter name belongs to, as used by parameter_breakdown.
std::string parameter_component(const std::string& name);

}  // namespace pangaea
