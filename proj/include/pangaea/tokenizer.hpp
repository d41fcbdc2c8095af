#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pangaea/params.hpp"
#include "pangaea/tensor.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

// Width of the text and point pre-embeddings; both are padded to kNumericPad.
inline constexpr std::size_t kPreEmbedDim = 256;

struct TokenizerConfig {
  std::size_t token_dim = 512;
  std::size_t topology_capacity = 1000;
  // 0 disables the word table (text input then raises a config error).
  std::size_t vocab_size = 4096;
  bool point_encoder = true;
  std::size_t point_hidden = 64;
};

struct TokenizerParams {
  TokenizerConfig config;
  Tensor numeric_weight;  // [768 x token_dim]
  Tensor numeric_bias;    // [token_dim]
  Tensor topology_table;  // [topology_capacity x token_dim]
  Tensor word_table;      // [vocab_size x 256]
  Tensor point_fc1_weight, point_fc1_bias, point_fc2_weight, point_fc2_bias;
  Tensor mask_token;   // [token_dim]
  Tensor recon_token;  // [token_dim]
};

// Registers every tokenizer tensor under the "tok." prefix.
TokenizerParams register_tokenizer(const TokenizerConfig& config, ParamStore& store,
                                   std::mt19937_64& rng, double init_std = 0.02);

Tensor embed_text_id(std::size_t id, const TokenizerParams& params);
Tensor embed_text_ids(std::span<const std::size_t> ids, const TokenizerParams& params);
// `group` holds k points as k*3 values. Shared per-point map then max-pool.
Tensor embed_point_group(std::span<const double> group, const TokenizerParams& params);
Tensor embed_point_groups(std::span<const double> groups, std::size_t n_groups,
                          const TokenizerParams& params);

// A token sequence ready for the transformer: row 0 is the reconstruction
// token, row j+1 is triplet j. positions[r] is the global index of row r.
struct TokenSeq {
  Tensor tokens;
  std::vector<std::size_t> positions;

  std::size_t length() const { return positions.size(); }
};

Tensor tokenize(const RawTriplet& triplet, ModalityKind modality, const TokenizerParams& params);
// All triplets of the set as rows, without the reconstruction token.
Tensor tokenize_triplets(const TripletSet& set, const TokenizerParams& params);
TokenSeq tokenize_set(const TripletSet& set, const TokenizerParams& params);

// Replaces the tokens of the listed triplets by the learnable mask token.
TokenSeq apply_token_mask(const TokenSeq& seq, std::span<const std::size_t> masked_triplets,
                          const TokenizerParams& params);

}  // namespace pangaea
