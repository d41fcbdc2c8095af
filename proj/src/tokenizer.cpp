#include "pangaea/tokenizer.hpp"

#include <string>

#include "pangaea/error.hpp"

namespace pangaea {

TokenizerParams register_tokenizer(const TokenizerConfig& config, ParamStore& store,
                                   std::mt19937_64& rng, double init_std) {
  require(config.token_dim > 0 && config.topology_capacity > 0, ErrorKind::Config,
          "tokenizer dimensions must be positive");
  TokenizerParams p;
  p.config = config;
  const std::size_t d = config.token_dim;
  p.numeric_weight = store.add_normal("tok.numeric.weight", {2 * kNumericPad, d}, init_std, rng);
  p.numeric_bias = store.add_zeros("tok.numeric.bias", {d});
  p.topology_table =
      store.add_normal("tok.topology", {config.topology_capacity, d}, init_std, rng);
  if (config.vocab_size > 0)
    p.word_table = store.add_normal("tok.word", {config.vocab_size, kPreEmbedDim}, init_std, rng);
  if (config.point_encoder) {
    const std::size_t h = config.point_hidden;
    p.point_fc1_weight = store.add_normal("tok.point.fc1.weight", {3, h}, init_std, rng);
    p.point_fc1_bias = store.add_zeros("tok.point.fc1.bias", {h});
    p.point_fc2_weight = store.add_normal("tok.point.fc2.weight", {h, kPreEmbedDim}, init_std, rng);
    p.point_fc2_bias = store.add_zeros("tok.point.fc2.bias", {kPreEmbedDim});
  }
  p.mask_token = store.add_normal("tok.mask_token", {d}, init_std, rng);
  p.recon_token = store.add_normal("tok.recon_token", {d}, init_std, rng);
  return p;
}

Tensor embed_text_ids(std::span<const std::size_t> ids, const TokenizerParams& params) {
  require(params.word_table.defined(), ErrorKind::Config, "text input needs a word table");
  const std::size_t vocab = params.config.vocab_size;
  for (auto id : ids)
    require(id < vocab, ErrorKind::Contract,
            "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
  return gather_rows(params.word_table, ids);
}

Tensor embed_text_id(std::size_t id, const TokenizerParams& params) {
  const std::size_t ids[] = {id};
  return reshape(embed_text_ids(ids, params), {kPreEmbedDim});
}

Tensor embed_point_groups(std::span<const double> groups, std::size_t n_groups,
                          const TokenizerParams& params) {
  require(params.point_fc1_weight.defined(), ErrorKind::Config,
          "point cloud input needs the point encoder");
  require(n_groups > 0 && !groups.empty() && groups.size() % (3 * n_groups) == 0,
          ErrorKind::Contract, "point groups must be non-empty k x 3 blocks");
  const std::size_t k = groups.size() / (3 * n_groups);
  auto points = Tensor::from({n_groups * k, 3}, std::vector<double>(groups.begin(), groups.end()));
  auto h = silu(add_row(matmul(points, params.point_fc1_weight), params.point_fc1_bias));
  auto per_point = add_row(matmul(h, params.point_fc2_weight), params.point_fc2_bias);
  return max_pool_rows(per_point, k);
}

Tensor embed_point_group(std::span<const double> group, const TokenizerParams& params) {
  return reshape(embed_point_groups(group, 1, params), {kPreEmbedDim});
}

namespace {

void check_locals(const RawTriplet& t, std::size_t capacity) {
  require(!t.local_indices.empty(), ErrorKind::Contract, "triplet without local topology");
  for (auto i : t.local_indices)
    require(i < capacity, ErrorKind::Capacity,
            "local topology index " + std::to_string(i) + " exceeds table capacity " +
                std::to_string(capacity));
}

Tensor pad_cols(const Tensor& part) {
  require(part.cols() <= kNumericPad, ErrorKind::Capacity,
          "numeric part of length " + std::to_string(part.cols()) + " exceeds padding " +
              std::to_string(kNumericPad));
  if (part.cols() == kNumericPad) return part;
  return concat_cols({part, Tensor::zeros({part.rows(), kNumericPad - part.cols()})});
}

// Numeric parts for the pre-embedded modalities, one row per triplet.
std::pair<Tensor, Tensor> pre_embedded_parts(const TripletSet& set, const TokenizerParams& params) {
  const std::size_t n = set.size();
  if (set.modality == ModalityKind::Text) {
    std::vector<std::size_t> a(n), b(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& t = set.triplets[j];
      require(t.num1.size() == 1 && t.num2.size() == 1, ErrorKind::Contract,
              "text triplets carry one id per part");
      a[j] = static_cast<std::size_t>(t.num1[0]);
      b[j] = static_cast<std::size_t>(t.num2[0]);
    }
    return {embed_text_ids(a, params), embed_text_ids(b, params)};
  }
  std::vector<double> a, b;
  for (const auto& t : set.triplets) {
    require(t.num1.size() == t.num2.size() && !t.num1.empty() && t.num1.size() % 3 == 0,
            ErrorKind::Contract, "point groups must be equal-sized k x 3 blocks");
    require(t.num1.size() == set.triplets.front().num1.size(), ErrorKind::Contract,
            "all point groups of a sample must hold the same number of points");
    a.insert(a.end(), t.num1.begin(), t.num1.end());
    b.insert(b.end(), t.num2.begin(), t.num2.end());
  }
  return {embed_point_groups(a, n, params), embed_point_groups(b, n, params)};
}

}  // namespace

Tensor tokenize_triplets(const TripletSet& set, const TokenizerParams& params) {
  const std::size_t n = set.size();
  require(n > 0, ErrorKind::Contract, "cannot tokenize an empty triplet set");
  std::vector<std::vector<std::size_t>> bags;
  bags.reserve(n);
  for (const auto& t : set.triplets) {
    check_locals(t, params.config.topology_capacity);
    bags.push_back(t.local_indices);
  }

  Tensor padded;
  if (set.modality == ModalityKind::Text || set.modality == ModalityKind::PointCloud) {
    auto [a, b] = pre_embedded_parts(set, params);
    padded = concat_cols({pad_cols(a), pad_cols(b)});
  } else {
    std::vector<double> rows(n * 2 * kNumericPad, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& t = set.triplets[j];
      for (const auto* part : {&t.num1, &t.num2})
        require(part->size() <= kNumericPad, ErrorKind::Capacity,
                "numeric part of length " + std::to_string(part->size()) + " exceeds padding " +
                    std::to_string(kNumericPad));
      double* row = rows.data() + j * 2 * kNumericPad;
      std::copy(t.num1.begin(), t.num1.end(), row);
      std::copy(t.num2.begin(), t.num2.end(), row + kNumericPad);
    }
    padded = Tensor::from({n, 2 * kNumericPad}, std::move(rows));
  }
  auto numeric = add_row(matmul(padded, params.numeric_weight), params.numeric_bias);
  return add(numeric, embedding_mean(params.topology_table, bags));
}

Tensor tokenize(const RawTriplet& triplet, ModalityKind modality, const TokenizerParams& params) {
  TripletSet one{modality, {triplet}, {}};
  return reshape(tokenize_triplets(one, params), {params.config.token_dim});
}

TokenSeq tokenize_set(const TripletSet& set, const TokenizerParams& params) {
  auto rows = tokenize_triplets(set, params);
  TokenSeq seq;
  seq.tokens = concat_rows({reshape(params.recon_token, {1, params.config.token_dim}), rows});
  seq.positions.resize(set.size() + 1);
  seq.positions[0] = 0;
  for (std::size_t j = 0; j < set.size(); ++j) seq.positions[j + 1] = set.triplets[j].global_index + 1;
  return seq;
}

TokenSeq apply_token_mask(const TokenSeq& seq, std::span<const std::size_t> masked_triplets,
                          const TokenizerParams& params) {
  const std::size_t n = seq.length();
  std::vector<std::size_t> pick(n);
  for (std::size_t r = 0; r < n; ++r) pick[r] = r;
  for (auto j : masked_triplets) {
    require(j + 1 < n, ErrorKind::Contract, "masked triplet index out of range");
    pick[j + 1] = n;
  }
  auto with_mask =
      concat_rows({seq.tokens, reshape(params.mask_token, {1, params.config.token_dim})});
  return {gather_rows(with_mask, pick), seq.positions};
}

}  // namespace pangaea
