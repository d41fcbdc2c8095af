#include "pangaea/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <optional>

#include "pangaea/error.hpp"
#include "pangaea/io.hpp"

namespace pangaea {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'C', 'K'};
constexpr std::size_t kPrefix = 4 + 4 + 8;

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

std::string head_of(const std::string& param) {
  if (param.rfind("head.", 0) != 0) return {};
  auto dot = param.find('.', 5);
  return param.substr(5, dot - 5);
}

nlohmann::ordered_json manifest_json(const CheckpointManifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "pangaea-checkpoint";
  j["version"] = m.version;
  j["config"] = model_config_to_json(m.config);
  j["heads"] = nlohmann::ordered_json::array();
  for (const auto& h : m.heads)
    j["heads"].push_back({{"name", h.name}, {"out_dim", h.out_dim}, {"layers", h.layers}});
  j["step"] = m.step;
  j["rng_state"] = m.rng_state;
  j["extra"] = m.extra;
  j["params"] = nlohmann::ordered_json::array();
  for (const auto& p : m.params)
    j["params"].push_back({{"name", p.name}, {"shape", p.shape}, {"offset", p.offset}});
  return j;
}

CheckpointManifest manifest_from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  m.version = j.at("version").get<std::uint32_t>();
  m.config = model_config_from_json(j.at("config"));
  for (const auto& h : j.at("heads"))
    m.heads.push_back({h.at("name").get<std::string>(), h.at("out_dim").get<std::size_t>(),
                       h.at("layers").get<std::size_t>()});
  m.step = j.at("step").get<std::size_t>();
  m.rng_state = j.at("rng_state").get<std::string>();
  m.extra = j.at("extra");
  require(m.extra.is_object(), ErrorKind::Format, "checkpoint extra must be an object");
  for (const auto& p : j.at("params"))
    m.params.push_back({p.at("name").get<std::string>(), p.at("shape").get<Shape>(),
                        p.at("offset").get<std::uint64_t>()});
  return m;
}

struct Parsed {
  CheckpointManifest manifest;
  std::string_view payload;
};

Parsed parse(const std::string& bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::Format,
          "not a checkpoint (bad magic)");
  require(bytes.size() >= kPrefix, ErrorKind::Truncated, "checkpoint header is truncated");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  require(version == kCheckpointVersion, ErrorKind::Version,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto mlen = get_le<std::uint64_t>(bytes, 8);
  require(mlen <= bytes.size() && kPrefix + mlen + 8 <= bytes.size(), ErrorKind::Truncated,
          "checkpoint manifest is truncated");
  std::optional<CheckpointManifest> m;
  std::string parse_error;
  try {
    m = manifest_from_json(nlohmann::json::parse(bytes.substr(kPrefix, mlen)));
  } catch (const nlohmann::json::exception& e) {
    parse_error = e.what();
  } catch (const Error& e) {
    parse_error = e.what();
  }
  std::uint64_t payload_size = 0;
  if (m)
    for (const auto& p : m->params) {
      require(p.offset == payload_size, ErrorKind::Format,
              "parameter '" + p.name + "' has a non-contiguous offset");
      payload_size += shape_size(p.shape) * 4;
    }
  require(!m || kPrefix + mlen + payload_size + 8 <= bytes.size(), ErrorKind::Truncated,
          "checkpoint payload is truncated");
  const std::size_t body = bytes.size() - 8;
  const auto stored = get_le<std::uint64_t>(bytes, body);
  require(stored == fnv1a64(std::string_view(bytes).substr(0, body)), ErrorKind::Checksum,
          "checkpoint checksum mismatch");
  require(m.has_value(), ErrorKind::Format, "checkpoint manifest is malformed: " + parse_error);
  require(m->version == version, ErrorKind::Format, "manifest version disagrees with header");
  require(kPrefix + mlen + payload_size + 8 == bytes.size(), ErrorKind::Format,
          "checkpoint payload has trailing bytes");
  std::string_view payload = std::string_view(bytes).substr(kPrefix + mlen, payload_size);
  return {std::move(*m), payload};
}

void copy_into(const Parsed& parsed, Model& model) {
  const auto& store = model.params();
  for (const auto& p : parsed.manifest.params)
    require(store.contains(p.name), ErrorKind::Shape,
            "parameter '" + p.name + "' does not exist in the target model");
  for (const auto& e : store.entries()) {
    auto it = std::find_if(parsed.manifest.params.begin(), parsed.manifest.params.end(),
                           [&](const CheckpointParam& p) { return p.name == e.name; });
    require(it != parsed.manifest.params.end(), ErrorKind::Shape,
            "parameter '" + e.name + "' is missing from the checkpoint");
    require(it->shape == e.value.shape(), ErrorKind::Shape,
            "parameter '" + e.name + "' has shape " + shape_string(it->shape) +
                " in the checkpoint but " + shape_string(e.value.shape()) + " in the model");
  }
  for (const auto& p : parsed.manifest.params) {
    Tensor t = store.get(p.name);
    auto out = t.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      float f;
      std::memcpy(&f, parsed.payload.data() + p.offset + 4 * i, 4);
      out[i] = static_cast<double>(f);
    }
  }
}

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  return {{"n_blocks", c.n_blocks},
          {"n_heads", c.n_heads},
          {"token_dim", c.token_dim},
          {"hidden_dim", c.hidden_dim},
          {"intermediate_dim", c.intermediate_dim},
          {"rope_base", c.rope_base},
          {"global_topology", global_topology_name(c.global_topology)},
          {"max_positions", c.max_positions},
          {"topology_capacity", c.topology_capacity},
          {"vocab_size", c.vocab_size},
          {"point_encoder", c.point_encoder},
          {"point_hidden", c.point_hidden},
          {"norm_eps", c.norm_eps},
          {"init_std", c.init_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Config, "model config must be a JSON object");
  ModelConfig c = ModelConfig::desk();
  if (j.contains("preset")) {
    require(j["preset"].is_string(), ErrorKind::Config, "model preset must be a string");
    const auto name = j["preset"].get<std::string>();
    require(name == "desk" || name == "full", ErrorKind::Config,
            "unknown model preset '" + name + "'");
    c = name == "full" ? ModelConfig::full() : ModelConfig::desk();
  }
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "preset") {
        continue;
      } else if (key == "n_blocks") c.n_blocks = value.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
      else if (key == "token_dim") c.token_dim = value.get<std::size_t>();
      else if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
      else if (key == "intermediate_dim") c.intermediate_dim = value.get<std::size_t>();
      else if (key == "rope_base") c.rope_base = value.get<double>();
      else if (key == "global_topology")
        c.global_topology = parse_global_topology(value.get<std::string>());
      else if (key == "max_positions") c.max_positions = value.get<std::size_t>();
      else if (key == "topology_capacity") c.topology_capacity = value.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "point_encoder") c.point_encoder = value.get<bool>();
      else if (key == "point_hidden") c.point_hidden = value.get<std::size_t>();
      else if (key == "norm_eps") c.norm_eps = value.get<double>();
      else if (key == "init_std") c.init_std = value.get<double>();
      else throw Error(ErrorKind::Config, "unknown model config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Config, "model config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string checkpoint_bytes(const Model& model, std::size_t step, const std::string& rng_state,
                             const nlohmann::json& extra) {
  require(extra.is_object(), ErrorKind::Contract, "checkpoint extra must be an object");
  CheckpointManifest m;
  m.extra = extra;
  m.config = model.config();
  m.step = step;
  m.rng_state = rng_state;
  std::uint64_t offset = 0;
  for (const auto& e : model.params().entries()) {
    m.params.push_back({e.name, e.value.shape(), offset});
    offset += e.value.size() * 4;
    auto head = head_of(e.name);
    if (!head.empty() && std::none_of(m.heads.begin(), m.heads.end(),
                                      [&](const CheckpointHead& h) { return h.name == head; }))
      m.heads.push_back({head, model.head_out_dim(head), model.head_layers(head)});
  }
  const std::string manifest = manifest_json(m).dump();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, m.version);
  put_le<std::uint64_t>(out, manifest.size());
  out += manifest;
  out.reserve(out.size() + offset + 8);
  for (const auto& e : model.params().entries())
    for (double v : e.value.data()) put_le<float>(out, static_cast<float>(v));
  put_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::size_t step,
                     const std::string& rng_state, const nlohmann::json& extra) {
  write_file_atomic(path, checkpoint_bytes(model, step, rng_state, extra));
}

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  return parse(read_file(path)).manifest;
}

LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  auto parsed = parse(bytes);
  auto model = std::make_unique<Model>(parsed.manifest.config, 0);
  for (const auto& h : parsed.manifest.heads) model->attach_head(h.name, h.out_dim, h.layers);
  copy_into(parsed, *model);
  return {std::move(parsed.manifest), std::move(model)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

CheckpointManifest load_checkpoint_into(const std::filesystem::path& path, Model& model) {
  const std::string bytes = read_file(path);
  auto parsed = parse(bytes);
  copy_into(parsed, model);
  return parsed.manifest;
}

}  // namespace pangaea
