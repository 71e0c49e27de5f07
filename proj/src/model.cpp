#include "winocirc/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace winocirc {

using nlohmann::json;

namespace {

constexpr char kMagic[] = {'C', 'P', 'R', 'B', '1'};
constexpr std::size_t kMagicSize = sizeof(kMagic);

static_assert(std::endian::native == std::endian::little,
              "archive payloads are read in place as little-endian f32");

LayerSharing parse_sharing(const std::string& s) {
  if (s == "tied") return LayerSharing::tied;
  if (s == "untied") return LayerSharing::untied;
  throw ConfigError("unknown layer_sharing '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "gelu_tanh") return Activation::gelu_tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"hidden_dim", c.hidden_dim},
              {"embedding_dim", c.embedding_dim},
              {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"head_dim", c.head_dim},
              {"ffn_dim", c.ffn_dim},
              {"max_positions", c.max_positions},
              {"layer_sharing", to_string(c.layer_sharing)},
              {"mask_token_id", c.mask_token_id},
              {"layernorm_epsilon", c.layernorm_epsilon},
              {"activation", to_string(c.activation)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::int64_t>();
  c.num_layers = j.at("num_layers").get<std::int64_t>();
  c.num_heads = j.at("num_heads").get<std::int64_t>();
  c.head_dim = j.at("head_dim").get<std::int64_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
  c.max_positions = j.at("max_positions").get<std::int64_t>();
  c.layer_sharing = parse_sharing(j.at("layer_sharing").get<std::string>());
  c.mask_token_id = j.at("mask_token_id").get<TokenId>();
  c.layernorm_epsilon = j.at("layernorm_epsilon").get<double>();
  c.activation = parse_activation(j.value("activation", std::string("gelu_tanh")));
  return c;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
  return fmt::format("[{}]", fmt::join(shape, ", "));
}

void validate_tensors(const ModelConfig& config, const std::map<std::string, Tensor>& tensors) {
  const auto required = required_tensors(config);
  for (const auto& [name, shape] : required) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw LoadError(LoadError::Kind::missing_tensor, name, "missing tensor '" + name + "'");
    }
    if (it->second.shape != shape) {
      throw LoadError(LoadError::Kind::shape_mismatch, name,
                      fmt::format("tensor '{}' has shape {}, expected {}", name,
                                  shape_string(it->second.shape), shape_string(shape)));
    }
    if (static_cast<std::int64_t>(it->second.data.size()) != it->second.numel()) {
      throw LoadError(LoadError::Kind::shape_mismatch, name,
                      fmt::format("tensor '{}' holds {} values for shape {}", name,
                                  it->second.data.size(), shape_string(shape)));
    }
    const auto& d = it->second.data;
    auto bad = std::find_if(d.begin(), d.end(), [](float v) { return !std::isfinite(v); });
    if (bad != d.end()) {
      throw LoadError(LoadError::Kind::non_finite, name,
                      fmt::format("tensor '{}' has a non-finite value at flat index {}", name,
                                  std::distance(d.begin(), bad)));
    }
  }
  for (const auto& [name, t] : tensors) {
    if (!required.contains(name)) {
      throw LoadError(LoadError::Kind::unexpected_tensor, name,
                      "tensor '" + name + "' is not part of this configuration");
    }
  }
}

// Portable standard-normal draws (std::normal_distribution is not
// bit-reproducible across standard libraries).
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

std::string to_string(LayerSharing s) { return s == LayerSharing::tied ? "tied" : "untied"; }

std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "gelu_tanh"; }

std::string to_string(LoadError::Kind k) {
  switch (k) {
    case LoadError::Kind::bad_magic: return "bad_magic";
    case LoadError::Kind::truncated: return "truncated";
    case LoadError::Kind::bad_header: return "bad_header";
    case LoadError::Kind::config_invalid: return "config_invalid";
    case LoadError::Kind::missing_tensor: return "missing_tensor";
    case LoadError::Kind::unexpected_tensor: return "unexpected_tensor";
    case LoadError::Kind::shape_mismatch: return "shape_mismatch";
    case LoadError::Kind::non_finite: return "non_finite";
  }
  return "unknown";
}

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) throw ConfigError(fmt::format("{} must be positive, got {}", name, v));
  };
  positive(vocab_size, "vocab_size");
  positive(hidden_dim, "hidden_dim");
  positive(embedding_dim, "embedding_dim");
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(head_dim, "head_dim");
  positive(ffn_dim, "ffn_dim");
  positive(max_positions, "max_positions");
  if (hidden_dim % num_heads != 0) {
    throw ConfigError(fmt::format("hidden_dim {} is not divisible by num_heads {}", hidden_dim,
                                  num_heads));
  }
  if (num_heads * head_dim != hidden_dim) {
    throw ConfigError(fmt::format("num_heads {} x head_dim {} != hidden_dim {}", num_heads,
                                  head_dim, hidden_dim));
  }
  if (mask_token_id < 0 || mask_token_id >= vocab_size) {
    throw ConfigError(fmt::format("mask_token_id {} outside vocabulary of {}", mask_token_id,
                                  vocab_size));
  }
  if (!(layernorm_epsilon > 0.0) || !std::isfinite(layernorm_epsilon)) {
    throw ConfigError("layernorm_epsilon must be a small positive real");
  }
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string layer_prefix(const ModelConfig& config, std::int64_t layer) {
  const std::int64_t set = config.layer_sharing == LayerSharing::tied ? 0 : layer;
  return fmt::format("layers.{}.", set);
}

std::map<std::string, std::vector<std::int64_t>> required_tensors(const ModelConfig& c) {
  const auto V = c.vocab_size, E = c.embedding_dim, H = c.hidden_dim, F = c.ffn_dim;
  std::map<std::string, std::vector<std::int64_t>> req{
      {"embeddings.word", {V, E}},
      {"embeddings.position", {c.max_positions, E}},
      {"embeddings.norm.weight", {E}},
      {"embeddings.norm.bias", {E}},
      {"mlm.dense.weight", {E, H}},
      {"mlm.dense.bias", {E}},
      {"mlm.norm.weight", {E}},
      {"mlm.norm.bias", {E}},
      {"mlm.bias", {V}},
  };
  if (c.has_embedding_projection()) {
    req["embeddings.projection.weight"] = {H, E};
    req["embeddings.projection.bias"] = {H};
  }
  for (std::int64_t s = 0; s < c.parameter_sets(); ++s) {
    const std::string p = fmt::format("layers.{}.", s);
    for (const char* proj : {"query", "key", "value", "output"}) {
      req[p + "attention." + proj + ".weight"] = {H, H};
      req[p + "attention." + proj + ".bias"] = {H};
    }
    req[p + "attention.norm.weight"] = {H};
    req[p + "attention.norm.bias"] = {H};
    req[p + "ffn.intermediate.weight"] = {F, H};
    req[p + "ffn.intermediate.bias"] = {F};
    req[p + "ffn.output.weight"] = {H, F};
    req[p + "ffn.output.bias"] = {H};
    req[p + "ffn.norm.weight"] = {H};
    req[p + "ffn.norm.bias"] = {H};
  }
  return req;
}

ModelBundle::ModelBundle(ModelConfig config, std::map<std::string, Tensor> tensors,
                         std::string provenance)
    : config_(std::move(config)), tensors_(std::move(tensors)), provenance_(std::move(provenance)) {
  try {
    config_.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::config_invalid, "config", e.what());
  }
  validate_tensors(config_, tensors_);
}

const Tensor& ModelBundle::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw LoadError(LoadError::Kind::missing_tensor, name, "missing tensor '" + name + "'");
  }
  return it->second;
}

Tensor& ModelBundle::mutable_tensor(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).tensor(name));
}

LayerParams ModelBundle::layer(std::int64_t index) const {
  const std::string p = layer_prefix(config_, index);
  auto v = [&](const char* suffix) { return tensor(p + suffix).view(); };
  return LayerParams{
      v("attention.query.weight"),   v("attention.query.bias"),
      v("attention.key.weight"),     v("attention.key.bias"),
      v("attention.value.weight"),   v("attention.value.bias"),
      v("attention.output.weight"),  v("attention.output.bias"),
      v("attention.norm.weight"),    v("attention.norm.bias"),
      v("ffn.intermediate.weight"),  v("ffn.intermediate.bias"),
      v("ffn.output.weight"),        v("ffn.output.bias"),
      v("ffn.norm.weight"),          v("ffn.norm.bias"),
  };
}

std::span<const float> ModelBundle::word_embedding(TokenId token) const {
  if (token < 0 || token >= config_.vocab_size) {
    throw std::out_of_range(fmt::format("token id {} outside vocabulary", token));
  }
  const auto E = static_cast<std::size_t>(config_.embedding_dim);
  return tensor("embeddings.word").view().subspan(static_cast<std::size_t>(token) * E, E);
}

ModelBundle load_model(std::istream& archive) {
  const std::string bytes{std::istreambuf_iterator<char>(archive), std::istreambuf_iterator<char>()};
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
    throw LoadError(LoadError::Kind::bad_magic, "", "archive does not start with CPRB1 magic");
  }
  if (bytes.size() < kMagicSize + 8) {
    throw LoadError(LoadError::Kind::truncated, "", "archive truncated inside header length");
  }
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) {
    header_len = (header_len << 8) | static_cast<unsigned char>(bytes[kMagicSize + i]);
  }
  const std::size_t header_start = kMagicSize + 8;
  if (header_len > bytes.size() - header_start) {
    throw LoadError(LoadError::Kind::truncated, "",
                    fmt::format("archive declares a {}-byte header but holds {} bytes", header_len,
                                bytes.size() - header_start));
  }
  json header;
  try {
    header = json::parse(bytes.begin() + header_start,
                         bytes.begin() + header_start + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, "", std::string("malformed header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("__config__")) {
    throw LoadError(LoadError::Kind::bad_header, "__config__", "header lacks __config__");
  }
  ModelConfig config;
  try {
    config = config_from_json(header.at("__config__"));
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, "__config__",
                    std::string("malformed config: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::config_invalid, "__config__", e.what());
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::config_invalid, "__config__", e.what());
  }
  const std::string provenance = header.value("__provenance__", std::string());

  const std::size_t payload_start = header_start + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, entry] : header.items()) {
    if (name.starts_with("__")) continue;
    Tensor t;
    std::uint64_t offset = 0;
    try {
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw LoadError(LoadError::Kind::bad_header, name, "tensor '" + name + "' is not f32");
      }
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      offset = entry.at("byte_offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw LoadError(LoadError::Kind::bad_header, name,
                      "malformed entry for '" + name + "': " + e.what());
    }
    if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d < 0; })) {
      throw LoadError(LoadError::Kind::bad_header, name, "negative dimension in '" + name + "'");
    }
    const auto count = static_cast<std::uint64_t>(t.numel());
    const std::uint64_t nbytes = count * sizeof(float);
    if (offset > payload_size || nbytes > payload_size - offset) {
      throw LoadError(LoadError::Kind::truncated, name,
                      fmt::format("payload ends before tensor '{}' (needs bytes {}..{}, have {})",
                                  name, offset, offset + nbytes, payload_size));
    }
    t.data.resize(count);
    std::memcpy(t.data.data(), bytes.data() + payload_start + offset, nbytes);
    tensors.emplace(name, std::move(t));
  }
  return ModelBundle(std::move(config), std::move(tensors), provenance);
}

ModelBundle load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model archive '" + path + "'");
  return load_model(in);
}

void save_model(const ModelBundle& model, std::ostream& out) {
  json header = json::object();
  header["__config__"] = config_to_json(model.config());
  header["__provenance__"] = model.provenance();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.tensors()) {
    header[name] = json{{"dtype", "f32"}, {"shape", t.shape}, {"byte_offset", offset}};
    offset += t.data.size() * sizeof(float);
  }
  const std::string text = header.dump();
  out.write(kMagic, kMagicSize);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : model.tensors()) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing model archive");
}

void save_model_file(const ModelBundle& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create model archive '" + path + "'");
  save_model(model, out);
}

ModelBundle generate_toy_model(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  NormalSource normal(seed);
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, shape] : required_tensors(config)) {
    Tensor t;
    t.shape = shape;
    t.data.resize(static_cast<std::size_t>(t.numel()));
    const bool is_norm_gain = name.ends_with("norm.weight");
    const bool is_vector = shape.size() == 1;
    double scale = 0.02;
    if (name.starts_with("embeddings.word") || name.starts_with("embeddings.position")) {
      scale = 1.0;
    } else if (!is_vector) {
      scale = 1.0 / std::sqrt(static_cast<double>(shape[1]));
    } else if (is_norm_gain) {
      scale = 0.1;
    }
    for (auto& v : t.data) {
      v = static_cast<float>((is_norm_gain ? 1.0 : 0.0) + scale * normal.next());
    }
    tensors.emplace(name, std::move(t));
  }
  return ModelBundle(config, std::move(tensors), fmt::format("toy model, seed {}", seed));
}

ModelConfig toy_config(LayerSharing sharing) {
  ModelConfig c;
  c.vocab_size = 64;
  c.hidden_dim = 32;
  c.embedding_dim = 16;
  c.num_layers = 2;
  c.num_heads = 4;
  c.head_dim = 8;
  c.ffn_dim = 64;
  c.max_positions = 32;
  c.layer_sharing = sharing;
  c.mask_token_id = 3;
  c.layernorm_epsilon = 1e-12;
  c.activation = Activation::gelu_tanh;
  return c;
}

}  // namespace winocirc
