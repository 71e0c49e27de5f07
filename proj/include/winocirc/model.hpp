#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace winocirc {

using TokenId = std::int32_t;

enum class LayerSharing { tied, untied };
enum class Activation { gelu, gelu_tanh };

std::string to_string(LayerSharing s);
std::string to_string(Activation a);

struct ModelConfig {
  std::int64_t vocab_size = 0;
  std::int64_t hidden_dim = 0;
  std::int64_t embedding_dim = 0;
  std::int64_t num_layers = 0;
  std::int64_t num_heads = 0;
  std::int64_t head_dim = 0;
  std::int64_t ffn_dim = 0;
  std::int64_t max_positions = 0;
  LayerSharing layer_sharing = LayerSharing::tied;
  TokenId mask_token_id = 0;
  double layernorm_epsilon = 1e-12;
  Activation activation = Activation::gelu_tanh;

  // Number of distinct per-layer parameter sets stored in an archive.
  std::int64_t parameter_sets() const {
    return layer_sharing == LayerSharing::tied ? 1 : num_layers;
  }
  bool has_embedding_projection() const { return embedding_dim != hidden_dim; }

  // Throws ConfigError on the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Dense row-major f32 array.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
  std::span<const float> view() const { return data; }
  bool operator==(const Tensor&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public std::runtime_error {
 public:
  enum class Kind {
    bad_magic,
    truncated,
    bad_header,
    config_invalid,
    missing_tensor,
    unexpected_tensor,
    shape_mismatch,
    non_finite,
  };

  LoadError(Kind kind, std::string subject, const std::string& what)
      : std::runtime_error(what), kind_(kind), subject_(std::move(subject)) {}

  Kind kind() const { return kind_; }
  // Tensor name (or header field) the error refers to, when there is one.
  const std::string& subject() const { return subject_; }

 private:
  Kind kind_;
  std::string subject_;
};

std::string to_string(LoadError::Kind k);

// Read-only views of one encoder layer's parameters.
struct LayerParams {
  std::span<const float> query_w, query_b;
  std::span<const float> key_w, key_b;
  std::span<const float> value_w, value_b;
  std::span<const float> attn_out_w, attn_out_b;
  std::span<const float> attn_norm_w, attn_norm_b;
  std::span<const float> ffn_in_w, ffn_in_b;
  std::span<const float> ffn_out_w, ffn_out_b;
  std::span<const float> ffn_norm_w, ffn_norm_b;
};

// Canonical tensor names and shapes required by a configuration.
std::map<std::string, std::vector<std::int64_t>> required_tensors(const ModelConfig& config);

// Prefix of the parameter set used by `layer` ("layers.0." for every layer
// of a tied model).
std::string layer_prefix(const ModelConfig& config, std::int64_t layer);

class ModelBundle {
 public:
  ModelBundle() = default;
  // Validates names, shapes and finiteness.
  ModelBundle(ModelConfig config, std::map<std::string, Tensor> tensors, std::string provenance);

  const ModelConfig& config() const { return config_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const std::string& provenance() const { return provenance_; }

  const Tensor& tensor(const std::string& name) const;
  // Mutable access for fixtures that perturb weights in place.
  Tensor& mutable_tensor(const std::string& name);

  LayerParams layer(std::int64_t index) const;

  // Row `token` of the word embedding table.
  std::span<const float> word_embedding(TokenId token) const;

 private:
  ModelConfig config_;
  std::map<std::string, Tensor> tensors_;
  std::string provenance_;
};

// Tensor archive: "CPRB1", u64 LE header length, JSON header, raw LE payload.
ModelBundle load_model(std::istream& archive);
ModelBundle load_model_file(const std::string& path);
void save_model(const ModelBundle& model, std::ostream& out);
void save_model_file(const ModelBundle& model, const std::string& path);

// Deterministic random weights for tests and demos.
ModelBundle generate_toy_model(std::uint64_t seed, const ModelConfig& config);

// A small valid configuration (vocab 64, 2 layers, 4 heads, hidden 32).
ModelConfig toy_config(LayerSharing sharing = LayerSharing::tied);

}  // namespace winocirc
