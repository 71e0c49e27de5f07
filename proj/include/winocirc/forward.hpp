#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "winocirc/model.hpp"

namespace winocirc {

// Patchable values inside one encoder layer. query/key/value/transformation
// are head-scoped; residual_in and attention_output span the hidden width.
enum class Component { residual_in, query, key, value, transformation, attention_output };

std::string to_string(Component c);
Component parse_component(const std::string& s);
bool is_head_scoped(Component c);

inline constexpr int kAllHeads = -1;

struct ActivationSite {
  int layer = 0;
  int position = 0;
  Component component = Component::residual_in;
  // Head index, or kAllHeads for the concatenation over heads. Must be empty
  // for residual_in and attention_output.
  std::optional<int> head;

  bool operator==(const ActivationSite&) const = default;
};

std::string to_string(const ActivationSite& site);

// Width of the vector stored at `site`.
std::int64_t site_width(const ModelConfig& config, const ActivationSite& site);

class PatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Patch {
  ActivationSite site;
  std::vector<float> value;
};

// Replacement values keyed by site. Rejects two entries that touch the same
// concrete value (including a single head overlapping an all-heads entry).
class PatchSet {
 public:
  PatchSet() = default;

  void add(ActivationSite site, std::vector<float> value);
  void add(Patch patch) { add(std::move(patch.site), std::move(patch.value)); }

  const std::vector<Patch>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Patch> entries_;
};

// Row-major [rows x cols] f32 activations.
struct Activations {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> data;

  Activations() = default;
  Activations(std::int64_t r, std::int64_t c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0f) {}

  std::span<float> row(std::int64_t r) {
    return std::span<float>(data).subspan(static_cast<std::size_t>(r * cols),
                                          static_cast<std::size_t>(cols));
  }
  std::span<const float> row(std::int64_t r) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(r * cols),
                                                static_cast<std::size_t>(cols));
  }
  bool operator==(const Activations&) const = default;
};

struct LayerTrace {
  Activations residual_in;       // [T, H] after any patch
  Activations query;             // [T, H] heads concatenated
  Activations key;               // [T, H]
  Activations value;             // [T, H]
  std::vector<float> attention;  // [heads, T, T] softmax rows
  Activations transformation;    // [T, H] per-head context vectors, concatenated
  Activations attention_output;  // [T, H] output projection, before the residual add
  Activations residual_out;      // [T, H]

  bool operator==(const LayerTrace&) const = default;
};

struct ForwardTrace {
  std::int64_t length = 0;
  std::int64_t num_heads = 0;
  std::int64_t head_dim = 0;
  std::vector<LayerTrace> layers;
  Activations logits;  // [T, vocab]
  std::size_t applied_patches = 0;

  // Recorded value at `site` (the patched value when the site was patched).
  std::span<const float> site_value(const ActivationSite& site) const;
  float attention_weight(int layer, int head, int query, int key) const;
  // Log-softmax of the logits at `position`, accumulated in double.
  std::vector<double> log_probs(std::int64_t position) const;
  double log_prob(std::int64_t position, TokenId token) const;

  bool operator==(const ForwardTrace&) const = default;
};

class ForwardError : public std::runtime_error {
 public:
  enum class Kind { empty_input, too_long, bad_token, site_out_of_range, dimension_mismatch,
                    non_finite };

  ForwardError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Full masked-LM forward pass with patches applied where each value is
// produced, before anything downstream reads it.
ForwardTrace forward(const ModelBundle& model, std::span<const TokenId> tokens,
                     const PatchSet& patches = {});

// Max |a - b| / max |b| over two equally sized arrays.
double relative_error(std::span<const float> actual, std::span<const float> expected);

}  // namespace winocirc
