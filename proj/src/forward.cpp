#include "winocirc/forward.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace winocirc {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXf>;

MatMap as_matrix(Activations& a) { return MatMap(a.data.data(), a.rows, a.cols); }
ConstMatMap as_matrix(const Activations& a) { return ConstMatMap(a.data.data(), a.rows, a.cols); }

ConstMatMap weight(std::span<const float> w, std::int64_t out, std::int64_t in) {
  return ConstMatMap(w.data(), out, in);
}

// out = in * W^T + b with W stored [out_dim, in_dim].
Activations linear(const Activations& in, std::span<const float> w, std::span<const float> b,
                   std::int64_t out_dim) {
  Activations out(in.rows, out_dim);
  as_matrix(out).noalias() = as_matrix(in) * weight(w, out_dim, in.cols).transpose();
  as_matrix(out).rowwise() += ConstVecMap(b.data(), out_dim);
  return out;
}

void layer_norm(Activations& x, std::span<const float> gain, std::span<const float> bias,
                double eps) {
  for (std::int64_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = static_cast<float>((row[i] - mean) * inv * gain[i] + bias[i]);
    }
  }
}

void activate(Activations& x, Activation kind) {
  if (kind == Activation::gelu) {
    for (auto& v : x.data) v = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
  } else {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    for (auto& v : x.data) {
      const double d = v;
      v = static_cast<float>(0.5 * d * (1.0 + std::tanh(k * (d + 0.044715 * d * d * d))));
    }
  }
}

// Patches grouped so each is applied right after its value is produced.
struct PatchIndex {
  std::vector<std::vector<const Patch*>> by_layer_component;  // [layer * 6 + component]

  explicit PatchIndex(std::int64_t layers) : by_layer_component(layers * 6) {}

  const std::vector<const Patch*>& at(std::int64_t layer, Component c) const {
    return by_layer_component[layer * 6 + static_cast<int>(c)];
  }
};

std::size_t apply(Activations& target, const std::vector<const Patch*>& patches,
                  std::int64_t head_dim) {
  for (const Patch* p : patches) {
    auto row = target.row(p->site.position);
    const int head = p->site.head.value_or(kAllHeads);
    const std::size_t offset = head == kAllHeads ? 0 : static_cast<std::size_t>(head * head_dim);
    std::copy(p->value.begin(), p->value.end(), row.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  return patches.size();
}

void check_finite(const Activations& a, int layer, const char* what) {
  for (std::int64_t r = 0; r < a.rows; ++r) {
    for (float v : a.row(r)) {
      if (!std::isfinite(v)) {
        throw ForwardError(ForwardError::Kind::non_finite,
                           fmt::format("non-finite {} at layer {} position {}", what, layer, r));
      }
    }
  }
}

}  // namespace

std::string to_string(Component c) {
  switch (c) {
    case Component::residual_in: return "residual_in";
    case Component::query: return "query";
    case Component::key: return "key";
    case Component::value: return "value";
    case Component::transformation: return "transformation";
    case Component::attention_output: return "attention_output";
  }
  return "unknown";
}

Component parse_component(const std::string& s) {
  for (auto c : {Component::residual_in, Component::query, Component::key, Component::value,
                 Component::transformation, Component::attention_output}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown component '" + s + "'");
}

bool is_head_scoped(Component c) {
  return c == Component::query || c == Component::key || c == Component::value ||
         c == Component::transformation;
}

std::string to_string(const ActivationSite& s) {
  std::string head;
  if (s.head) head = *s.head == kAllHeads ? " head=all" : fmt::format(" head={}", *s.head);
  return fmt::format("{} layer={} position={}{}", to_string(s.component), s.layer, s.position,
                     head);
}

std::int64_t site_width(const ModelConfig& config, const ActivationSite& site) {
  if (is_head_scoped(site.component) && site.head && *site.head != kAllHeads) {
    return config.head_dim;
  }
  return config.hidden_dim;
}

void PatchSet::add(ActivationSite site, std::vector<float> value) {
  if (is_head_scoped(site.component) != site.head.has_value()) {
    throw PatchError(fmt::format("site {}: head must be given iff the component is head-scoped",
                                 to_string(site)));
  }
  for (const auto& e : entries_) {
    const auto& o = e.site;
    if (o.layer != site.layer || o.position != site.position || o.component != site.component) {
      continue;
    }
    const bool overlap = !site.head || *site.head == kAllHeads || *o.head == kAllHeads ||
                         *o.head == *site.head;
    if (overlap) {
      throw PatchError(fmt::format("site {} overlaps an existing patch at {}", to_string(site),
                                   to_string(o)));
    }
  }
  entries_.push_back(Patch{std::move(site), std::move(value)});
}

std::span<const float> ForwardTrace::site_value(const ActivationSite& site) const {
  if (site.layer < 0 || site.layer >= static_cast<int>(layers.size()) || site.position < 0 ||
      site.position >= length) {
    throw ForwardError(ForwardError::Kind::site_out_of_range,
                       "site out of range: " + to_string(site));
  }
  const LayerTrace& lt = layers[static_cast<std::size_t>(site.layer)];
  const Activations* src = nullptr;
  switch (site.component) {
    case Component::residual_in: src = &lt.residual_in; break;
    case Component::query: src = &lt.query; break;
    case Component::key: src = &lt.key; break;
    case Component::value: src = &lt.value; break;
    case Component::transformation: src = &lt.transformation; break;
    case Component::attention_output: src = &lt.attention_output; break;
  }
  auto row = src->row(site.position);
  if (is_head_scoped(site.component) && site.head && *site.head != kAllHeads) {
    if (*site.head < 0 || *site.head >= num_heads) {
      throw ForwardError(ForwardError::Kind::site_out_of_range,
                         "head out of range: " + to_string(site));
    }
    return row.subspan(static_cast<std::size_t>(*site.head * head_dim),
                       static_cast<std::size_t>(head_dim));
  }
  return row;
}

float ForwardTrace::attention_weight(int layer, int head, int query, int key) const {
  const auto T = length;
  return layers.at(static_cast<std::size_t>(layer))
      .attention.at(static_cast<std::size_t>((head * T + query) * T + key));
}

std::vector<double> ForwardTrace::log_probs(std::int64_t position) const {
  auto row = logits.row(position);
  const double max = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float v : row) sum += std::exp(static_cast<double>(v) - max);
  const double log_z = max + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(row[i]) - log_z;
  return out;
}

double ForwardTrace::log_prob(std::int64_t position, TokenId token) const {
  return log_probs(position).at(static_cast<std::size_t>(token));
}

ForwardTrace forward(const ModelBundle& model, std::span<const TokenId> tokens,
                     const PatchSet& patches) {
  const ModelConfig& cfg = model.config();
  const auto T = static_cast<std::int64_t>(tokens.size());
  const auto H = cfg.hidden_dim, E = cfg.embedding_dim, NH = cfg.num_heads, D = cfg.head_dim;
  if (T == 0) throw ForwardError(ForwardError::Kind::empty_input, "empty token sequence");
  if (T > cfg.max_positions) {
    throw ForwardError(ForwardError::Kind::too_long,
                       fmt::format("{} tokens exceed max_positions {}", T, cfg.max_positions));
  }
  for (auto tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw ForwardError(ForwardError::Kind::bad_token, fmt::format("token id {} out of range", tok));
    }
  }

  PatchIndex index(cfg.num_layers);
  for (const Patch& p : patches.entries()) {
    const auto& s = p.site;
    const bool head_ok = !s.head || *s.head == kAllHeads || (*s.head >= 0 && *s.head < NH);
    if (s.layer < 0 || s.layer >= cfg.num_layers || s.position < 0 || s.position >= T ||
        !head_ok || is_head_scoped(s.component) != s.head.has_value()) {
      throw ForwardError(ForwardError::Kind::site_out_of_range,
                         "patch site out of range: " + to_string(s));
    }
    if (static_cast<std::int64_t>(p.value.size()) != site_width(cfg, s)) {
      throw ForwardError(ForwardError::Kind::dimension_mismatch,
                         fmt::format("patch at {} has {} values, site holds {}", to_string(s),
                                     p.value.size(), site_width(cfg, s)));
    }
    index.by_layer_component[s.layer * 6 + static_cast<int>(s.component)].push_back(&p);
  }

  ForwardTrace trace;
  trace.length = T;
  trace.num_heads = NH;
  trace.head_dim = D;
  trace.layers.resize(static_cast<std::size_t>(cfg.num_layers));

  // Embeddings.
  Activations emb(T, E);
  {
    auto word = model.tensor("embeddings.word").view();
    auto pos = model.tensor("embeddings.position").view();
    for (std::int64_t t = 0; t < T; ++t) {
      auto row = emb.row(t);
      const auto* w = word.data() + static_cast<std::size_t>(tokens[t]) * E;
      const auto* p = pos.data() + t * E;
      for (std::int64_t i = 0; i < E; ++i) row[i] = w[i] + p[i];
    }
    layer_norm(emb, model.tensor("embeddings.norm.weight").view(),
               model.tensor("embeddings.norm.bias").view(), cfg.layernorm_epsilon);
  }
  Activations x = cfg.has_embedding_projection()
                      ? linear(emb, model.tensor("embeddings.projection.weight").view(),
                               model.tensor("embeddings.projection.bias").view(), H)
                      : std::move(emb);

  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(D)));
  std::vector<double> scores(static_cast<std::size_t>(T));

  for (std::int64_t l = 0; l < cfg.num_layers; ++l) {
    LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];
    const LayerParams p = model.layer(l);

    trace.applied_patches += apply(x, index.at(l, Component::residual_in), D);
    lt.residual_in = x;

    lt.query = linear(x, p.query_w, p.query_b, H);
    trace.applied_patches += apply(lt.query, index.at(l, Component::query), D);
    lt.key = linear(x, p.key_w, p.key_b, H);
    trace.applied_patches += apply(lt.key, index.at(l, Component::key), D);
    lt.value = linear(x, p.value_w, p.value_b, H);
    trace.applied_patches += apply(lt.value, index.at(l, Component::value), D);

    lt.attention.assign(static_cast<std::size_t>(NH * T * T), 0.0f);
    lt.transformation = Activations(T, H);
    const auto Q = as_matrix(lt.query), K = as_matrix(lt.key), V = as_matrix(lt.value);
    auto ctx = as_matrix(lt.transformation);
    RowMat logits_h(T, T);
    for (std::int64_t h = 0; h < NH; ++h) {
      logits_h.noalias() =
          (Q.middleCols(h * D, D) * K.middleCols(h * D, D).transpose()) * scale;
      RowMat weights(T, T);
      for (std::int64_t q = 0; q < T; ++q) {
        double max = logits_h(q, 0);
        for (std::int64_t k = 1; k < T; ++k) max = std::max(max, static_cast<double>(logits_h(q, k)));
        double sum = 0.0;
        for (std::int64_t k = 0; k < T; ++k) {
          scores[k] = std::exp(static_cast<double>(logits_h(q, k)) - max);
          sum += scores[k];
        }
        for (std::int64_t k = 0; k < T; ++k) {
          const auto w = static_cast<float>(scores[k] / sum);
          weights(q, k) = w;
          lt.attention[static_cast<std::size_t>((h * T + q) * T + k)] = w;
        }
      }
      ctx.middleCols(h * D, D).noalias() = weights * V.middleCols(h * D, D);
    }
    trace.applied_patches += apply(lt.transformation, index.at(l, Component::transformation), D);

    lt.attention_output = linear(lt.transformation, p.attn_out_w, p.attn_out_b, H);
    trace.applied_patches +=
        apply(lt.attention_output, index.at(l, Component::attention_output), D);

    Activations h1 = x;
    as_matrix(h1) += as_matrix(lt.attention_output);
    layer_norm(h1, p.attn_norm_w, p.attn_norm_b, cfg.layernorm_epsilon);

    Activations inner = linear(h1, p.ffn_in_w, p.ffn_in_b, cfg.ffn_dim);
    activate(inner, cfg.activation);
    Activations out = linear(inner, p.ffn_out_w, p.ffn_out_b, H);
    as_matrix(out) += as_matrix(h1);
    layer_norm(out, p.ffn_norm_w, p.ffn_norm_b, cfg.layernorm_epsilon);
    check_finite(out, static_cast<int>(l), "residual_out");

    lt.residual_out = out;
    x = std::move(out);
  }

  Activations head = linear(x, model.tensor("mlm.dense.weight").view(),
                            model.tensor("mlm.dense.bias").view(), E);
  activate(head, cfg.activation);
  layer_norm(head, model.tensor("mlm.norm.weight").view(), model.tensor("mlm.norm.bias").view(),
             cfg.layernorm_epsilon);
  trace.logits = Activations(T, cfg.vocab_size);
  as_matrix(trace.logits).noalias() =
      as_matrix(head) * weight(model.tensor("embeddings.word").view(), cfg.vocab_size, E).transpose();
  as_matrix(trace.logits).rowwise() +=
      ConstVecMap(model.tensor("mlm.bias").view().data(), cfg.vocab_size);
  check_finite(trace.logits, static_cast<int>(cfg.num_layers), "logits");

  if (trace.applied_patches != patches.size()) {
    throw PatchError(fmt::format("applied {} of {} patches", trace.applied_patches,
                                 patches.size()));
  }
  return trace;
}

double relative_error(std::span<const float> actual, std::span<const float> expected) {
  if (actual.size() != expected.size()) {
    throw std::invalid_argument("relative_error: size mismatch");
  }
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(actual[i]) - expected[i]));
    scale = std::max(scale, std::abs(static_cast<double>(expected[i])));
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

}  // namespace winocirc
