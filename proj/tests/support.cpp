#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace testing {

namespace {

using Matrix = std::vector<std::vector<double>>;

const std::vector<float>& T(const ModelBundle& m, const std::string& name) {
  return m.tensor(name).data;
}

// y[t][o] = sum_i x[t][i] * w[o][i] + b[o]
Matrix dense(const Matrix& x, const std::vector<float>& w, const std::vector<float>& b, std::size_t out) {
  const std::size_t in = x.front().size();
  Matrix y(x.size(), std::vector<double>(out));
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[t][i] * static_cast<double>(w[o * in + i]);
      y[t][o] = acc;
    }
  }
  return y;
}

void norm(Matrix& x, const std::vector<float>& g, const std::vector<float>& b, double eps) {
  for (auto& row : x) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = (row[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
    }
  }
}

double act(double v, winocirc::Activation a) {
  if (a == winocirc::Activation::gelu) return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
}

void add(Matrix& x, const Matrix& y) {
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t i = 0; i < x[t].size(); ++i) x[t][i] += y[t][i];
  }
}

}  // namespace

Matrix naive_logits(const ModelBundle& model, const std::vector<TokenId>& tokens) {
  const auto& c = model.config();
  const auto n = tokens.size();
  const auto E = static_cast<std::size_t>(c.embedding_dim), H = static_cast<std::size_t>(c.hidden_dim);
  const auto F = static_cast<std::size_t>(c.ffn_dim), V = static_cast<std::size_t>(c.vocab_size);
  const auto heads = static_cast<std::size_t>(c.num_heads), d = static_cast<std::size_t>(c.head_dim);

  Matrix x(n, std::vector<double>(E));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < E; ++i) {
      x[t][i] = static_cast<double>(T(model, "embeddings.word")[static_cast<std::size_t>(tokens[t]) * E + i]) +
                static_cast<double>(T(model, "embeddings.position")[t * E + i]);
    }
  }
  norm(x, T(model, "embeddings.norm.weight"), T(model, "embeddings.norm.bias"), c.layernorm_epsilon);
  if (E != H) x = dense(x, T(model, "embeddings.projection.weight"), T(model, "embeddings.projection.bias"), H);

  for (std::int64_t layer = 0; layer < c.num_layers; ++layer) {
    const std::string p =
        "layers." + std::to_string(c.layer_sharing == winocirc::LayerSharing::tied ? 0 : layer) + ".";
    const Matrix q = dense(x, T(model, p + "attention.query.weight"), T(model, p + "attention.query.bias"), H);
    const Matrix k = dense(x, T(model, p + "attention.key.weight"), T(model, p + "attention.key.bias"), H);
    const Matrix v = dense(x, T(model, p + "attention.value.weight"), T(model, p + "attention.value.bias"), H);
    Matrix ctx(n, std::vector<double>(H, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < d; ++e) dot += q[i][h * d + e] * k[j][h * d + e];
          s[j] = dot / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& sj : s) z += (sj = std::exp(sj - mx));
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t e = 0; e < d; ++e) ctx[i][h * d + e] += s[j] / z * v[j][h * d + e];
        }
      }
    }
    Matrix a = dense(ctx, T(model, p + "attention.output.weight"), T(model, p + "attention.output.bias"), H);
    add(a, x);
    norm(a, T(model, p + "attention.norm.weight"), T(model, p + "attention.norm.bias"), c.layernorm_epsilon);
    Matrix f = dense(a, T(model, p + "ffn.intermediate.weight"), T(model, p + "ffn.intermediate.bias"), F);
    for (auto& row : f) {
      for (auto& e : row) e = act(e, c.activation);
    }
    Matrix o = dense(f, T(model, p + "ffn.output.weight"), T(model, p + "ffn.output.bias"), H);
    add(o, a);
    norm(o, T(model, p + "ffn.norm.weight"), T(model, p + "ffn.norm.bias"), c.layernorm_epsilon);
    x = o;
  }

  Matrix h = dense(x, T(model, "mlm.dense.weight"), T(model, "mlm.dense.bias"), E);
  for (auto& row : h) {
    for (auto& e : row) e = act(e, c.activation);
  }
  norm(h, T(model, "mlm.norm.weight"), T(model, "mlm.norm.bias"), c.layernorm_epsilon);
  return dense(h, T(model, "embeddings.word"), T(model, "mlm.bias"), V);
}

std::vector<double> naive_log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  std::vector<double> out;
  for (double l : logits) out.push_back(l - mx - std::log(z));
  return out;
}

double naive_np_score(const ModelBundle& model, const std::vector<TokenId>& tokens,
                      winocirc::Span mask_span, const std::vector<TokenId>& np) {
  std::vector<TokenId> s(tokens.begin(), tokens.begin() + mask_span.start);
  for (std::size_t i = 0; i < np.size(); ++i) s.push_back(model.config().mask_token_id);
  s.insert(s.end(), tokens.begin() + mask_span.end, tokens.end());
  double total = 0.0;
  for (std::size_t i = 0; i < np.size(); ++i) {
    const auto logits = naive_logits(model, s);
    total += naive_log_softmax(logits[static_cast<std::size_t>(mask_span.start) + i])[static_cast<std::size_t>(np[i])];
  }
  return total / static_cast<double>(np.size());
}

std::vector<TokenId> random_sentence(std::mt19937_64& rng, const winocirc::ModelConfig& cfg, int length) {
  std::uniform_int_distribution<TokenId> pick(4, static_cast<TokenId>(cfg.vocab_size - 1));
  std::vector<TokenId> s(static_cast<std::size_t>(length));
  for (auto& t : s) t = pick(rng);
  return s;
}

double logits_error(const winocirc::Activations& actual, const winocirc::Activations& expected) {
  return winocirc::relative_error(actual.data, expected.data);
}

winocirc::PatchSet layer0_swap(const winocirc::ForwardTrace& source) {
  winocirc::PatchSet ps;
  for (int t = 0; t < source.length; ++t) {
    const winocirc::ActivationSite site{0, t, winocirc::Component::residual_in, std::nullopt};
    const auto v = source.site_value(site);
    ps.add(site, std::vector<float>(v.begin(), v.end()));
  }
  return ps;
}

}  // namespace testing
