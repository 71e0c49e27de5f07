#include "winocirc/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace winocirc {

ResizedSentence resize_mask(std::span<const TokenId> tokens, Span mask_span, int m,
                            TokenId mask_token_id) {
  if (m < 1) throw ScoringError("answer must have at least one token");
  if (mask_span.empty() || mask_span.start < 0 ||
      mask_span.end > static_cast<int>(tokens.size())) {
    throw ScoringError(fmt::format("mask span [{}, {}) out of range for {} tokens", mask_span.start,
                                   mask_span.end, tokens.size()));
  }
  ResizedSentence out;
  out.tokens.reserve(tokens.size() + static_cast<std::size_t>(m));
  out.tokens.insert(out.tokens.end(), tokens.begin(), tokens.begin() + mask_span.start);
  out.tokens.insert(out.tokens.end(), static_cast<std::size_t>(m), mask_token_id);
  out.tokens.insert(out.tokens.end(), tokens.begin() + mask_span.end, tokens.end());
  out.mask_block = Span{mask_span.start, mask_span.start + m};
  return out;
}

std::vector<int> map_position(int position, Span mask_span, int m) {
  if (position < mask_span.start) return {position};
  if (position >= mask_span.end) return {position + m - mask_span.size()};
  if (mask_span.size() == m) return {position};
  std::vector<int> block(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) block[static_cast<std::size_t>(i)] = mask_span.start + i;
  return block;
}

double score_from_trace(const ForwardTrace& trace, Span mask_block,
                        std::span<const TokenId> np_tokens) {
  if (np_tokens.empty()) throw ScoringError("empty answer tokens");
  if (mask_block.size() != static_cast<int>(np_tokens.size()) || mask_block.start < 0 ||
      mask_block.end > trace.length) {
    throw ScoringError("mask block does not fit the answer");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < np_tokens.size(); ++i) {
    total += trace.log_prob(mask_block.start + static_cast<int>(i), np_tokens[i]);
  }
  const double score = total / static_cast<double>(np_tokens.size());
  if (!std::isfinite(score)) throw ScoringError("non-finite answer score");
  return score;
}

double score_np(const ModelBundle& model, std::span<const TokenId> tokens, Span mask_span,
                std::span<const TokenId> np_tokens, const PatchSet& patches) {
  if (np_tokens.empty()) throw ScoringError("empty answer tokens");
  const auto resized = resize_mask(tokens, mask_span, static_cast<int>(np_tokens.size()),
                                   model.config().mask_token_id);
  const ForwardTrace trace = forward(model, resized.tokens, patches);
  return score_from_trace(trace, resized.mask_block, np_tokens);
}

PairScores score_pair(const ModelBundle& model, const WinogradPair& pair) {
  return InterchangeContext(model, pair).baseline();
}

bool strict_metric(const PairScores& s) {
  return s.logp_NA_sA > s.logp_NB_sA && s.logp_NB_sB > s.logp_NA_sB;
}

bool weak_metric(const PairScores& s) {
  return s.logp_NA_sA - s.logp_NB_sA > s.logp_NA_sB - s.logp_NB_sB;
}

double DirectionEffect::y_pre() const { return std::exp(log_y_pre); }
double DirectionEffect::y_post() const { return std::exp(log_y_post); }

EffectRecord make_effect_record(const ActivationSite& site, DirectionEffect ab, DirectionEffect ba) {
  EffectRecord r{site, ab, ba, 0.0};
  r.log_effect = (ab.log_effect() + ba.log_effect()) / 2.0;
  if (!std::isfinite(r.log_effect)) {
    throw ScoringError("non-finite effect at " + to_string(site));
  }
  return r;
}

InterchangeContext::InterchangeContext(const ModelBundle& model, const WinogradPair& pair)
    : model_(model), pair_(pair) {
  if (pair_.tokens_A.size() != pair_.tokens_B.size()) {
    throw ScoringError("pair " + pair_.pair_id + " has sentences of different length");
  }
  const TokenId mask = model_.config().mask_token_id;
  const int mA = static_cast<int>(pair_.np_A_tokens.size());
  const int mB = static_cast<int>(pair_.np_B_tokens.size());
  for (bool sentence_A : {true, false}) {
    const auto& tokens = sentence_A ? pair_.tokens_A : pair_.tokens_B;
    for (int m : {mA, mB}) {
      if (variants_.contains({sentence_A, m})) continue;
      Variant v;
      v.sentence = resize_mask(tokens, pair_.mask_span, m, mask);
      v.trace = forward(model_, v.sentence.tokens);
      variants_.emplace(std::make_pair(sentence_A, m), std::move(v));
    }
  }
  auto score = [&](bool sentence_A, const std::vector<TokenId>& np) {
    const Variant& v = variants_.at({sentence_A, static_cast<int>(np.size())});
    return score_from_trace(v.trace, v.sentence.mask_block, np);
  };
  baseline_.logp_NA_sA = score(true, pair_.np_A_tokens);
  baseline_.logp_NB_sA = score(true, pair_.np_B_tokens);
  baseline_.logp_NA_sB = score(false, pair_.np_A_tokens);
  baseline_.logp_NB_sB = score(false, pair_.np_B_tokens);
}

const ForwardTrace& InterchangeContext::trace(bool sentence_A, int m) const {
  return variants_.at({sentence_A, m}).trace;
}

const ResizedSentence& InterchangeContext::resized(bool sentence_A, int m) const {
  return variants_.at({sentence_A, m}).sentence;
}

PatchSet InterchangeContext::build_patches(const ForwardTrace& source,
                                           std::span<const ActivationSite> sites, int m) const {
  PatchSet patches;
  std::set<std::tuple<int, int, Component, int>> seen;
  for (const ActivationSite& site : sites) {
    if (site.position < 0 || site.position >= pair_.length()) {
      throw ForwardError(ForwardError::Kind::site_out_of_range,
                         "site outside the sentence: " + to_string(site));
    }
    for (int pos : map_position(site.position, pair_.mask_span, m)) {
      ActivationSite concrete = site;
      concrete.position = pos;
      // Two mask-span sites can collapse onto one resized position.
      if (!seen.emplace(concrete.layer, pos, concrete.component, concrete.head.value_or(-2)).second) {
        continue;
      }
      auto value = source.site_value(concrete);
      patches.add(concrete, std::vector<float>(value.begin(), value.end()));
    }
  }
  return patches;
}

std::pair<double, double> InterchangeContext::run_direction(
    bool target_is_A, std::span<const ActivationSite> sites) const {
  const int mA = static_cast<int>(pair_.np_A_tokens.size());
  const int mB = static_cast<int>(pair_.np_B_tokens.size());
  std::map<int, ForwardTrace> patched;
  for (int m : {mA, mB}) {
    if (patched.contains(m)) continue;
    const Variant& target = variants_.at({target_is_A, m});
    const Variant& source = variants_.at({!target_is_A, m});
    const PatchSet patches = build_patches(source.trace, sites, m);
    patched.emplace(m, forward(model_, target.sentence.tokens, patches));
  }
  const Span blockA = variants_.at({target_is_A, mA}).sentence.mask_block;
  const Span blockB = variants_.at({target_is_A, mB}).sentence.mask_block;
  return {score_from_trace(patched.at(mA), blockA, pair_.np_A_tokens),
          score_from_trace(patched.at(mB), blockB, pair_.np_B_tokens)};
}

PairScores InterchangeContext::patched_scores(std::span<const ActivationSite> sites) const {
  PairScores s;
  std::tie(s.logp_NA_sA, s.logp_NB_sA) = run_direction(true, sites);
  std::tie(s.logp_NA_sB, s.logp_NB_sB) = run_direction(false, sites);
  return s;
}

EffectRecord InterchangeContext::effect(std::span<const ActivationSite> sites) const {
  if (sites.empty()) throw ScoringError("interchange needs at least one site");
  const PairScores post = patched_scores(sites);
  DirectionEffect ab{baseline_.logp_NA_sA - baseline_.logp_NB_sA, post.logp_NA_sA - post.logp_NB_sA};
  DirectionEffect ba{baseline_.logp_NB_sB - baseline_.logp_NA_sB, post.logp_NB_sB - post.logp_NA_sB};
  return make_effect_record(sites.front(), ab, ba);
}

EffectRecord InterchangeContext::effect(const ActivationSite& site) const {
  return effect(std::span<const ActivationSite>(&site, 1));
}

EffectRecord compute_effect(const ModelBundle& model, const WinogradPair& pair,
                            const ActivationSite& site) {
  return InterchangeContext(model, pair).effect(site);
}

std::string to_string(SimilarityMeasure m) {
  return m == SimilarityMeasure::correlation ? "correlation" : "euclidean";
}

SimilarityMeasure parse_measure(const std::string& s) {
  if (s == "correlation") return SimilarityMeasure::correlation;
  if (s == "euclidean") return SimilarityMeasure::euclidean;
  throw std::invalid_argument("unknown measure '" + s + "'");
}

std::string to_string(OptionChoice c) {
  switch (c) {
    case OptionChoice::option1: return "option1";
    case OptionChoice::option2: return "option2";
    case OptionChoice::tie: return "tie";
  }
  return "unknown";
}

namespace {

std::vector<double> mean_embedding(const ModelBundle& model, std::span<const TokenId> tokens,
                                   Span span) {
  std::vector<double> out(static_cast<std::size_t>(model.config().embedding_dim), 0.0);
  for (int i = span.start; i < span.end; ++i) {
    auto row = model.word_embedding(tokens[static_cast<std::size_t>(i)]);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += row[k];
  }
  for (auto& v : out) v /= span.size();
  return out;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw ScoringError("zero-variance embedding under correlation");
  return sab / std::sqrt(saa * sbb);
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

OptionChoice predict_option(const ModelBundle& model, std::span<const TokenId> tokens,
                            Span context, Span option1, Span option2, SimilarityMeasure measure) {
  const auto c = mean_embedding(model, tokens, context);
  const auto o1 = mean_embedding(model, tokens, option1);
  const auto o2 = mean_embedding(model, tokens, option2);
  if (measure == SimilarityMeasure::correlation) {
    const double r1 = correlation(c, o1), r2 = correlation(c, o2);
    if (r1 == r2) return OptionChoice::tie;
    return r1 > r2 ? OptionChoice::option1 : OptionChoice::option2;
  }
  const double d1 = distance(c, o1), d2 = distance(c, o2);
  if (d1 == d2) return OptionChoice::tie;
  return d1 < d2 ? OptionChoice::option1 : OptionChoice::option2;
}

OptionChoice align_answer(const WinogradPair& pair, std::span<const TokenId> tokens,
                          std::span<const TokenId> np_tokens) {
  auto span_tokens = [&](Span s) {
    return std::vector<TokenId>(tokens.begin() + s.start, tokens.begin() + s.end);
  };
  const auto t1 = span_tokens(pair.option1_span), t2 = span_tokens(pair.option2_span);
  const std::vector<TokenId> np(np_tokens.begin(), np_tokens.end());
  if (np == t1 && np != t2) return OptionChoice::option1;
  if (np == t2 && np != t1) return OptionChoice::option2;
  // Fall back to the head noun: the answer's last token.
  const bool last1 = !t1.empty() && t1.back() == np.back();
  const bool last2 = !t2.empty() && t2.back() == np.back();
  if (last1 && !last2) return OptionChoice::option1;
  if (last2 && !last1) return OptionChoice::option2;
  throw ScoringError("cannot align answer tokens with an option span in pair " + pair.pair_id);
}

BiasPrediction embedding_bias_predict(const ModelBundle& model, const WinogradPair& pair,
                                      SimilarityMeasure measure) {
  BiasPrediction p;
  p.predicted_A = predict_option(model, pair.tokens_A, pair.context_span_A, pair.option1_span,
                                 pair.option2_span, measure);
  p.predicted_B = predict_option(model, pair.tokens_B, pair.context_span_B, pair.option1_span,
                                 pair.option2_span, measure);
  p.correct_A = align_answer(pair, pair.tokens_A, pair.np_A_tokens);
  p.correct_B = align_answer(pair, pair.tokens_B, pair.np_B_tokens);
  p.multi_token = pair.context_span_A.size() > 1 || pair.context_span_B.size() > 1 ||
                  pair.option1_span.size() > 1 || pair.option2_span.size() > 1;
  return p;
}

}  // namespace winocirc
