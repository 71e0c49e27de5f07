#include "winocirc/toy.hpp"

#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace winocirc {

namespace {

class WordSource {
 public:
  WordSource(std::uint64_t seed, const ModelConfig& config)
      : engine_(seed), words_(static_cast<std::uint64_t>(config.vocab_size - kToyFirstWord)),
        mask_(config.mask_token_id) {
    if (config.vocab_size <= kToyFirstWord + 2) throw std::invalid_argument("vocabulary too small");
  }

  TokenId next() {
    for (;;) {
      const auto id = static_cast<TokenId>(kToyFirstWord + engine_() % words_);
      if (id != mask_) return id;
    }
  }
  TokenId other_than(TokenId t) {
    for (;;) {
      const TokenId id = next();
      if (id != t) return id;
    }
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t words_;
  TokenId mask_;
};

}  // namespace

WinogradPair make_toy_pair(std::uint64_t seed, const ModelConfig& config, const ToyPairSpec& spec,
                           std::string pair_id) {
  const int np = spec.answer_tokens, ctx = spec.context_tokens;
  // [CLS] + 2 options + 2 rest gaps + mask + verb + context + [SEP]
  const int minimum = 2 + 2 * np + 2 + 1 + 1 + ctx;
  if (spec.length < minimum || spec.length > config.max_positions - np) {
    throw std::invalid_argument(fmt::format("toy pair length {} outside [{}, {}]", spec.length,
                                            minimum, config.max_positions - np));
  }
  WordSource words(seed, config);
  WinogradPair p;
  p.pair_id = std::move(pair_id);
  p.condition = spec.condition;
  p.source = Source::constructed;

  const int tail = spec.length - minimum;  // rest tokens after the context
  std::vector<TokenId> t;
  t.push_back(kToyCls);
  p.option1_span = {1, 1 + np};
  for (int i = 0; i < np; ++i) t.push_back(words.next());
  t.push_back(words.next());
  p.option2_span = {static_cast<int>(t.size()), static_cast<int>(t.size()) + np};
  for (int i = 0; i < np; ++i) t.push_back(words.next());
  t.push_back(words.next());
  p.mask_span = {static_cast<int>(t.size()), static_cast<int>(t.size()) + 1};
  t.push_back(config.mask_token_id);
  p.verb_index = static_cast<int>(t.size());
  t.push_back(words.next());
  p.context_span_A = {static_cast<int>(t.size()), static_cast<int>(t.size()) + ctx};
  p.context_span_B = p.context_span_A;
  for (int i = 0; i < ctx; ++i) t.push_back(words.next());
  for (int i = 0; i < tail; ++i) t.push_back(words.next());
  t.push_back(kToySep);

  p.tokens_A = t;
  p.tokens_B = t;
  if (!spec.identical) {
    for (int i = p.context_span_B.start; i < p.context_span_B.end; ++i) {
      p.tokens_B[i] = words.other_than(p.tokens_A[i]);
    }
    if (spec.condition == Condition::context_syntax || spec.condition == Condition::syntax_only) {
      p.tokens_B[p.verb_index] = words.other_than(p.tokens_A[p.verb_index]);
    }
  }
  p.np_A_tokens.assign(t.begin() + p.option1_span.start, t.begin() + p.option1_span.end);
  p.np_B_tokens.assign(t.begin() + p.option2_span.start, t.begin() + p.option2_span.end);
  if (spec.condition == Condition::syntax_only) {
    p.condition = Condition::context_syntax;
    p = mask_context(p, config.mask_token_id);
  }
  return p;
}

std::vector<WinogradPair> make_toy_dataset(std::uint64_t seed, const ModelConfig& config, int count,
                                           const std::vector<Condition>& conditions) {
  std::vector<WinogradPair> out;
  std::mt19937_64 engine(seed);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t pair_seed = engine();
    ToyPairSpec spec;
    spec.answer_tokens = engine() % 4 == 0 ? 2 : 1;
    spec.length = 10 + static_cast<int>(engine() % 5) + 2 * (spec.answer_tokens - 1);
    for (Condition c : conditions) {
      spec.condition = c;
      out.push_back(make_toy_pair(pair_seed, config, spec, fmt::format("toy-{:03}", i)));
    }
  }
  return out;
}

std::vector<std::string> toy_vocabulary(const ModelConfig& config) {
  std::vector<std::string> v;
  for (TokenId i = 0; i < config.vocab_size; ++i) {
    if (i == 0) v.emplace_back("[PAD]");
    else if (i == kToyCls) v.emplace_back("[CLS]");
    else if (i == kToySep) v.emplace_back("[SEP]");
    else if (i == config.mask_token_id) v.emplace_back("[MASK]");
    else v.push_back(fmt::format("w{}", i));
  }
  return v;
}

}  // namespace winocirc
