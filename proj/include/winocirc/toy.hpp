#pragma once

#include <cstdint>
#include <vector>

#include "winocirc/dataset.hpp"
#include "winocirc/model.hpp"

namespace winocirc {

// Special ids used by toy fixtures ([PAD], [CLS], [SEP]); the mask id comes
// from the config.
inline constexpr TokenId kToyCls = 1;
inline constexpr TokenId kToySep = 2;
inline constexpr TokenId kToyFirstWord = 4;

struct ToyPairSpec {
  Condition condition = Condition::context;
  int length = 12;        // total tokens including [CLS]/[SEP]
  int answer_tokens = 1;  // tokens per option / answer
  int context_tokens = 1;
  bool identical = false;  // both sentences token-identical
};

// Random pair laid out as
//   [CLS] option1 rest.. option2 rest.. [MASK] verb context rest.. [SEP]
// that passes validate_pair for `config.mask_token_id`.
WinogradPair make_toy_pair(std::uint64_t seed, const ModelConfig& config, const ToyPairSpec& spec,
                           std::string pair_id = "toy");

// `count` base pairs (10 to 14 tokens, two more for two-token answers), each emitted once per condition in `conditions` under
// a shared pair_id.
std::vector<WinogradPair> make_toy_dataset(std::uint64_t seed, const ModelConfig& config, int count,
                                           const std::vector<Condition>& conditions);

// "[PAD] [CLS] [SEP] [MASK] w4 w5 ..." sized to the vocabulary.
std::vector<std::string> toy_vocabulary(const ModelConfig& config);

}  // namespace winocirc
