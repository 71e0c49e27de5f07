#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "winocirc/dataset.hpp"
#include "winocirc/forward.hpp"
#include "winocirc/model.hpp"

namespace winocirc {

class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A sentence whose mask span was replaced by `m` mask tokens.
struct ResizedSentence {
  std::vector<TokenId> tokens;
  Span mask_block;
};

ResizedSentence resize_mask(std::span<const TokenId> tokens, Span mask_span, int m,
                            TokenId mask_token_id);

// Positions in the resized sentence that correspond to `position` in the
// original one. A mask-span position maps to the whole resized mask block
// unless the block keeps its length.
std::vector<int> map_position(int position, Span mask_span, int m);

// Mean over i of log P(token np[i] at mask_block.start + i), read from a
// forward pass over the resized sentence.
double score_from_trace(const ForwardTrace& trace, Span mask_block,
                        std::span<const TokenId> np_tokens);

// Average per-token log probability of `np_tokens` at the mask, with every
// NP position masked. `patches` address the resized sentence.
double score_np(const ModelBundle& model, std::span<const TokenId> tokens, Span mask_span,
                std::span<const TokenId> np_tokens, const PatchSet& patches = {});

struct PairScores {
  double logp_NA_sA = 0.0;
  double logp_NB_sA = 0.0;
  double logp_NA_sB = 0.0;
  double logp_NB_sB = 0.0;

  bool operator==(const PairScores&) const = default;
};

PairScores score_pair(const ModelBundle& model, const WinogradPair& pair);

// Correct referent strictly preferred in both sentences.
bool strict_metric(const PairScores& s);
// Preference shifts toward the correct referent across the pair.
bool weak_metric(const PairScores& s);

struct DirectionEffect {
  double log_y_pre = 0.0;
  double log_y_post = 0.0;

  double log_effect() const { return log_y_pre - log_y_post; }
  double y_pre() const;
  double y_post() const;
};

struct EffectRecord {
  ActivationSite site;
  DirectionEffect ab;  // s_A patched with values from s_B, N_A correct
  DirectionEffect ba;  // s_B patched with values from s_A, N_B correct
  double log_effect = 0.0;

  double log_effect_dir_AB() const { return ab.log_effect(); }
  double log_effect_dir_BA() const { return ba.log_effect(); }
};

EffectRecord make_effect_record(const ActivationSite& site, DirectionEffect ab, DirectionEffect ba);

// Baseline traces and scores for one pair, reused across many interchanges.
class InterchangeContext {
 public:
  InterchangeContext(const ModelBundle& model, const WinogradPair& pair);

  const WinogradPair& pair() const { return pair_; }
  const PairScores& baseline() const { return baseline_; }

  // Interchange of a single site (positions in original sentence
  // coordinates) in both directions.
  EffectRecord effect(const ActivationSite& site) const;
  // Joint interchange of several sites; the record carries the first site.
  EffectRecord effect(std::span<const ActivationSite> sites) const;

  // Scores with `sites` interchanged: the s_A entries come from s_A patched
  // with s_B's values, the s_B entries from the reverse run.
  PairScores patched_scores(std::span<const ActivationSite> sites) const;

  // Baseline trace of sentence A or B resized for an m-token answer.
  const ForwardTrace& trace(bool sentence_A, int m) const;
  const ResizedSentence& resized(bool sentence_A, int m) const;

 private:
  struct Variant {
    ResizedSentence sentence;
    ForwardTrace trace;
  };

  // Scores (N_A, N_B) for the target sentence with sites interchanged.
  std::pair<double, double> run_direction(bool target_is_A,
                                          std::span<const ActivationSite> sites) const;
  PatchSet build_patches(const ForwardTrace& source, std::span<const ActivationSite> sites,
                         int m) const;

  const ModelBundle& model_;
  WinogradPair pair_;
  std::map<std::pair<bool, int>, Variant> variants_;
  PairScores baseline_;
};

EffectRecord compute_effect(const ModelBundle& model, const WinogradPair& pair,
                            const ActivationSite& site);

enum class SimilarityMeasure { correlation, euclidean };
enum class OptionChoice { option1, option2, tie };

std::string to_string(SimilarityMeasure m);
SimilarityMeasure parse_measure(const std::string& s);
std::string to_string(OptionChoice c);

// Which option's uncontextualized embedding sits closer to the context's.
// Multi-token spans use the mean of their word embeddings.
OptionChoice predict_option(const ModelBundle& model, std::span<const TokenId> tokens,
                            Span context, Span option1, Span option2, SimilarityMeasure measure);

struct BiasPrediction {
  OptionChoice predicted_A = OptionChoice::tie;
  OptionChoice predicted_B = OptionChoice::tie;
  OptionChoice correct_A = OptionChoice::option1;
  OptionChoice correct_B = OptionChoice::option2;
  bool multi_token = false;  // a mean over several embeddings was used

  bool pair_correct() const { return predicted_A == correct_A && predicted_B == correct_B; }
};

// Option span holding the answer `np_tokens` in `tokens`.
OptionChoice align_answer(const WinogradPair& pair, std::span<const TokenId> tokens,
                          std::span<const TokenId> np_tokens);

BiasPrediction embedding_bias_predict(const ModelBundle& model, const WinogradPair& pair,
                                      SimilarityMeasure measure);

}  // namespace winocirc
