#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "winocirc/dataset.hpp"
#include "winocirc/forward.hpp"
#include "winocirc/model.hpp"

namespace testing {

using winocirc::ModelBundle;
using winocirc::TokenId;

// Straightforward triple-loop forward pass in double, written from the
// architecture description and sharing no code with the library.
std::vector<std::vector<double>> naive_logits(const ModelBundle& model, const std::vector<TokenId>& tokens);

std::vector<double> naive_log_softmax(const std::vector<double>& logits);

// Average log-prob of `np` with the mask span widened to np.size() masks:
// one independent naive forward per NP position, read at that position.
double naive_np_score(const ModelBundle& model, const std::vector<TokenId>& tokens,
                      winocirc::Span mask_span, const std::vector<TokenId>& np);

std::vector<TokenId> random_sentence(std::mt19937_64& rng, const winocirc::ModelConfig& cfg, int length);

// Relative error over a full logits matrix.
double logits_error(const winocirc::Activations& actual, const winocirc::Activations& expected);

// Maps the layer-0 residuals of `source` onto every position.
winocirc::PatchSet layer0_swap(const winocirc::ForwardTrace& source);

}  // namespace testing
