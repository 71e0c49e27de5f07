#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "winocirc/dataset.hpp"
#include "winocirc/forward.hpp"
#include "winocirc/scoring.hpp"

namespace winocirc {

enum class SweepKind { layers, heads, cumulative, synonym };

std::string to_string(SweepKind k);
SweepKind parse_sweep_kind(const std::string& s);

// Unpatched forward pass feeding interchanges.
ForwardTrace record(const ModelBundle& model, std::span<const TokenId> tokens);

struct SweepOptions {
  std::optional<std::set<int>> layers;  // all layers when empty
  std::optional<std::set<int>> heads;   // all heads when empty
  std::vector<Component> components{Component::transformation, Component::query, Component::key,
                                    Component::value};
  unsigned threads = 0;  // 0 = hardware concurrency
};

// One line of the columnar sweep table. `position` is -1 for rows that
// aggregate a token class, `head` is -1 when no single head is addressed.
struct SweepRow {
  std::string pair_id;
  Condition condition = Condition::context;
  int layer = 0;
  int head = -1;
  Component component = Component::residual_in;
  TokenClass token_class = TokenClass::rest;
  int position = -1;
  double log_effect_dir_AB = 0.0;
  double log_effect_dir_BA = 0.0;
  double log_effect = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct CellKey {
  int layer = 0;
  int head = -1;
  Component component = Component::residual_in;
  TokenClass token_class = TokenClass::rest;

  auto operator<=>(const CellKey&) const = default;
};

std::string to_string(const CellKey& k);

// Class-level results of one pair: rows for the table plus the per-cell
// class means (NaN when the class has no member token in this pair).
struct PairSweep {
  std::string pair_id;
  Condition condition = Condition::context;
  std::vector<SweepRow> rows;
  std::map<CellKey, double> cells;
};

// Cell -> one averaged log effect per evaluated pair, in pair order.
struct SweepGrid {
  SweepKind kind = SweepKind::layers;
  std::vector<std::string> pair_ids;
  std::map<CellKey, std::vector<double>> cells;
};

struct SweepResult {
  SweepKind kind = SweepKind::layers;
  std::vector<SweepRow> rows;
  SweepGrid grid;
};

// residual_in interchange at every (layer, token); per-token rows.
PairSweep layer_sweep(const ModelBundle& model, const WinogradPair& pair,
                      const TokenClassMap& classes, const SweepOptions& options = {});

// Per (layer, head, component, class): mean over class tokens of the
// single-head interchange effect.
PairSweep head_sweep(const ModelBundle& model, const WinogradPair& pair,
                     const TokenClassMap& classes, const SweepOptions& options = {});

// Sites interchanged by cumulative cell (last_layer, token): every head's
// transformation at layers 0..last_layer.
std::vector<ActivationSite> cumulative_sites(const ModelConfig& config, int last_layer, int position);

// Per (layer i, class): mean over class tokens of the joint transformation
// interchange at layers 0..i.
PairSweep cumulative_sweep(const ModelBundle& model, const WinogradPair& pair,
                           const TokenClassMap& classes, const SweepOptions& options = {});

// Layer sweep over synonym-condition pairs.
SweepResult synonym_control(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                            bool exclude_specials, const SweepOptions& options = {});

SweepGrid build_grid(SweepKind kind, const std::vector<PairSweep>& sweeps);
SweepResult collect(SweepKind kind, std::vector<PairSweep> sweeps);

// Runs `kind` over every pair. Sweeps are evaluated in parallel; results
// keep pair order.
SweepResult run_sweep(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                      SweepKind kind, bool exclude_specials, const SweepOptions& options = {});

// Calls fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace winocirc
