#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "winocirc/intervention.hpp"

namespace winocirc {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Interval {
  double low = 0.0;
  double high = 0.0;
  bool operator==(const Interval&) const = default;
};

// Mean computed as x0 + mean(x - x0) so constant data reproduces itself exactly.
double stable_mean(std::span<const double> samples);

// Percentile interval of bootstrap resample means.
Interval bootstrap_ci(std::span<const double> samples, std::size_t resamples, double level,
                      std::uint64_t seed);

struct TTest {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
};

// Two-sided one-sample t-test against zero.
TTest one_sample_t(std::span<const double> samples);

// One-sample test on a[i] - b[i]. Reported separately from one-sample cell
// tests; it compares two classes within the same pairs.
TTest paired_difference_t(std::span<const double> a, std::span<const double> b);

double bonferroni_threshold(double alpha, std::size_t family_size);
// flag[i] = p[i] < alpha / m, with m = p.size().
std::vector<bool> correct_multiple(std::span<const double> p_values, double alpha);

struct CellStats {
  std::size_t n = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double t_stat = 0.0;
  int df = 0;
  double p_value = 1.0;
  bool significant = false;
  // Fewer than two samples or zero variance: no test was run and p = 1.
  bool degenerate = false;
};

struct StatsOptions {
  std::size_t resamples = 10000;
  double level = 0.95;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

struct GridStats {
  SweepKind kind = SweepKind::layers;
  StatsOptions options;
  std::size_t family_size = 0;
  std::map<CellKey, CellStats> cells;
};

// Per-cell seed for bootstrap resampling, independent of evaluation order.
std::uint64_t cell_seed(std::uint64_t root, const CellKey& key);

// Stats for every cell; Bonferroni family = every cell in the grid.
GridStats grid_stats(const SweepGrid& grid, const StatsOptions& options, unsigned threads = 0);

enum class Specificity { context_only, syntax_only, both, neither };
std::string to_string(Specificity s);

struct SpecificityCell {
  int head = -1;
  int layer = 0;
  Component component = Component::transformation;
  TokenClass token_class = TokenClass::rest;
  Specificity label = Specificity::neither;
};

Specificity classify(bool context_significant, bool syntax_significant);

// Cells ordered by head (heads sorted by the earliest layer with a
// context_only cell, heads without one last), then layer, component, class.
std::vector<SpecificityCell> specificity_map(const GridStats& context, const GridStats& syntax);

}  // namespace winocirc
