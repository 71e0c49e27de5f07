#include "winocirc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

namespace winocirc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Unbiased draw in [0, n).
std::size_t draw_index(std::mt19937_64& engine, std::size_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine();
  while (x >= limit) x = engine();
  return static_cast<std::size_t>(x % n);
}

// Linear interpolation between order statistics (sorted input).
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

double stable_mean(std::span<const double> samples) {
  if (samples.empty()) throw StatsError("mean of no samples");
  const double x0 = samples[0];
  double dev = 0.0;
  for (double x : samples) dev += x - x0;
  return x0 + dev / static_cast<double>(samples.size());
}

Interval bootstrap_ci(std::span<const double> samples, std::size_t resamples, double level,
                      std::uint64_t seed) {
  if (samples.empty()) throw StatsError("bootstrap needs at least one sample");
  if (!(level > 0.0 && level < 1.0)) throw StatsError("confidence level must lie in (0, 1)");
  if (resamples == 0) throw StatsError("bootstrap needs at least one resample");
  std::mt19937_64 engine(seed);
  std::vector<double> means(resamples);
  std::vector<double> draw(samples.size());
  for (auto& m : means) {
    for (auto& d : draw) d = samples[draw_index(engine, samples.size())];
    m = stable_mean(draw);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  return Interval{quantile(means, tail), quantile(means, 1.0 - tail)};
}

TTest one_sample_t(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw StatsError("t-test needs at least two samples");
  const double mean = stable_mean(samples);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) throw StatsError("t-test on samples with zero variance");
  TTest r;
  r.df = static_cast<int>(n - 1);
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  const boost::math::students_t_distribution<double> dist(r.df);
  r.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))), 0.0, 1.0);
  return r;
}

TTest paired_difference_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StatsError("paired samples differ in length");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  return one_sample_t(diff);
}

double bonferroni_threshold(double alpha, std::size_t family_size) {
  if (family_size == 0) throw StatsError("empty test family");
  return alpha / static_cast<double>(family_size);
}

std::vector<bool> correct_multiple(std::span<const double> p_values, double alpha) {
  std::vector<bool> flags(p_values.size(), false);
  if (p_values.empty()) return flags;
  const double threshold = bonferroni_threshold(alpha, p_values.size());
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    if (!(p_values[i] >= 0.0 && p_values[i] <= 1.0)) {
      throw StatsError(fmt::format("p-value {} outside [0, 1]", p_values[i]));
    }
    flags[i] = p_values[i] < threshold;
  }
  return flags;
}

std::uint64_t cell_seed(std::uint64_t root, const CellKey& key) {
  std::uint64_t h = splitmix64(root);
  for (std::int64_t v : {std::int64_t{key.layer}, std::int64_t{key.head},
                         static_cast<std::int64_t>(key.component),
                         static_cast<std::int64_t>(key.token_class)}) {
    h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  }
  return h;
}

GridStats grid_stats(const SweepGrid& grid, const StatsOptions& options, unsigned threads) {
  GridStats out;
  out.kind = grid.kind;
  out.options = options;
  out.family_size = grid.cells.size();

  std::vector<const std::pair<const CellKey, std::vector<double>>*> cells;
  for (const auto& entry : grid.cells) cells.push_back(&entry);
  std::vector<CellStats> stats(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    const auto& [key, values] = *cells[i];
    std::vector<double> finite;
    for (double v : values) {
      if (std::isfinite(v)) finite.push_back(v);
    }
    CellStats s;
    s.n = finite.size();
    if (finite.empty()) {
      s.degenerate = true;
      stats[i] = s;
      return;
    }
    s.mean = stable_mean(finite);
    const Interval ci = bootstrap_ci(finite, options.resamples, options.level,
                                     cell_seed(options.seed, key));
    s.ci_low = ci.low;
    s.ci_high = ci.high;
    s.df = static_cast<int>(finite.size()) - 1;
    try {
      const TTest t = one_sample_t(finite);
      s.t_stat = t.t;
      s.p_value = t.p;
    } catch (const StatsError&) {
      s.degenerate = true;
    }
    stats[i] = s;
  });

  std::vector<double> p(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) p[i] = stats[i].p_value;
  const auto flags = correct_multiple(p, options.alpha);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    stats[i].significant = flags[i] && !stats[i].degenerate;
    out.cells.emplace(cells[i]->first, stats[i]);
  }
  return out;
}

std::string to_string(Specificity s) {
  switch (s) {
    case Specificity::context_only: return "context_only";
    case Specificity::syntax_only: return "syntax_only";
    case Specificity::both: return "both";
    case Specificity::neither: return "neither";
  }
  return "unknown";
}

Specificity classify(bool context_significant, bool syntax_significant) {
  if (context_significant && syntax_significant) return Specificity::both;
  if (context_significant) return Specificity::context_only;
  if (syntax_significant) return Specificity::syntax_only;
  return Specificity::neither;
}

std::vector<SpecificityCell> specificity_map(const GridStats& context, const GridStats& syntax) {
  if (context.cells.size() != syntax.cells.size()) {
    throw StatsError("context and syntax grids have different axes");
  }
  std::vector<SpecificityCell> out;
  std::map<int, int> earliest;  // head -> first context_only layer
  for (const auto& [key, cs] : context.cells) {
    auto it = syntax.cells.find(key);
    if (it == syntax.cells.end()) {
      throw StatsError("syntax grid lacks cell " + to_string(key));
    }
    SpecificityCell cell{key.head, key.layer, key.component, key.token_class,
                         classify(cs.significant, it->second.significant)};
    if (cell.label == Specificity::context_only) {
      auto [e, inserted] = earliest.try_emplace(key.head, key.layer);
      if (!inserted) e->second = std::min(e->second, key.layer);
    }
    out.push_back(cell);
  }
  auto rank = [&](int head) {
    auto it = earliest.find(head);
    return std::make_pair(it == earliest.end() ? std::numeric_limits<int>::max() : it->second, head);
  };
  std::stable_sort(out.begin(), out.end(), [&](const SpecificityCell& a, const SpecificityCell& b) {
    const auto ra = rank(a.head), rb = rank(b.head);
    if (ra != rb) return ra < rb;
    return std::tie(a.layer, a.component, a.token_class) < std::tie(b.layer, b.component, b.token_class);
  });
  return out;
}

}  // namespace winocirc
