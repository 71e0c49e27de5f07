#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <limits>
#include <random>

#include "winocirc/stats.hpp"

using namespace winocirc;

namespace {

// Closed-form Student t CDFs for small even df.
double t_cdf_df2(double t) { return 0.5 + t / (2.0 * std::sqrt(2.0 + t * t)); }
double t_cdf_df4(double t) {
  const double s = 1.0 + t * t / 4.0;
  return 0.5 + 0.375 * (t / std::sqrt(s)) * (1.0 - t * t / (12.0 * s));
}

// Null cells hold +-a pairs (mean exactly 0, so p = 1); live cells add
// `shift` to every value.
SweepGrid synthetic_grid(std::uint64_t seed, int layers, int heads, int pairs,
                         const std::vector<std::pair<int, int>>& live, double shift) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> size(0.5, 1.5);
  SweepGrid g;
  g.kind = SweepKind::heads;
  for (int p = 0; p < pairs; ++p) g.pair_ids.push_back("p" + std::to_string(p));
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      const bool on = std::find(live.begin(), live.end(), std::make_pair(l, h)) != live.end();
      auto& v = g.cells[CellKey{l, h, Component::transformation, TokenClass::context}];
      for (int p = 0; p + 1 < pairs; p += 2) {
        const double a = size(rng);
        v.push_back(a + (on ? shift : 0.0));
        v.push_back(-a + (on ? shift : 0.0));
      }
    }
  }
  return g;
}

}  // namespace

TEST_CASE("one-sample t on 1..5") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const TTest r = one_sample_t(x);
  const double sd = std::sqrt(10.0 / 4.0);
  CHECK(r.t == doctest::Approx(3.0 / (sd / std::sqrt(5.0))).epsilon(1e-12));
  CHECK(std::abs(r.t - 4.2426) < 1e-3);
  CHECK(r.df == 4);
  CHECK(r.p == doctest::Approx(2.0 * (1.0 - t_cdf_df4(r.t))).epsilon(1e-9));
}

TEST_CASE("t-test p-values match closed forms") {
  const std::vector<double> x{0.4, -0.1, 1.3};
  const TTest r = one_sample_t(x);
  CHECK(r.df == 2);
  CHECK(r.p == doctest::Approx(2.0 * (1.0 - t_cdf_df2(std::abs(r.t)))).epsilon(1e-9));
  const std::vector<double> neg{-0.4, 0.1, -1.3};
  CHECK(one_sample_t(neg).t == doctest::Approx(-r.t));
  CHECK(one_sample_t(neg).p == doctest::Approx(r.p));
}

TEST_CASE("t-test degrees of freedom and errors") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.2, 1.0);
  std::vector<double> x(58);
  for (auto& v : x) v = n(rng);
  CHECK(one_sample_t(x).df == 57);
  CHECK_THROWS_AS(one_sample_t(std::vector<double>(6, 0.0)), StatsError);
  CHECK_THROWS_AS(one_sample_t(std::vector<double>{1.0}), StatsError);

  const std::vector<double> a{1.0, 2.0, 4.0}, b{0.5, 1.0, 1.5};
  const std::vector<double> d{0.5, 1.0, 2.5};
  const TTest pd = paired_difference_t(a, b), od = one_sample_t(d);
  CHECK(pd.t == od.t);
  CHECK(pd.p == od.p);
  CHECK_THROWS_AS(paired_difference_t(a, std::vector<double>{1.0}), StatsError);
}

TEST_CASE("bootstrap intervals") {
  const std::vector<double> c(12, 0.37);
  const Interval ci = bootstrap_ci(c, 2000, 0.95, 5);
  CHECK(ci.low == 0.37);
  CHECK(ci.high == 0.37);

  const std::vector<double> bits{0, 1};
  const Interval b = bootstrap_ci(bits, 10000, 0.95, 1);
  CHECK(b.low >= 0.0);
  CHECK(b.high <= 1.0);
  CHECK(b.low <= 0.5);
  CHECK(b.high >= 0.5);

  const std::vector<double> x{0.3, -1.2, 2.2, 0.9, 0.1, -0.4};
  const Interval r1 = bootstrap_ci(x, 5000, 0.95, 42), r2 = bootstrap_ci(x, 5000, 0.95, 42);
  CHECK(std::memcmp(&r1, &r2, sizeof(Interval)) == 0);
  CHECK_FALSE(bootstrap_ci(x, 5000, 0.95, 43) == r1);

  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{}, 10, 0.95, 1), StatsError);
  CHECK_THROWS_AS(bootstrap_ci(x, 10, 1.0, 1), StatsError);
  CHECK_THROWS_AS(bootstrap_ci(x, 0, 0.95, 1), StatsError);
}

TEST_CASE("wider confidence levels nest the narrower ones") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(3 + trial % 20);
    for (auto& v : x) v = n(rng);
    const auto seed = static_cast<std::uint64_t>(trial);
    const Interval i95 = bootstrap_ci(x, 2000, 0.95, seed), i99 = bootstrap_ci(x, 2000, 0.99, seed);
    CHECK(i99.low <= i95.low);
    CHECK(i99.high >= i95.high);
    CHECK(i95.low <= i95.high);
  }
}

TEST_CASE("Bonferroni correction") {
  CHECK(bonferroni_threshold(0.005, 64 * 12 * 5) == 0.005 / 3840.0);
  CHECK(correct_multiple(std::vector<double>{0.049}, 0.05) == std::vector<bool>{true});
  CHECK(correct_multiple(std::vector<double>{0.05}, 0.05) == std::vector<bool>{false});
  const std::vector<double> p{0.01, 0.0125, 0.02, 0.9};
  CHECK(correct_multiple(p, 0.05) == std::vector<bool>{true, false, false, false});
  CHECK(correct_multiple(std::vector<double>{}, 0.05).empty());
  CHECK_THROWS_AS(correct_multiple(std::vector<double>{1.5}, 0.05), StatsError);
  CHECK_THROWS_AS(bonferroni_threshold(0.05, 0), StatsError);
}

TEST_CASE("lowering alpha never adds significant cells") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 0.02);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + trial % 30);
    for (auto& v : p) v = u(rng);
    const auto loose = correct_multiple(p, 0.05), strict = correct_multiple(p, 0.01);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (strict[i]) CHECK(loose[i]);
    }
  }
}

TEST_CASE("grid statistics") {
  SweepGrid g;
  g.kind = SweepKind::layers;
  g.pair_ids = {"a", "b", "c", "d", "e"};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const CellKey strong{0, -1, Component::residual_in, TokenClass::context};
  const CellKey flat{0, -1, Component::residual_in, TokenClass::verb};
  const CellKey sparse{1, -1, Component::residual_in, TokenClass::context};
  const CellKey empty{1, -1, Component::residual_in, TokenClass::verb};
  g.cells[strong] = {2.0, 2.1, 1.9, 2.05, 1.95};
  g.cells[flat] = {0.0, 0.0, 0.0, 0.0, 0.0};
  g.cells[sparse] = {1.0, nan, 3.0, nan, 2.0};
  g.cells[empty] = {nan, nan, nan, nan, nan};

  StatsOptions o;
  o.resamples = 1000;
  o.seed = 9;
  const GridStats s = grid_stats(g, o, 2);
  CHECK(s.family_size == 4);
  const CellStats& st = s.cells.at(strong);
  CHECK(st.n == 5);
  CHECK(st.df == 4);
  CHECK(st.mean == doctest::Approx(2.0));
  CHECK(st.significant);
  CHECK(st.ci_low <= st.mean);
  CHECK(st.mean <= st.ci_high);
  CHECK(st.p_value == one_sample_t(g.cells[strong]).p);
  const Interval ci = bootstrap_ci(g.cells[strong], 1000, 0.95, cell_seed(9, strong));
  CHECK(st.ci_low == ci.low);
  CHECK(st.ci_high == ci.high);

  const CellStats& fl = s.cells.at(flat);
  CHECK(fl.degenerate);
  CHECK_FALSE(fl.significant);
  CHECK(fl.p_value == 1.0);
  CHECK(fl.ci_low == 0.0);
  CHECK(fl.ci_high == 0.0);

  CHECK(s.cells.at(sparse).n == 3);
  CHECK(s.cells.at(sparse).df == 2);
  CHECK(s.cells.at(empty).n == 0);
  CHECK(s.cells.at(empty).degenerate);

  for (const auto& [k, c] : s.cells) {
    CHECK(c.p_value >= 0.0);
    CHECK(c.p_value <= 1.0);
    CHECK(c.ci_low <= c.ci_high);
  }

  const GridStats serial = grid_stats(g, o, 1);
  for (const auto& [k, c] : s.cells) {
    CHECK(serial.cells.at(k).ci_low == c.ci_low);
    CHECK(serial.cells.at(k).ci_high == c.ci_high);
  }
}

TEST_CASE("per-cell seeds differ across cells and roots") {
  const CellKey a{0, 1, Component::query, TokenClass::mask}, b{0, 2, Component::query, TokenClass::mask};
  CHECK(cell_seed(1, a) == cell_seed(1, a));
  CHECK(cell_seed(1, a) != cell_seed(1, b));
  CHECK(cell_seed(1, a) != cell_seed(2, a));
}

TEST_CASE("specificity labels") {
  CHECK(classify(true, true) == Specificity::both);
  CHECK(classify(true, false) == Specificity::context_only);
  CHECK(classify(false, true) == Specificity::syntax_only);
  CHECK(classify(false, false) == Specificity::neither);

  StatsOptions o;
  o.resamples = 200;
  const GridStats quiet = grid_stats(synthetic_grid(1, 3, 4, 20, {}, 0.0), o);
  for (const auto& c : specificity_map(quiet, quiet)) CHECK(c.label == Specificity::neither);

  const GridStats ctx = grid_stats(synthetic_grid(2, 3, 4, 20, {{2, 1}}, 5.0), o);
  const GridStats syn = grid_stats(synthetic_grid(3, 3, 4, 20, {}, 0.0), o);
  const auto cells = specificity_map(ctx, syn);
  CHECK(cells.size() == 12);
  int context_only = 0;
  for (const auto& c : cells) context_only += c.label == Specificity::context_only;
  CHECK(context_only == 1);
  // The head with context-specific cells is reported first.
  CHECK(cells.front().head == 1);
  CHECK(cells.front().layer == 0);

  const GridStats both = grid_stats(synthetic_grid(4, 3, 4, 20, {{0, 0}}, 5.0), o);
  const auto b = specificity_map(both, both);
  CHECK(std::count_if(b.begin(), b.end(), [](const auto& c) { return c.label == Specificity::both; }) == 1);

  const GridStats small = grid_stats(synthetic_grid(5, 2, 4, 20, {}, 0.0), o);
  CHECK_THROWS_AS(specificity_map(ctx, small), StatsError);
}

TEST_CASE("stricter alpha yields fewer significant heads on synthetic data") {
  // Effects of graded size: some survive only the looser thresholds.
  SweepGrid g = synthetic_grid(6, 6, 16, 30, {}, 0.0);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int h = 0; h < 16; ++h) {
    auto& v = g.cells[CellKey{h % 6, h, Component::transformation, TokenClass::context}];
    for (auto& x : v) x = noise(rng) + 0.1 * (h + 1);
  }
  std::vector<int> counts;
  for (double alpha : {0.05, 0.01, 0.005, 0.001}) {
    StatsOptions o;
    o.resamples = 200;
    o.alpha = alpha;
    const GridStats s = grid_stats(g, o);
    std::set<int> heads;
    for (const auto& [k, c] : s.cells) {
      if (c.significant) heads.insert(k.head);
    }
    counts.push_back(static_cast<int>(heads.size()));
  }
  for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] <= counts[i - 1]);
  CHECK(counts.front() > counts.back());
}

TEST_CASE("every cell gets exactly one label") {
  StatsOptions o;
  o.resamples = 100;
  const GridStats a = grid_stats(synthetic_grid(7, 4, 4, 15, {{0, 0}, {1, 2}, {3, 3}}, 3.0), o);
  const GridStats b = grid_stats(synthetic_grid(8, 4, 4, 15, {{1, 2}, {2, 1}}, 3.0), o);
  const auto cells = specificity_map(a, b);
  CHECK(cells.size() == a.cells.size());
  std::map<Specificity, int> n;
  for (const auto& c : cells) {
    const CellKey k{c.layer, c.head, c.component, c.token_class};
    CHECK(c.label == classify(a.cells.at(k).significant, b.cells.at(k).significant));
    ++n[c.label];
  }
  CHECK(n[Specificity::both] + n[Specificity::context_only] + n[Specificity::syntax_only] +
            n[Specificity::neither] ==
        static_cast<int>(cells.size()));
}
