#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "support.hpp"
#include "winocirc/intervention.hpp"
#include "winocirc/toy.hpp"

using namespace winocirc;

namespace {

WinogradPair toy_pair(std::uint64_t seed, const ModelConfig& cfg, Condition c, int length = 12,
                      int answer = 1, bool identical = false, int context = 1) {
  ToyPairSpec s;
  s.condition = c;
  s.length = length;
  s.answer_tokens = answer;
  s.identical = identical;
  s.context_tokens = context;
  return make_toy_pair(seed, cfg, s);
}

double flip_effect(const PairScores& b) {
  // Interchanging everything turns s_A into s_B: post = the other sentence.
  const double ab = (b.logp_NA_sA - b.logp_NB_sA) - (b.logp_NA_sB - b.logp_NB_sB);
  const double ba = (b.logp_NB_sB - b.logp_NA_sB) - (b.logp_NB_sA - b.logp_NA_sA);
  return (ab + ba) / 2.0;
}

double member_mean(const InterchangeContext& ctx, const TokenClassMap& classes, TokenClass c,
                   const std::function<ActivationSite(int)>& site_at) {
  const auto members = classes.members(c);
  double sum = 0.0;
  for (int t : members) sum += ctx.effect(site_at(t)).log_effect;
  return sum / static_cast<double>(members.size());
}

}  // namespace

TEST_CASE("layer sweep on an identical synonym pair is exactly zero") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(1, cfg, Condition::synonym, 12, 1, true);
  const PairSweep s = layer_sweep(m, p, annotate_classes(p, false));
  for (const auto& r : s.rows) CHECK(r.log_effect == 0.0);
  for (const auto& [k, v] : s.cells) CHECK(v == 0.0);

  const SweepResult ctl = synonym_control(m, {p}, false);
  CHECK(ctl.kind == SweepKind::synonym);
  for (const auto& [k, v] : ctl.grid.cells) CHECK(v == std::vector<double>{0.0});
}

TEST_CASE("synonym control under random weights is generally nonzero") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const SweepResult r = synonym_control(m, {toy_pair(2, cfg, Condition::synonym)}, false);
  bool nonzero = false;
  for (const auto& [k, v] : r.grid.cells) nonzero = nonzero || (std::isfinite(v[0]) && v[0] != 0.0);
  CHECK(nonzero);
  CHECK_THROWS_AS(synonym_control(m, {toy_pair(2, cfg, Condition::context)}, false), std::invalid_argument);
}

TEST_CASE("layer sweep table has one row per layer and token") {
  const ModelConfig cfg = toy_config(LayerSharing::untied);
  const ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(3, cfg, Condition::context, 13);
  const TokenClassMap classes = annotate_classes(p, true);
  const PairSweep s = layer_sweep(m, p, classes);
  REQUIRE(s.rows.size() == static_cast<std::size_t>(cfg.num_layers * p.length()));
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    CHECK(s.rows[i].layer == static_cast<int>(i) / p.length());
    CHECK(s.rows[i].position == static_cast<int>(i) % p.length());
    CHECK(s.rows[i].token_class == classes.classes[static_cast<std::size_t>(s.rows[i].position)]);
  }
  CHECK(s.cells.size() == static_cast<std::size_t>(cfg.num_layers) * std::size(kAggregateClasses));
}

TEST_CASE("layer-0 context cell equals the full sentence flip") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const WinogradPair p = toy_pair(seed, cfg, Condition::context, 12, 1 + static_cast<int>(seed % 2));
    const PairSweep s = layer_sweep(m, p, annotate_classes(p, false));
    const double expected = flip_effect(score_pair(m, p));
    CHECK(std::abs(s.cells.at(CellKey{0, -1, Component::residual_in, TokenClass::context}) - expected) < 1e-5);
  }
}

TEST_CASE("class cells are the mean of their member tokens") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(9, cfg);
  const WinogradPair p = toy_pair(4, cfg, Condition::context_syntax, 14, 2, false, 2);
  const TokenClassMap classes = annotate_classes(p, true);
  const PairSweep s = layer_sweep(m, p, classes);
  for (const auto& [key, value] : s.cells) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : s.rows) {
      if (r.layer == key.layer && r.token_class == key.token_class) {
        sum += r.log_effect;
        ++n;
      }
    }
    REQUIRE(n > 0);
    CHECK(value == doctest::Approx(sum / n).epsilon(1e-12));
  }

  SweepOptions o;
  o.layers = std::set<int>{1};
  o.heads = std::set<int>{0, 2};
  o.components = {Component::value, Component::transformation};
  const PairSweep h = head_sweep(m, p, classes, o);
  const InterchangeContext ctx(m, p);
  for (const auto& [key, value] : h.cells) {
    CHECK(key.layer == 1);
    CHECK((key.head == 0 || key.head == 2));
    const double expected = member_mean(ctx, classes, key.token_class, [&](int t) {
      return ActivationSite{key.layer, t, key.component, key.head};
    });
    CHECK(value == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("head sweep over all components has the documented shape") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(5, cfg, Condition::context);
  const PairSweep s = head_sweep(m, p, annotate_classes(p, false));
  CHECK(s.rows.size() == static_cast<std::size_t>(cfg.num_layers * cfg.num_heads * 4) * std::size(kAggregateClasses));
  for (const auto& r : s.rows) CHECK(r.position == -1);

  SweepOptions bad;
  bad.components = {Component::residual_in};
  CHECK_THROWS_AS(head_sweep(m, p, annotate_classes(p, false), bad), std::invalid_argument);
  SweepOptions far;
  far.heads = std::set<int>{4};
  CHECK_THROWS_AS(head_sweep(m, p, annotate_classes(p, false), far), std::invalid_argument);
}

TEST_CASE("all-heads transformation interchange equals the attention-output interchange") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(6, cfg, Condition::context);
  const InterchangeContext ctx(m, p);
  for (int l = 0; l < cfg.num_layers; ++l) {
    for (int t : {p.context_span_A.start, p.mask_span.start, p.length() - 1}) {
      const double heads = ctx.effect({l, t, Component::transformation, kAllHeads}).log_effect;
      std::vector<ActivationSite> each;
      for (int h = 0; h < cfg.num_heads; ++h) each.push_back({l, t, Component::transformation, h});
      const double joint = ctx.effect(each).log_effect;
      const double block = ctx.effect({l, t, Component::attention_output, std::nullopt}).log_effect;
      CHECK(std::abs(heads - block) < 1e-5);
      CHECK(std::abs(joint - block) < 1e-5);
    }
  }
}

TEST_CASE("value interchange at a token nobody attends to has no effect") {
  ModelConfig cfg = toy_config();
  cfg.embedding_dim = cfg.hidden_dim;
  ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(8, cfg, Condition::context);
  const int target = p.context_span_A.start;
  const auto H = static_cast<std::size_t>(cfg.hidden_dim);
  const auto d = static_cast<std::size_t>(cfg.head_dim);

  // A spike in feature 0 marks the two context words; head 0's key reads
  // only that feature with a large negative weight and its query is a
  // constant, so every query scores the marked key far below the rest.
  auto& words = m.mutable_tensor("embeddings.word").data;
  for (TokenId id : {p.tokens_A[static_cast<std::size_t>(target)], p.tokens_B[static_cast<std::size_t>(target)]}) {
    words[static_cast<std::size_t>(id) * H] = 50.0f;
  }
  auto& wq = m.mutable_tensor("layers.0.attention.query.weight").data;
  auto& bq = m.mutable_tensor("layers.0.attention.query.bias").data;
  auto& wk = m.mutable_tensor("layers.0.attention.key.weight").data;
  auto& bk = m.mutable_tensor("layers.0.attention.key.bias").data;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < H; ++c) {
      wq[r * H + c] = 0.0f;
      wk[r * H + c] = 0.0f;
    }
    bq[r] = r == 0 ? 1.0f : 0.0f;
    bk[r] = 0.0f;
  }
  wk[0] = -1000.0f;

  const InterchangeContext ctx(m, p);
  for (bool a : {true, false}) {
    const ForwardTrace& t = ctx.trace(a, 1);
    for (int q = 0; q < p.length(); ++q) REQUIRE(t.attention_weight(0, 0, q, target) == 0.0f);
  }
  const ActivationSite site{0, target, Component::value, 0};
  REQUIRE(ctx.trace(true, 1).site_value(site)[0] != ctx.trace(false, 1).site_value(site)[0]);
  CHECK(std::abs(ctx.effect(site).log_effect) < 1e-6);
}

TEST_CASE("cumulative sweep") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  for (int i = 0; i < cfg.num_layers; ++i) {
    CHECK(cumulative_sites(cfg, i, 3).size() == static_cast<std::size_t>((i + 1) * cfg.num_heads));
  }

  const WinogradPair p = toy_pair(9, cfg, Condition::context, 13, 1, false, 2);
  const TokenClassMap classes = annotate_classes(p, false);
  const PairSweep s = cumulative_sweep(m, p, classes);
  const InterchangeContext ctx(m, p);
  const auto single = [&](int layer) {
    return [&, layer](int t) { return ActivationSite{layer, t, Component::transformation, kAllHeads}; };
  };
  for (TokenClass c : kAggregateClasses) {
    CAPTURE(to_string(c));
    const double cum0 = s.cells.at(CellKey{0, -1, Component::transformation, c});
    CHECK(std::abs(cum0 - member_mean(ctx, classes, c, single(0))) < 1e-9);
  }
  // Layer-0 transformations at the context words carry the context, so the
  // prefix at layer 1 is not the layer-1 interchange alone.
  const double cum1 = s.cells.at(CellKey{1, -1, Component::transformation, TokenClass::context});
  const double only1 = member_mean(ctx, classes, TokenClass::context, single(1));
  CHECK(std::abs(cum1 - only1) > 1e-6);
}

TEST_CASE("sweep grids hold one value per pair") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const auto pairs = make_toy_dataset(3, cfg, 4, {Condition::context});
  for (SweepKind kind : {SweepKind::layers, SweepKind::heads, SweepKind::cumulative}) {
    SweepOptions o;
    o.components = {Component::query};
    const SweepResult r = run_sweep(m, pairs, kind, true, o);
    CHECK(r.grid.pair_ids.size() == pairs.size());
    for (const auto& [k, v] : r.grid.cells) CHECK(v.size() == pairs.size());
  }
}

TEST_CASE("parallel and serial sweeps agree exactly") {
  const ModelConfig cfg = toy_config(LayerSharing::untied);
  const ModelBundle m = generate_toy_model(21, cfg);
  const auto pairs = make_toy_dataset(5, cfg, 3, {Condition::context});
  for (SweepKind kind : {SweepKind::layers, SweepKind::heads, SweepKind::cumulative}) {
    SweepOptions serial, parallel;
    serial.threads = 1;
    parallel.threads = 4;
    const SweepResult a = run_sweep(m, pairs, kind, false, serial);
    const SweepResult b = run_sweep(m, pairs, kind, false, parallel);
    CHECK(a.rows == b.rows);
    CHECK(a.grid.cells == b.grid.cells);
  }
}

TEST_CASE("layer filters restrict the sweep") {
  const ModelConfig cfg = toy_config();
  const ModelBundle m = generate_toy_model(7, cfg);
  const WinogradPair p = toy_pair(3, cfg, Condition::context);
  SweepOptions o;
  o.layers = std::set<int>{1};
  const PairSweep s = layer_sweep(m, p, annotate_classes(p, false), o);
  CHECK(s.rows.size() == static_cast<std::size_t>(p.length()));
  for (const auto& r : s.rows) CHECK(r.layer == 1);
  o.layers = std::set<int>{2};
  CHECK_THROWS_AS(layer_sweep(m, p, annotate_classes(p, false), o), std::invalid_argument);
}

TEST_CASE("parallel_for visits every index and surfaces failures") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 100);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
