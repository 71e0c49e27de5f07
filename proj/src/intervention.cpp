#include "winocirc/intervention.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace winocirc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> selected(const std::optional<std::set<int>>& filter, int count, const char* what) {
  std::vector<int> out;
  if (!filter) {
    for (int i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  for (int i : *filter) {
    if (i < 0 || i >= count) {
      throw std::invalid_argument(fmt::format("{} {} out of range [0, {})", what, i, count));
    }
    out.push_back(i);
  }
  return out;
}

struct ClassMean {
  double ab = 0.0, ba = 0.0, avg = 0.0;
  int n = 0;

  void add(const EffectRecord& r) {
    ab += r.log_effect_dir_AB();
    ba += r.log_effect_dir_BA();
    avg += r.log_effect;
    ++n;
  }
  double mean(double sum) const { return n == 0 ? kNaN : sum / n; }
};

void check_pair(const WinogradPair& pair, const TokenClassMap& classes) {
  if (static_cast<int>(classes.size()) != pair.length()) {
    throw std::invalid_argument(fmt::format("class map of {} entries for pair {} of length {}",
                                            classes.size(), pair.pair_id, pair.length()));
  }
}

}  // namespace

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::layers: return "layers";
    case SweepKind::heads: return "heads";
    case SweepKind::cumulative: return "cumulative";
    case SweepKind::synonym: return "synonym";
  }
  return "unknown";
}

SweepKind parse_sweep_kind(const std::string& s) {
  for (auto k : {SweepKind::layers, SweepKind::heads, SweepKind::cumulative, SweepKind::synonym}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown sweep kind '" + s + "'");
}

std::string to_string(const CellKey& k) {
  return fmt::format("layer={} head={} component={} class={}", k.layer, k.head,
                     to_string(k.component), to_string(k.token_class));
}

ForwardTrace record(const ModelBundle& model, std::span<const TokenId> tokens) {
  return forward(model, tokens, PatchSet{});
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

PairSweep layer_sweep(const ModelBundle& model, const WinogradPair& pair,
                      const TokenClassMap& classes, const SweepOptions& options) {
  check_pair(pair, classes);
  const InterchangeContext ctx(model, pair);
  const auto layers = selected(options.layers, static_cast<int>(model.config().num_layers), "layer");
  const int T = pair.length();

  std::vector<EffectRecord> effects(layers.size() * static_cast<std::size_t>(T));
  parallel_for(effects.size(), options.threads, [&](std::size_t i) {
    const ActivationSite site{layers[i / T], static_cast<int>(i % T), Component::residual_in, {}};
    effects[i] = ctx.effect(site);
  });

  PairSweep out{pair.pair_id, pair.condition, {}, {}};
  for (std::size_t li = 0; li < layers.size(); ++li) {
    std::map<TokenClass, ClassMean> means;
    for (int t = 0; t < T; ++t) {
      const EffectRecord& e = effects[li * T + t];
      const TokenClass c = classes.classes[static_cast<std::size_t>(t)];
      out.rows.push_back(SweepRow{pair.pair_id, pair.condition, layers[li], -1,
                                  Component::residual_in, c, t, e.log_effect_dir_AB(),
                                  e.log_effect_dir_BA(), e.log_effect});
      means[c].add(e);
    }
    for (TokenClass c : kAggregateClasses) {
      out.cells[CellKey{layers[li], -1, Component::residual_in, c}] = means[c].mean(means[c].avg);
    }
  }
  return out;
}

PairSweep head_sweep(const ModelBundle& model, const WinogradPair& pair,
                     const TokenClassMap& classes, const SweepOptions& options) {
  check_pair(pair, classes);
  for (Component c : options.components) {
    if (!is_head_scoped(c)) {
      throw std::invalid_argument("head sweeps take transformation/query/key/value, not " +
                                  to_string(c));
    }
  }
  const InterchangeContext ctx(model, pair);
  const auto& cfg = model.config();
  const auto layers = selected(options.layers, static_cast<int>(cfg.num_layers), "layer");
  const auto heads = selected(options.heads, static_cast<int>(cfg.num_heads), "head");

  // Only tokens that feed a class aggregate are interchanged.
  std::vector<int> positions;
  for (int t = 0; t < pair.length(); ++t) {
    if (classes.classes[static_cast<std::size_t>(t)] != TokenClass::excluded) positions.push_back(t);
  }
  const std::size_t per_layer_head = options.components.size() * positions.size();
  const std::size_t per_layer = heads.size() * per_layer_head;
  std::vector<EffectRecord> effects(layers.size() * per_layer);
  parallel_for(effects.size(), options.threads, [&](std::size_t i) {
    const std::size_t li = i / per_layer, hi = (i % per_layer) / per_layer_head;
    const std::size_t ci = (i % per_layer_head) / positions.size(), ti = i % positions.size();
    const ActivationSite site{layers[li], positions[ti], options.components[ci], heads[hi]};
    effects[i] = ctx.effect(site);
  });

  PairSweep out{pair.pair_id, pair.condition, {}, {}};
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t hi = 0; hi < heads.size(); ++hi) {
      for (std::size_t ci = 0; ci < options.components.size(); ++ci) {
        std::map<TokenClass, ClassMean> means;
        for (std::size_t ti = 0; ti < positions.size(); ++ti) {
          const auto& e = effects[li * per_layer + hi * per_layer_head + ci * positions.size() + ti];
          means[classes.classes[static_cast<std::size_t>(positions[ti])]].add(e);
        }
        for (TokenClass c : kAggregateClasses) {
          const ClassMean& m = means[c];
          const CellKey key{layers[li], heads[hi], options.components[ci], c};
          out.rows.push_back(SweepRow{pair.pair_id, pair.condition, key.layer, key.head,
                                      key.component, c, -1, m.mean(m.ab), m.mean(m.ba),
                                      m.mean(m.avg)});
          out.cells[key] = m.mean(m.avg);
        }
      }
    }
  }
  return out;
}

std::vector<ActivationSite> cumulative_sites(const ModelConfig& config, int last_layer,
                                             int position) {
  std::vector<ActivationSite> sites;
  for (int l = 0; l <= last_layer; ++l) {
    for (int h = 0; h < config.num_heads; ++h) {
      sites.push_back(ActivationSite{l, position, Component::transformation, h});
    }
  }
  return sites;
}

PairSweep cumulative_sweep(const ModelBundle& model, const WinogradPair& pair,
                           const TokenClassMap& classes, const SweepOptions& options) {
  check_pair(pair, classes);
  const InterchangeContext ctx(model, pair);
  const auto layers = selected(options.layers, static_cast<int>(model.config().num_layers), "layer");
  std::vector<int> positions;
  for (int t = 0; t < pair.length(); ++t) {
    if (classes.classes[static_cast<std::size_t>(t)] != TokenClass::excluded) positions.push_back(t);
  }
  std::vector<EffectRecord> effects(layers.size() * positions.size());
  parallel_for(effects.size(), options.threads, [&](std::size_t i) {
    const auto sites = cumulative_sites(model.config(), layers[i / positions.size()],
                                        positions[i % positions.size()]);
    effects[i] = ctx.effect(sites);
  });

  PairSweep out{pair.pair_id, pair.condition, {}, {}};
  for (std::size_t li = 0; li < layers.size(); ++li) {
    std::map<TokenClass, ClassMean> means;
    for (std::size_t ti = 0; ti < positions.size(); ++ti) {
      means[classes.classes[static_cast<std::size_t>(positions[ti])]].add(
          effects[li * positions.size() + ti]);
    }
    for (TokenClass c : kAggregateClasses) {
      const ClassMean& m = means[c];
      const CellKey key{layers[li], -1, Component::transformation, c};
      out.rows.push_back(SweepRow{pair.pair_id, pair.condition, key.layer, -1, key.component, c,
                                  -1, m.mean(m.ab), m.mean(m.ba), m.mean(m.avg)});
      out.cells[key] = m.mean(m.avg);
    }
  }
  return out;
}

SweepGrid build_grid(SweepKind kind, const std::vector<PairSweep>& sweeps) {
  SweepGrid grid;
  grid.kind = kind;
  for (const auto& s : sweeps) grid.pair_ids.push_back(s.pair_id);
  for (std::size_t p = 0; p < sweeps.size(); ++p) {
    for (const auto& [key, value] : sweeps[p].cells) {
      auto [it, inserted] = grid.cells.try_emplace(key, sweeps.size(), kNaN);
      it->second[p] = value;
    }
  }
  return grid;
}

SweepResult collect(SweepKind kind, std::vector<PairSweep> sweeps) {
  SweepResult result;
  result.kind = kind;
  result.grid = build_grid(kind, sweeps);
  for (auto& s : sweeps) {
    result.rows.insert(result.rows.end(), std::make_move_iterator(s.rows.begin()),
                       std::make_move_iterator(s.rows.end()));
  }
  return result;
}

SweepResult synonym_control(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                            bool exclude_specials, const SweepOptions& options) {
  std::vector<PairSweep> sweeps;
  for (const auto& pair : pairs) {
    if (pair.condition != Condition::synonym) {
      throw std::invalid_argument("synonym control got pair " + pair.pair_id + " of condition " +
                                  to_string(pair.condition));
    }
    sweeps.push_back(layer_sweep(model, pair, annotate_classes(pair, exclude_specials), options));
  }
  return collect(SweepKind::synonym, std::move(sweeps));
}

SweepResult run_sweep(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                      SweepKind kind, bool exclude_specials, const SweepOptions& options) {
  if (kind == SweepKind::synonym) return synonym_control(model, pairs, exclude_specials, options);
  std::vector<PairSweep> sweeps;
  sweeps.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const TokenClassMap classes = annotate_classes(pair, exclude_specials);
    switch (kind) {
      case SweepKind::layers: sweeps.push_back(layer_sweep(model, pair, classes, options)); break;
      case SweepKind::heads: sweeps.push_back(head_sweep(model, pair, classes, options)); break;
      case SweepKind::cumulative:
        sweeps.push_back(cumulative_sweep(model, pair, classes, options));
        break;
      case SweepKind::synonym: break;
    }
  }
  return collect(kind, std::move(sweeps));
}

}  // namespace winocirc
