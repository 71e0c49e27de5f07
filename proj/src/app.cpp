#include "winocirc/app.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace winocirc {

using nlohmann::json;

// ---- digests and manifests -------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return sha256_hex(bytes);
}

std::string manifest_timestamp() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json RunManifest::to_json() const {
  return json{{"command", command},
              {"model_digest", model_digest},
              {"dataset_digest", dataset_digest},
              {"seeds", seeds},
              {"selection", selection},
              {"timestamp", timestamp},
              {"tool_version", tool_version},
              {"parameters", parameters}};
}

std::string RunManifest::digest() const { return sha256_hex(to_json().dump()); }

std::string to_string(Selection s) {
  switch (s) {
    case Selection::strict: return "strict";
    case Selection::weak: return "weak";
    case Selection::all: return "all";
  }
  return "unknown";
}

Selection parse_selection(const std::string& s) {
  if (s == "strict") return Selection::strict;
  if (s == "weak") return Selection::weak;
  if (s == "all") return Selection::all;
  throw std::invalid_argument("unknown selection '" + s + "'");
}

Workspace load_workspace(const std::string& model_path, const std::string& dataset_path,
                         const std::string& vocabulary_path) {
  Workspace ws{load_model_file(model_path), {}, {}, sha256_file(model_path), sha256_file(dataset_path)};
  ParseResult parsed = parse_dataset_file(dataset_path, ws.model.config().mask_token_id);
  if (!parsed.errors.empty()) {
    std::string msg = fmt::format("{} invalid dataset line(s)", parsed.errors.size());
    for (const auto& e : parsed.errors) {
      msg += fmt::format("\n  line {} ({}): {}", e.line, e.pair_id, e.message);
    }
    throw DatasetError(msg);
  }
  ws.pairs = std::move(parsed.pairs);
  if (!vocabulary_path.empty()) ws.vocabulary = Vocabulary::load_file(vocabulary_path);
  return ws;
}

const PairScores& ScoreCache::get(const WinogradPair& pair) {
  const auto key = std::make_pair(pair.pair_id, pair.condition);
  auto it = scores_.find(key);
  if (it == scores_.end()) it = scores_.emplace(key, score_pair(model_, pair)).first;
  return it->second;
}

std::vector<WinogradPair> select_pairs(const ModelBundle& model,
                                       const std::vector<WinogradPair>& all, Condition condition,
                                       Selection selection, int max_pairs,
                                       const std::vector<std::string>& pair_ids) {
  std::map<std::pair<std::string, Condition>, const WinogradPair*> index;
  for (const auto& p : all) index[{p.pair_id, p.condition}] = &p;
  const std::set<std::string> wanted(pair_ids.begin(), pair_ids.end());
  ScoreCache cache(model);
  auto passes = [&](const WinogradPair& p) {
    const PairScores& s = cache.get(p);
    return selection == Selection::strict ? strict_metric(s) : weak_metric(s);
  };

  std::vector<WinogradPair> out;
  for (const auto& p : all) {
    if (max_pairs >= 0 && static_cast<int>(out.size()) >= max_pairs) break;
    if (p.condition != condition) continue;
    if (!wanted.empty() && !wanted.contains(p.pair_id)) continue;
    if (selection != Selection::all) {
      std::vector<const WinogradPair*> judges;
      for (Condition c : {Condition::context, Condition::syntax_only}) {
        if (auto it = index.find({p.pair_id, c}); it != index.end()) judges.push_back(it->second);
      }
      if (judges.empty()) judges.push_back(&p);
      bool ok = true;
      for (const auto* j : judges) ok = ok && passes(*j);
      if (!ok) continue;
    }
    out.push_back(p);
  }
  return out;
}

// ---- commands ---------------------------------------------------------------

EvaluateReport cmd_evaluate(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                            std::optional<Condition> condition, int max_pairs) {
  EvaluateReport report;
  for (Condition c : {Condition::context, Condition::context_syntax, Condition::syntax_only,
                      Condition::synonym}) {
    if (condition && *condition != c) continue;
    ConditionSummary summary{c, 0, 0.0, 0.0};
    std::size_t strict = 0, weak = 0;
    for (const auto& p : pairs) {
      if (p.condition != c) continue;
      if (max_pairs >= 0 && static_cast<int>(summary.n) >= max_pairs) break;
      EvaluateRow row{p.pair_id, c, score_pair(model, p), false, false};
      row.strict = strict_metric(row.scores);
      row.weak = weak_metric(row.scores);
      strict += row.strict;
      weak += row.weak;
      ++summary.n;
      report.rows.push_back(row);
    }
    if (summary.n == 0) continue;
    summary.strict_pct = 100.0 * static_cast<double>(strict) / static_cast<double>(summary.n);
    summary.weak_pct = 100.0 * static_cast<double>(weak) / static_cast<double>(summary.n);
    report.summaries.push_back(summary);
  }
  return report;
}

SweepReport cmd_sweep(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                      const SweepRequest& request) {
  SweepReport report;
  report.request = request;
  if (request.kind == SweepKind::synonym) report.request.condition = Condition::synonym;
  const auto selected = select_pairs(model, pairs, report.request.condition, request.selection,
                                     request.max_pairs, request.pair_ids);
  for (const auto& p : selected) report.pair_ids.push_back(p.pair_id);
  report.result = run_sweep(model, selected, request.kind, request.exclude_specials, request.options);
  report.stats = grid_stats(report.result.grid, request.stats, request.options.threads);
  return report;
}

BiasReport cmd_bias_check(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                          SimilarityMeasure measure, int max_pairs) {
  BiasReport report;
  report.measure = measure;
  for (const auto& p : pairs) {
    if (p.condition != Condition::context) continue;
    if (max_pairs >= 0 && static_cast<int>(report.rows.size()) >= max_pairs) break;
    BiasRow row{p.pair_id, embedding_bias_predict(model, p, measure), false};
    row.model_strict = strict_metric(score_pair(model, p));
    report.correct += row.prediction.pair_correct();
    report.strict_correct += row.model_strict;
    report.overlap += row.model_strict && row.prediction.pair_correct();
    report.multi_token += row.prediction.multi_token;
    report.rows.push_back(std::move(row));
  }
  if (!report.rows.empty()) {
    report.accuracy_pct =
        100.0 * static_cast<double>(report.correct) / static_cast<double>(report.rows.size());
  }
  return report;
}

SpecificityReport cmd_specificity(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                                  SweepRequest request) {
  request.kind = SweepKind::heads;
  request.condition = Condition::context;
  SpecificityReport report;
  report.context = cmd_sweep(model, pairs, request);
  SweepRequest syntax = request;
  syntax.condition = Condition::syntax_only;
  syntax.selection = Selection::all;
  syntax.max_pairs = -1;
  syntax.pair_ids = report.context.pair_ids;
  if (syntax.pair_ids.empty()) syntax.max_pairs = 0;
  report.syntax = cmd_sweep(model, pairs, syntax);
  report.cells = specificity_map(report.context.stats, report.syntax.stats);
  return report;
}

// ---- serialization ------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

double finite_mean(const std::vector<double>& values) {
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  return finite.empty() ? std::numeric_limits<double>::quiet_NaN() : stable_mean(finite);
}

constexpr const char* kSweepHeader =
    "pair_id\tcondition\tlayer\thead\tcomponent\tclass\tposition\tlog_effect_dir_AB\t"
    "log_effect_dir_BA\tlog_effect\n";

}  // namespace

std::string evaluate_pairs_tsv(const EvaluateReport& r) {
  std::string out = "pair_id\tcondition\tlogp_NA_sA\tlogp_NB_sA\tlogp_NA_sB\tlogp_NB_sB\tstrict\tweak\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", row.pair_id, to_string(row.condition),
                       format_double(row.scores.logp_NA_sA), format_double(row.scores.logp_NB_sA),
                       format_double(row.scores.logp_NA_sB), format_double(row.scores.logp_NB_sB),
                       int{row.strict}, int{row.weak});
  }
  return out;
}

std::string evaluate_summary_tsv(const EvaluateReport& r) {
  std::string out = "condition\tn\tstrict_pct\tweak_pct\n";
  for (const auto& s : r.summaries) {
    out += fmt::format("{}\t{}\t{:.1f}\t{:.1f}\n", to_string(s.condition), s.n, s.strict_pct,
                       s.weak_pct);
  }
  return out;
}

std::string sweep_table_tsv(const std::vector<SweepRow>& rows) {
  std::string out = kSweepHeader;
  for (const auto& r : rows) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.pair_id, to_string(r.condition),
                       r.layer, r.head, to_string(r.component), to_string(r.token_class), r.position,
                       format_double(r.log_effect_dir_AB), format_double(r.log_effect_dir_BA),
                       format_double(r.log_effect));
  }
  return out;
}

std::vector<SweepRow> parse_sweep_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != kSweepHeader) {
    throw std::invalid_argument("sweep table header mismatch");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() != 10) throw std::invalid_argument("sweep table row has wrong arity: " + line);
    rows.push_back(SweepRow{f[0], parse_condition(f[1]), std::stoi(f[2]), std::stoi(f[3]),
                            parse_component(f[4]), parse_token_class(f[5]), std::stoi(f[6]),
                            parse_double(f[7]), parse_double(f[8]), parse_double(f[9])});
  }
  return rows;
}

std::map<std::string, std::string> plot_files(SweepKind kind, const std::vector<SweepRow>& rows) {
  std::map<std::string, std::string> files;
  // Class means per pair, then across pairs.
  std::map<CellKey, std::vector<double>> per_pair;  // cell -> value per pair (pair order)
  std::vector<std::string> pair_order;
  std::map<std::string, std::size_t> pair_index;
  for (const auto& r : rows) {
    const std::string key = r.pair_id + "\x1f" + to_string(r.condition);
    if (pair_index.try_emplace(key, pair_order.size()).second) pair_order.push_back(key);
  }

  if (kind == SweepKind::layers || kind == SweepKind::synonym) {
    // Per-pair token heatmaps and per-(pair, layer, class) token sums.
    std::map<std::pair<std::size_t, CellKey>, std::pair<double, int>> sums;
    std::map<std::size_t, std::map<int, std::map<int, double>>> heat;  // pair -> layer -> pos
    for (const auto& r : rows) {
      const std::size_t p = pair_index.at(r.pair_id + "\x1f" + to_string(r.condition));
      heat[p][r.layer][r.position] = r.log_effect;
      if (r.token_class == TokenClass::excluded) continue;
      auto& s = sums[{p, CellKey{r.layer, -1, r.component, r.token_class}}];
      s.first += r.log_effect;
      s.second += 1;
    }
    for (const auto& [p, layers] : heat) {
      const auto sep = pair_order[p].find('\x1f');
      const std::string name = fmt::format("heatmap_{}_{}.tsv", safe_name(pair_order[p].substr(0, sep)),
                                           pair_order[p].substr(sep + 1));
      std::string text = "layer";
      for (const auto& [pos, v] : layers.begin()->second) text += fmt::format("\tpos{}", pos);
      text += '\n';
      for (const auto& [layer, positions] : layers) {
        text += std::to_string(layer);
        for (const auto& [pos, v] : positions) text += "\t" + format_double(v);
        text += '\n';
      }
      files[name] = text;
    }
    for (const auto& [key, s] : sums) {
      auto& v = per_pair.try_emplace(key.second, pair_order.size(),
                                     std::numeric_limits<double>::quiet_NaN()).first->second;
      v[key.first] = s.first / s.second;
    }
  } else {
    for (const auto& r : rows) {
      const std::size_t p = pair_index.at(r.pair_id + "\x1f" + to_string(r.condition));
      auto& v = per_pair.try_emplace(CellKey{r.layer, r.head, r.component, r.token_class},
                                     pair_order.size(), std::numeric_limits<double>::quiet_NaN())
                    .first->second;
      v[p] = r.log_effect;
    }
  }

  if (kind == SweepKind::heads) {
    // One head x layer grid per (component, class).
    std::map<std::pair<Component, TokenClass>, std::map<int, std::map<int, double>>> grids;
    for (const auto& [key, values] : per_pair) {
      grids[{key.component, key.token_class}][key.head][key.layer] = finite_mean(values);
    }
    for (const auto& [ck, heads] : grids) {
      std::string text = "head";
      for (const auto& [layer, v] : heads.begin()->second) text += fmt::format("\tlayer{}", layer);
      text += '\n';
      for (const auto& [head, layers] : heads) {
        text += std::to_string(head);
        for (const auto& [layer, v] : layers) text += "\t" + format_double(v);
        text += '\n';
      }
      files[fmt::format("heads_{}_{}.tsv", to_string(ck.first), to_string(ck.second))] = text;
    }
  } else {
    std::map<int, std::map<TokenClass, double>> means;
    for (const auto& [key, values] : per_pair) means[key.layer][key.token_class] = finite_mean(values);
    std::string text = "layer";
    for (TokenClass c : kAggregateClasses) text += "\t" + to_string(c);
    text += '\n';
    for (const auto& [layer, classes] : means) {
      text += std::to_string(layer);
      for (TokenClass c : kAggregateClasses) {
        auto it = classes.find(c);
        text += "\t" + format_double(it == classes.end() ? std::numeric_limits<double>::quiet_NaN()
                                                         : it->second);
      }
      text += '\n';
    }
    files["class_means.tsv"] = text;
  }
  return files;
}

std::string stats_table_tsv(const GridStats& stats) {
  std::string out =
      "layer\thead\tcomponent\tclass\tn\tmean\tci_low\tci_high\tt_stat\tdf\tp_value\tsignificant\t"
      "degenerate\n";
  for (const auto& [k, s] : stats.cells) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", k.layer, k.head,
                       to_string(k.component), to_string(k.token_class), s.n, format_double(s.mean),
                       format_double(s.ci_low), format_double(s.ci_high), format_double(s.t_stat),
                       s.df, format_double(s.p_value), int{s.significant}, int{s.degenerate});
  }
  return out;
}

std::string paired_difference_tsv(const SweepGrid& grid) {
  std::string out =
      "test\tlayer\thead\tcomponent\tclass_a\tclass_b\tn\tmean_difference\tt_stat\tdf\tp_value\n";
  std::map<std::tuple<int, int, Component>, std::map<TokenClass, const std::vector<double>*>> groups;
  for (const auto& [k, v] : grid.cells) groups[{k.layer, k.head, k.component}][k.token_class] = &v;
  for (const auto& [g, classes] : groups) {
    for (std::size_t i = 0; i < std::size(kAggregateClasses); ++i) {
      for (std::size_t j = i + 1; j < std::size(kAggregateClasses); ++j) {
        auto a = classes.find(kAggregateClasses[i]), b = classes.find(kAggregateClasses[j]);
        if (a == classes.end() || b == classes.end()) continue;
        std::vector<double> xa, xb;
        for (std::size_t p = 0; p < a->second->size(); ++p) {
          const double va = (*a->second)[p], vb = (*b->second)[p];
          if (std::isfinite(va) && std::isfinite(vb)) {
            xa.push_back(va);
            xb.push_back(vb);
          }
        }
        double mean = std::numeric_limits<double>::quiet_NaN();
        TTest t{std::numeric_limits<double>::quiet_NaN(), static_cast<int>(xa.size()) - 1, 1.0};
        if (!xa.empty()) {
          std::vector<double> d(xa.size());
          for (std::size_t p = 0; p < xa.size(); ++p) d[p] = xa[p] - xb[p];
          mean = stable_mean(d);
          try {
            t = paired_difference_t(xa, xb);
          } catch (const StatsError&) {
          }
        }
        out += fmt::format("paired_difference\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                           std::get<0>(g), std::get<1>(g), to_string(std::get<2>(g)),
                           to_string(kAggregateClasses[i]), to_string(kAggregateClasses[j]),
                           xa.size(), format_double(mean), format_double(t.t), t.df,
                           format_double(t.p));
      }
    }
  }
  return out;
}

std::string specificity_tsv(const std::vector<SpecificityCell>& cells) {
  std::string out = "head\tlayer\tcomponent\tclass\tlabel\n";
  for (const auto& c : cells) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\n", c.head, c.layer, to_string(c.component),
                       to_string(c.token_class), to_string(c.label));
  }
  return out;
}

std::string bias_tsv(const BiasReport& r) {
  std::string out =
      "pair_id\tpredicted_A\tpredicted_B\tcorrect_A\tcorrect_B\tpair_correct\tmodel_strict\tmulti_token\n";
  for (const auto& row : r.rows) {
    const auto& p = row.prediction;
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", row.pair_id, to_string(p.predicted_A),
                       to_string(p.predicted_B), to_string(p.correct_A), to_string(p.correct_B),
                       int{p.pair_correct()}, int{row.model_strict}, int{p.multi_token});
  }
  return out;
}

json scores_json(const PairScores& s) {
  return json{{"logp_NA_sA", s.logp_NA_sA},
              {"logp_NB_sA", s.logp_NB_sA},
              {"logp_NA_sB", s.logp_NA_sB},
              {"logp_NB_sB", s.logp_NB_sB},
              {"strict", strict_metric(s)},
              {"weak", weak_metric(s)}};
}

json site_json(const ActivationSite& s) {
  json j{{"layer", s.layer}, {"position", s.position}, {"component", to_string(s.component)}};
  if (s.head) {
    if (*s.head == kAllHeads) j["head"] = "all";
    else j["head"] = *s.head;
  }
  return j;
}

ActivationSite site_from_json(const json& j) {
  ActivationSite s;
  s.layer = j.at("layer").get<int>();
  s.position = j.at("position").get<int>();
  s.component = parse_component(j.at("component").get<std::string>());
  if (j.contains("head") && !j["head"].is_null()) {
    if (j["head"].is_string()) {
      if (j["head"].get<std::string>() != "all") throw std::invalid_argument("head must be an index or \"all\"");
      s.head = kAllHeads;
    } else {
      s.head = j["head"].get<int>();
    }
  }
  return s;
}

json effect_json(const EffectRecord& e) {
  auto direction = [](const DirectionEffect& d) {
    return json{{"y_pre", d.y_pre()},
                {"y_post", d.y_post()},
                {"log_y_pre", d.log_y_pre},
                {"log_y_post", d.log_y_post},
                {"log_effect", d.log_effect()}};
  };
  return json{{"site", site_json(e.site)},
              {"dir_AB", direction(e.ab)},
              {"dir_BA", direction(e.ba)},
              {"log_effect", e.log_effect}};
}

json sweep_rows_json(const std::vector<SweepRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    out.push_back(json{{"pair_id", r.pair_id},
                       {"condition", to_string(r.condition)},
                       {"layer", r.layer},
                       {"head", r.head},
                       {"component", to_string(r.component)},
                       {"class", to_string(r.token_class)},
                       {"position", r.position},
                       {"log_effect_dir_AB", num(r.log_effect_dir_AB)},
                       {"log_effect_dir_BA", num(r.log_effect_dir_BA)},
                       {"log_effect", num(r.log_effect)}});
  }
  return out;
}

json grid_json(const SweepGrid& grid) {
  json cells = json::array();
  for (const auto& [k, values] : grid.cells) {
    json v = json::array();
    for (double x : values) v.push_back(std::isfinite(x) ? json(x) : json(nullptr));
    cells.push_back(json{{"layer", k.layer},
                         {"head", k.head},
                         {"component", to_string(k.component)},
                         {"class", to_string(k.token_class)},
                         {"values", v}});
  }
  return json{{"kind", to_string(grid.kind)}, {"pair_ids", grid.pair_ids}, {"cells", cells}};
}

void write_outputs(const std::filesystem::path& dir, const std::map<std::string, std::string>& files,
                   const RunManifest& manifest) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    const auto path = dir / name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
  };
  for (const auto& [name, text] : files) write(name, text);
  write("manifest.json", manifest.to_json().dump(2) + "\n");
}

std::map<std::string, std::string> evaluate_files(const EvaluateReport& r) {
  return {{"evaluate_pairs.tsv", evaluate_pairs_tsv(r)},
          {"evaluate_summary.tsv", evaluate_summary_tsv(r)}};
}

std::map<std::string, std::string> sweep_files(const SweepReport& r) {
  std::map<std::string, std::string> files{
      {"sweep.tsv", sweep_table_tsv(r.result.rows)},
      {"sweep.json", json{{"rows", sweep_rows_json(r.result.rows)}, {"grid", grid_json(r.result.grid)}}
                         .dump(1) + "\n"},
      {"stats.tsv", stats_table_tsv(r.stats)},
      {"paired_differences.tsv", paired_difference_tsv(r.result.grid)},
  };
  for (auto& [name, text] : plot_files(r.result.kind, r.result.rows)) {
    files["plot/" + name] = std::move(text);
  }
  return files;
}

std::map<std::string, std::string> bias_files(const BiasReport& r) {
  const json summary{{"measure", to_string(r.measure)},
                     {"pairs", r.rows.size()},
                     {"correct", r.correct},
                     {"accuracy_pct", r.accuracy_pct},
                     {"model_strict_correct", r.strict_correct},
                     {"strict_overlap", r.overlap},
                     {"multi_token_pairs", r.multi_token}};
  return {{"bias_pairs.tsv", bias_tsv(r)}, {"bias_summary.json", summary.dump(2) + "\n"}};
}

std::map<std::string, std::string> specificity_files(const SpecificityReport& r) {
  std::map<std::string, std::string> files{{"specificity.tsv", specificity_tsv(r.cells)}};
  for (auto& [name, text] : sweep_files(r.context)) files["context/" + name] = std::move(text);
  for (auto& [name, text] : sweep_files(r.syntax)) files["syntax_only/" + name] = std::move(text);
  return files;
}

nlohmann::json sweep_parameters(const SweepReport& r) {
  const auto& q = r.request;
  json components = json::array();
  for (Component c : q.options.components) components.push_back(to_string(c));
  json p{{"kind", to_string(q.kind)},
         {"condition", to_string(q.condition)},
         {"components", components},
         {"resamples", q.stats.resamples},
         {"level", q.stats.level},
         {"alpha", q.stats.alpha},
         {"family_size", r.stats.family_size},
         {"bonferroni_threshold",
          r.stats.family_size ? bonferroni_threshold(q.stats.alpha, r.stats.family_size) : q.stats.alpha},
         {"max_pairs", q.max_pairs},
         {"exclude_specials", q.exclude_specials},
         {"pairs_evaluated", r.pair_ids.size()}};
  if (q.options.layers) p["layers"] = *q.options.layers;
  if (q.options.heads) p["heads"] = *q.options.heads;
  if (!q.pair_ids.empty()) p["pair_filter"] = q.pair_ids;
  return p;
}

}  // namespace winocirc
