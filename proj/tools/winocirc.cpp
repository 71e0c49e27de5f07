#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "winocirc/app.hpp"
#include "winocirc/server.hpp"
#include "winocirc/toy.hpp"

using namespace winocirc;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "0,2-4" -> {0, 2, 3, 4}
std::optional<std::set<int>> parse_int_set(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::set<int> out;
  for (const auto& item : split_list(s)) {
    try {
      const auto dash = item.find('-', 1);
      if (dash == std::string::npos) {
        out.insert(std::stoi(item));
      } else {
        const int lo = std::stoi(item.substr(0, dash)), hi = std::stoi(item.substr(dash + 1));
        if (hi < lo) throw UsageError("empty range '" + item + "'");
        for (int i = lo; i <= hi; ++i) out.insert(i);
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad index list '" + s + "'");
    }
  }
  return out;
}

std::vector<Component> parse_components(const std::string& s) {
  if (s == "all") {
    return {Component::transformation, Component::query, Component::key, Component::value};
  }
  std::vector<Component> out;
  for (const auto& item : split_list(s)) out.push_back(parse_component(item));
  if (out.empty()) throw UsageError("no components given");
  return out;
}

void check_range(const std::optional<std::set<int>>& set, int limit, const char* what) {
  if (!set) return;
  for (int v : *set) {
    if (v < 0 || v >= limit) throw UsageError(fmt::format("{} index {} outside [0, {})", what, v, limit));
  }
}

struct Common {
  std::string model, dataset, vocab, out = "out";
  int max_pairs = -1;
};

struct SweepFlags {
  std::string kind = "layers", condition = "context", components = "all", selection = "strict";
  std::string layers, heads, pairs;
  std::uint64_t seed = 0;
  std::size_t resamples = 10000;
  double alpha = 0.05;
  unsigned threads = 0;
  bool exclude_specials = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--model", c.model, "model archive")->required();
  cmd->add_option("--dataset", c.dataset, "pair dataset (JSON lines)")->required();
  cmd->add_option("--vocab", c.vocab, "vocabulary file, one token per line");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--max-pairs", c.max_pairs, "cap on evaluated pairs");
}

void add_sweep_flags(CLI::App* cmd, SweepFlags& f, bool with_kind) {
  if (with_kind) {
    cmd->add_option("--kind", f.kind, "layers, heads, cumulative or synonym");
    cmd->add_option("--condition", f.condition, "dataset condition to sweep");
  }
  cmd->add_option("--components", f.components, "comma list of components, or all");
  cmd->add_option("--selection", f.selection, "strict, weak or all");
  cmd->add_option("--seed", f.seed, "bootstrap root seed");
  cmd->add_option("--resamples", f.resamples, "bootstrap resamples");
  cmd->add_option("--alpha", f.alpha, "family-wise significance level");
  cmd->add_option("--layers", f.layers, "layer subset, e.g. 0,2-4");
  cmd->add_option("--heads", f.heads, "head subset, e.g. 0-3");
  cmd->add_option("--pairs", f.pairs, "comma list of pair_ids");
  cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  cmd->add_flag("--exclude-specials", f.exclude_specials, "drop [CLS], [SEP] from class means");
}

SweepRequest make_request(const SweepFlags& f, const ModelConfig& config, int max_pairs) {
  SweepRequest q;
  q.kind = parse_sweep_kind(f.kind);
  q.condition = parse_condition(f.condition);
  q.selection = parse_selection(f.selection);
  q.options.components = parse_components(f.components);
  q.options.layers = parse_int_set(f.layers);
  q.options.heads = parse_int_set(f.heads);
  check_range(q.options.layers, config.num_layers, "layer");
  check_range(q.options.heads, config.num_heads, "head");
  q.options.threads = f.threads;
  q.stats.seed = f.seed;
  q.stats.resamples = f.resamples;
  q.stats.alpha = f.alpha;
  q.max_pairs = max_pairs;
  q.pair_ids = split_list(f.pairs);
  q.exclude_specials = f.exclude_specials;
  return q;
}

RunManifest base_manifest(const std::string& command, const Workspace& ws) {
  RunManifest m;
  m.command = command;
  m.model_digest = ws.model_digest;
  m.dataset_digest = ws.dataset_digest;
  m.timestamp = manifest_timestamp();
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interchange-intervention analysis of masked-LM encoders on Winograd pairs"};
  app.require_subcommand(1);

  Common common;
  SweepFlags sweep_flags;
  std::string eval_condition, measure = "correlation";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cell_budget = 20000;
  std::uint64_t toy_seed = 0;
  int toy_count = 20;
  bool untied = false;
  std::string toy_out;

  auto* evaluate = app.add_subcommand("evaluate", "score pairs and report strict/weak accuracy");
  add_common(evaluate, common);
  evaluate->add_option("--condition", eval_condition, "restrict to one condition");

  auto* sweep = app.add_subcommand("sweep", "run an interchange sweep with cell statistics");
  add_common(sweep, common);
  add_sweep_flags(sweep, sweep_flags, true);

  auto* specificity = app.add_subcommand("specificity", "context vs syntax_only head specificity");
  add_common(specificity, common);
  add_sweep_flags(specificity, sweep_flags, false);

  auto* bias = app.add_subcommand("bias-check", "embedding-similarity baseline");
  add_common(bias, common);
  bias->add_option("--measure", measure, "correlation or euclidean");

  auto* serve = app.add_subcommand("serve", "HTTP service for the explorer");
  serve->add_option("--model", common.model, "model archive")->required();
  serve->add_option("--dataset", common.dataset, "pair dataset")->required();
  serve->add_option("--vocab", common.vocab, "vocabulary file");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "bind port");
  serve->add_option("--cell-budget", cell_budget, "largest /sweep request in interchanges");
  serve->add_option("--threads", sweep_flags.threads, "worker threads per sweep");

  auto* toy_model = app.add_subcommand("toy-model", "write a small random model archive");
  toy_model->add_option("--seed", toy_seed, "RNG seed");
  toy_model->add_flag("--untied", untied, "one parameter set per layer");
  toy_model->add_option("--out", toy_out, "archive path")->required();

  auto* toy_dataset = app.add_subcommand("toy-dataset", "write random pairs for a toy model");
  toy_dataset->add_option("--model", common.model, "model archive")->required();
  toy_dataset->add_option("--seed", toy_seed, "RNG seed");
  toy_dataset->add_option("--count", toy_count, "base pairs");
  toy_dataset->add_option("--out", toy_out, "dataset path")->required();
  toy_dataset->add_option("--vocab-out", common.vocab, "also write a vocabulary file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (toy_model->parsed()) {
      const ModelConfig cfg = toy_config(untied ? LayerSharing::untied : LayerSharing::tied);
      save_model_file(generate_toy_model(toy_seed, cfg), toy_out);
      std::cout << fmt::format("wrote {} ({})\n", toy_out, sha256_file(toy_out));
      return 0;
    }
    if (toy_dataset->parsed()) {
      const ModelBundle model = load_model_file(common.model);
      const auto pairs = make_toy_dataset(
          toy_seed, model.config(), toy_count,
          {Condition::context, Condition::context_syntax, Condition::syntax_only, Condition::synonym});
      std::ostringstream text;
      serialize_dataset(pairs, text);
      write_text(toy_out, text.str());
      if (!common.vocab.empty()) {
        std::string v;
        for (const auto& t : toy_vocabulary(model.config())) v += t + "\n";
        write_text(common.vocab, v);
      }
      std::cout << fmt::format("wrote {} records to {}\n", pairs.size(), toy_out);
      return 0;
    }

    Workspace ws = load_workspace(common.model, common.dataset, common.vocab);

    if (serve->parsed()) {
      ServiceOptions o;
      o.host = host;
      o.port = port;
      o.cell_budget = cell_budget;
      o.threads = sweep_flags.threads;
      ApiService service(std::move(ws), o);
      const int bound = service.bind();
      if (bound < 0) return fail("bind", fmt::format("cannot bind {}:{}", host, port), 1);
      std::cerr << fmt::format("serving on http://{}:{} (manifest {})\n", host, bound,
                               service.manifest_digest());
      return service.listen() ? 0 : fail("bind", "server stopped unexpectedly", 1);
    }

    if (evaluate->parsed()) {
      std::optional<Condition> cond;
      if (!eval_condition.empty()) cond = parse_condition(eval_condition);
      const EvaluateReport r = cmd_evaluate(ws.model, ws.pairs, cond, common.max_pairs);
      RunManifest m = base_manifest("evaluate", ws);
      m.selection = "all";
      m.parameters = json{{"condition", eval_condition.empty() ? "all" : eval_condition},
                          {"max_pairs", common.max_pairs}};
      write_outputs(common.out, evaluate_files(r), m);
      std::cout << evaluate_summary_tsv(r);
      return 0;
    }

    if (sweep->parsed()) {
      const SweepRequest q = make_request(sweep_flags, ws.model.config(), common.max_pairs);
      const SweepReport r = cmd_sweep(ws.model, ws.pairs, q);
      RunManifest m = base_manifest("sweep", ws);
      m.seeds = {{"bootstrap", q.stats.seed}};
      m.selection = to_string(q.selection);
      m.parameters = sweep_parameters(r);
      write_outputs(common.out, sweep_files(r), m);
      std::size_t significant = 0;
      for (const auto& [k, s] : r.stats.cells) significant += s.significant;
      std::cout << fmt::format("{} pairs, {} rows, {} cells, {} significant -> {}\n", r.pair_ids.size(),
                               r.result.rows.size(), r.stats.cells.size(), significant, common.out);
      return 0;
    }

    if (specificity->parsed()) {
      const SweepRequest q = make_request(sweep_flags, ws.model.config(), common.max_pairs);
      const SpecificityReport r = cmd_specificity(ws.model, ws.pairs, q);
      RunManifest m = base_manifest("specificity", ws);
      m.seeds = {{"bootstrap", q.stats.seed}};
      m.selection = to_string(q.selection);
      m.parameters = json{{"context", sweep_parameters(r.context)},
                          {"syntax_only", sweep_parameters(r.syntax)}};
      write_outputs(common.out, specificity_files(r), m);
      std::map<Specificity, int> counts;
      for (const auto& c : r.cells) ++counts[c.label];
      std::cout << fmt::format("{} pairs; context_only {}, syntax_only {}, both {}, neither {} -> {}\n",
                               r.context.pair_ids.size(), counts[Specificity::context_only],
                               counts[Specificity::syntax_only], counts[Specificity::both],
                               counts[Specificity::neither], common.out);
      return 0;
    }

    if (bias->parsed()) {
      const BiasReport r = cmd_bias_check(ws.model, ws.pairs, parse_measure(measure), common.max_pairs);
      RunManifest m = base_manifest("bias-check", ws);
      m.selection = "all";
      m.parameters = json{{"measure", measure}, {"max_pairs", common.max_pairs}};
      write_outputs(common.out, bias_files(r), m);
      std::cout << fmt::format("{} pairs, accuracy {:.1f}%, {} strict-correct, {} overlap\n",
                               r.rows.size(), r.accuracy_pct, r.strict_correct, r.overlap);
      return 0;
    }
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const LoadError& e) {
    return fail("load", e.what(), 1);
  } catch (const DatasetError& e) {
    return fail("dataset", e.what(), 1);
  } catch (const std::invalid_argument& e) {
    return fail("usage", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
