#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "winocirc/dataset.hpp"
#include "winocirc/intervention.hpp"
#include "winocirc/model.hpp"
#include "winocirc/scoring.hpp"
#include "winocirc/stats.hpp"

namespace winocirc {

inline constexpr const char* kToolVersion = "0.3.0";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

// ISO-8601 UTC time; honours SOURCE_DATE_EPOCH so reruns can be byte-identical.
std::string manifest_timestamp();

struct RunManifest {
  std::string command;
  std::string model_digest;
  std::string dataset_digest;
  std::map<std::string, std::uint64_t> seeds;
  std::string selection;
  std::string timestamp;
  std::string tool_version = kToolVersion;
  nlohmann::json parameters = nlohmann::json::object();

  nlohmann::json to_json() const;
  std::string digest() const;
};

enum class Selection { strict, weak, all };
std::string to_string(Selection s);
Selection parse_selection(const std::string& s);

struct Workspace {
  ModelBundle model;
  std::vector<WinogradPair> pairs;
  Vocabulary vocabulary;
  std::string model_digest;
  std::string dataset_digest;
};

// Loads and validates both inputs. Any invalid dataset line is fatal.
Workspace load_workspace(const std::string& model_path, const std::string& dataset_path,
                         const std::string& vocabulary_path = {});

// Baseline scores, memoized per (pair_id, condition).
class ScoreCache {
 public:
  explicit ScoreCache(const ModelBundle& model) : model_(model) {}
  const PairScores& get(const WinogradPair& pair);

 private:
  const ModelBundle& model_;
  std::map<std::pair<std::string, Condition>, PairScores> scores_;
};

// Records of `condition` that pass `selection`. A pair_id is judged on its
// context and syntax_only records when the dataset has them, otherwise on
// the record itself. `pair_ids`, when non-empty, restricts the result;
// `max_pairs` < 0 means no cap.
std::vector<WinogradPair> select_pairs(const ModelBundle& model,
                                       const std::vector<WinogradPair>& all, Condition condition,
                                       Selection selection, int max_pairs = -1,
                                       const std::vector<std::string>& pair_ids = {});

struct EvaluateRow {
  std::string pair_id;
  Condition condition = Condition::context;
  PairScores scores;
  bool strict = false;
  bool weak = false;
};

struct ConditionSummary {
  Condition condition = Condition::context;
  std::size_t n = 0;
  double strict_pct = 0.0;
  double weak_pct = 0.0;
};

struct EvaluateReport {
  std::vector<EvaluateRow> rows;
  std::vector<ConditionSummary> summaries;
};

EvaluateReport cmd_evaluate(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                            std::optional<Condition> condition, int max_pairs = -1);

struct SweepRequest {
  SweepKind kind = SweepKind::layers;
  Condition condition = Condition::context;
  Selection selection = Selection::strict;
  SweepOptions options;
  StatsOptions stats;
  int max_pairs = -1;
  std::vector<std::string> pair_ids;
  bool exclude_specials = false;
};

struct SweepReport {
  SweepRequest request;
  std::vector<std::string> pair_ids;
  SweepResult result;
  GridStats stats;
};

SweepReport cmd_sweep(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                      const SweepRequest& request);

struct BiasRow {
  std::string pair_id;
  BiasPrediction prediction;
  bool model_strict = false;
};

struct BiasReport {
  SimilarityMeasure measure = SimilarityMeasure::correlation;
  std::vector<BiasRow> rows;
  double accuracy_pct = 0.0;
  std::size_t correct = 0;
  std::size_t strict_correct = 0;   // pairs the model gets strictly right
  std::size_t overlap = 0;          // of those, also resolved by embeddings
  std::size_t multi_token = 0;      // pairs that needed mean embeddings
};

// Runs on the context-condition records of `pairs`.
BiasReport cmd_bias_check(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                          SimilarityMeasure measure, int max_pairs = -1);

struct SpecificityReport {
  SweepReport context;
  SweepReport syntax;
  std::vector<SpecificityCell> cells;
};

// Head sweeps on the context and syntax_only records of the same pair_ids.
SpecificityReport cmd_specificity(const ModelBundle& model, const std::vector<WinogradPair>& pairs,
                                  SweepRequest request);

// ---- serialization -------------------------------------------------------

// Shortest text that reads back to the same double ("nan" for NaN).
std::string format_double(double v);
double parse_double(const std::string& s);

std::string evaluate_pairs_tsv(const EvaluateReport& r);
std::string evaluate_summary_tsv(const EvaluateReport& r);

std::string sweep_table_tsv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_table(const std::string& text);

// Heatmap-ready grids derived only from the sweep table.
std::map<std::string, std::string> plot_files(SweepKind kind, const std::vector<SweepRow>& rows);

std::string stats_table_tsv(const GridStats& stats);
// Paired-difference tests between every two classes of the same
// (layer, head, component).
std::string paired_difference_tsv(const SweepGrid& grid);
std::string specificity_tsv(const std::vector<SpecificityCell>& cells);
std::string bias_tsv(const BiasReport& r);

nlohmann::json scores_json(const PairScores& s);
nlohmann::json site_json(const ActivationSite& s);
ActivationSite site_from_json(const nlohmann::json& j);
nlohmann::json effect_json(const EffectRecord& e);
nlohmann::json sweep_rows_json(const std::vector<SweepRow>& rows);
nlohmann::json grid_json(const SweepGrid& grid);

// Writes `files` (relative names) and manifest.json under `dir`.
void write_outputs(const std::filesystem::path& dir, const std::map<std::string, std::string>& files,
                   const RunManifest& manifest);

// Output file sets for each command.
std::map<std::string, std::string> evaluate_files(const EvaluateReport& r);
std::map<std::string, std::string> sweep_files(const SweepReport& r);
std::map<std::string, std::string> bias_files(const BiasReport& r);
std::map<std::string, std::string> specificity_files(const SpecificityReport& r);

nlohmann::json sweep_parameters(const SweepReport& r);

}  // namespace winocirc
