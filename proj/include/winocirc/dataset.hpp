#pragma once

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "winocirc/model.hpp"

namespace winocirc {

enum class Condition { context, context_syntax, syntax_only, synonym };
enum class Source { superglue_wsc, winogrande, constructed };

std::string to_string(Condition c);
std::string to_string(Source s);
Condition parse_condition(const std::string& s);
Source parse_source(const std::string& s);

// Half-open token index range [start, end).
struct Span {
  int start = 0;
  int end = 0;

  int size() const { return end - start; }
  bool empty() const { return end <= start; }
  bool contains(int i) const { return i >= start && i < end; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
  bool operator==(const Span&) const = default;
};

struct WinogradPair {
  std::string pair_id;
  Condition condition = Condition::context;
  std::vector<TokenId> tokens_A;
  std::vector<TokenId> tokens_B;
  Span context_span_A;
  Span context_span_B;
  Span option1_span;
  Span option2_span;
  Span mask_span;
  int verb_index = 0;
  std::vector<TokenId> np_A_tokens;  // correct answer for tokens_A
  std::vector<TokenId> np_B_tokens;  // correct answer for tokens_B
  Source source = Source::constructed;

  int length() const { return static_cast<int>(tokens_A.size()); }
  bool operator==(const WinogradPair&) const = default;
};

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(const std::string& code) const;
  std::string summary() const;
};

// Checks every pair invariant. Violations are returned, never thrown.
ValidationResult validate_pair(const WinogradPair& pair, TokenId mask_token_id);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LineError {
  int line = 0;
  std::string pair_id;
  std::string message;
};

struct ParseResult {
  std::vector<WinogradPair> pairs;
  std::vector<LineError> errors;
};

// One JSON document per line. Blank lines are skipped; failing lines are
// reported and left out of `pairs`.
ParseResult parse_dataset(std::istream& in, TokenId mask_token_id);
ParseResult parse_dataset_file(const std::string& path, TokenId mask_token_id);

std::string serialize_pair(const WinogradPair& pair);
void serialize_dataset(const std::vector<WinogradPair>& pairs, std::ostream& out);

// context_syntax -> syntax_only by masking both context spans. syntax_only
// input passes through with its tokens unchanged.
WinogradPair mask_context(const WinogradPair& pair, TokenId mask_token_id);

enum class TokenClass { context, options, mask, verb, rest, excluded };

std::string to_string(TokenClass c);
TokenClass parse_token_class(const std::string& s);

// Classes that take part in aggregates, in reporting order.
inline constexpr TokenClass kAggregateClasses[] = {TokenClass::context, TokenClass::options,
                                                   TokenClass::mask, TokenClass::verb,
                                                   TokenClass::rest};

struct ExclusionRule {
  bool boundaries = true;              // first and last positions ([CLS]/[SEP])
  std::vector<TokenId> token_ids;      // e.g. the final period
};

struct TokenClassMap {
  std::vector<TokenClass> classes;

  std::vector<int> members(TokenClass c) const;
  std::size_t size() const { return classes.size(); }
};

TokenClassMap annotate_classes(const WinogradPair& pair, bool exclude_specials,
                               const ExclusionRule& rule = {});

// Surface strings for display; line i of the file is token id i.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

  static Vocabulary load(std::istream& in);
  static Vocabulary load_file(const std::string& path);

  std::string surface(TokenId id) const;
  std::string render(const std::vector<TokenId>& ids) const;
  bool empty() const { return tokens_.empty(); }

 private:
  std::vector<std::string> tokens_;
};

}  // namespace winocirc
