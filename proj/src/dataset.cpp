#include "winocirc/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <utility>

#include <fmt/format.h>
#include <json.hpp>

namespace winocirc {

using nlohmann::json;

namespace {

json span_to_json(const Span& s) { return json::array({s.start, s.end}); }

Span span_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw DatasetError("span must be a [start, end) pair");
  return Span{j[0].get<int>(), j[1].get<int>()};
}

WinogradPair pair_from_json(const json& j) {
  WinogradPair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  p.condition = parse_condition(j.at("condition").get<std::string>());
  p.tokens_A = j.at("tokens_A").get<std::vector<TokenId>>();
  p.tokens_B = j.at("tokens_B").get<std::vector<TokenId>>();
  p.context_span_A = span_from_json(j.at("context_span_A"));
  p.context_span_B = span_from_json(j.at("context_span_B"));
  p.option1_span = span_from_json(j.at("option1_span"));
  p.option2_span = span_from_json(j.at("option2_span"));
  p.mask_span = span_from_json(j.at("mask_span"));
  p.verb_index = j.at("verb_index").get<int>();
  p.np_A_tokens = j.at("np_A_tokens").get<std::vector<TokenId>>();
  p.np_B_tokens = j.at("np_B_tokens").get<std::vector<TokenId>>();
  p.source = parse_source(j.at("source").get<std::string>());
  return p;
}

void add(ValidationResult& r, std::string code, std::string message) {
  r.violations.push_back(Violation{std::move(code), std::move(message)});
}

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::context: return "context";
    case Condition::context_syntax: return "context_syntax";
    case Condition::syntax_only: return "syntax_only";
    case Condition::synonym: return "synonym";
  }
  return "unknown";
}

std::string to_string(Source s) {
  switch (s) {
    case Source::superglue_wsc: return "superglue_wsc";
    case Source::winogrande: return "winogrande";
    case Source::constructed: return "constructed";
  }
  return "unknown";
}

Condition parse_condition(const std::string& s) {
  for (auto c : {Condition::context, Condition::context_syntax, Condition::syntax_only,
                 Condition::synonym}) {
    if (to_string(c) == s) return c;
  }
  throw DatasetError("unknown condition '" + s + "'");
}

Source parse_source(const std::string& s) {
  for (auto v : {Source::superglue_wsc, Source::winogrande, Source::constructed}) {
    if (to_string(v) == s) return v;
  }
  throw DatasetError("unknown source '" + s + "'");
}

bool ValidationResult::has(const std::string& code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

std::string ValidationResult::summary() const {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.code + ": " + v.message;
  }
  return out;
}

ValidationResult validate_pair(const WinogradPair& pair, TokenId mask_token_id) {
  ValidationResult r;
  const int n = static_cast<int>(pair.tokens_A.size());
  if (pair.tokens_A.empty()) add(r, "empty-sentence", "tokens_A is empty");
  if (pair.tokens_A.size() != pair.tokens_B.size()) {
    add(r, "length-mismatch",
        fmt::format("pair {}: len(tokens_A)={} but len(tokens_B)={}", pair.pair_id,
                    pair.tokens_A.size(), pair.tokens_B.size()));
    return r;
  }
  if (pair.np_A_tokens.empty() || pair.np_B_tokens.empty()) {
    add(r, "empty-answer", "answer token lists must be non-empty");
  }

  const std::pair<const char*, Span> spans[] = {{"context_span_A", pair.context_span_A},
                                                {"context_span_B", pair.context_span_B},
                                                {"option1_span", pair.option1_span},
                                                {"option2_span", pair.option2_span},
                                                {"mask_span", pair.mask_span}};
  bool spans_in_range = true;
  for (const auto& [name, s] : spans) {
    if (s.empty() || s.start < 0 || s.end > n) {
      add(r, "span-out-of-range", fmt::format("{} [{}, {}) invalid for length {}", name, s.start,
                                              s.end, n));
      spans_in_range = false;
    }
  }
  if (pair.verb_index < 0 || pair.verb_index >= n) {
    add(r, "span-out-of-range", fmt::format("verb_index {} invalid for length {}", pair.verb_index, n));
    spans_in_range = false;
  }
  if (!spans_in_range) return r;

  // Disjointness. The two context spans may coincide with each other.
  const std::pair<const char*, Span> distinct[] = {{"option1_span", pair.option1_span},
                                                   {"option2_span", pair.option2_span},
                                                   {"mask_span", pair.mask_span},
                                                   {"context_span_A", pair.context_span_A}};
  for (std::size_t i = 0; i < std::size(distinct); ++i) {
    for (std::size_t j = i + 1; j < std::size(distinct); ++j) {
      if (distinct[i].second.overlaps(distinct[j].second)) {
        add(r, "spans-overlap", fmt::format("{} overlaps {}", distinct[i].first, distinct[j].first));
      }
    }
  }
  for (const Span* s : {&pair.option1_span, &pair.option2_span, &pair.mask_span}) {
    if (s->overlaps(pair.context_span_B)) {
      add(r, "spans-overlap", "context_span_B overlaps an option or mask span");
    }
  }
  for (const auto& [name, s] : spans) {
    if (s.contains(pair.verb_index)) {
      add(r, "spans-overlap", fmt::format("verb_index {} lies inside {}", pair.verb_index, name));
    }
  }

  // NP1 - NP2 - mask - {context, verb}.
  if (!(pair.option1_span.end <= pair.option2_span.start &&
        pair.option2_span.end <= pair.mask_span.start)) {
    add(r, "span-order", "expected option1 < option2 < mask");
  }
  if (pair.context_span_A.start < pair.mask_span.end ||
      pair.context_span_B.start < pair.mask_span.end || pair.verb_index < pair.mask_span.end) {
    add(r, "span-order", "context and verb must follow the mask");
  }

  for (int i = pair.mask_span.start; i < pair.mask_span.end; ++i) {
    if (pair.tokens_A[i] != mask_token_id || pair.tokens_B[i] != mask_token_id) {
      add(r, "mask-not-masked", fmt::format("position {} in mask_span is not the mask token", i));
      break;
    }
  }

  const bool verb_may_differ =
      pair.condition == Condition::context_syntax || pair.condition == Condition::syntax_only;
  std::vector<int> extra;
  for (int i = 0; i < n; ++i) {
    if (pair.tokens_A[i] == pair.tokens_B[i]) continue;
    const bool in_context = pair.context_span_A.contains(i) || pair.context_span_B.contains(i);
    const bool at_verb = verb_may_differ && i == pair.verb_index;
    if (!in_context && !at_verb) extra.push_back(i);
  }
  if (!extra.empty()) {
    add(r, "extra-differences",
        fmt::format("sentences differ outside the manipulated span at positions {}",
                    fmt::join(extra, ",")));
  }

  if (pair.condition == Condition::syntax_only) {
    for (const Span& s : {pair.context_span_A, pair.context_span_B}) {
      for (int i = s.start; i < s.end; ++i) {
        if (pair.tokens_A[i] != mask_token_id || pair.tokens_B[i] != mask_token_id) {
          add(r, "context-not-masked",
              fmt::format("syntax_only pair has an unmasked context token at {}", i));
          return r;
        }
      }
    }
  }
  return r;
}

std::string serialize_pair(const WinogradPair& p) {
  json j = json::object();
  j["pair_id"] = p.pair_id;
  j["condition"] = to_string(p.condition);
  j["tokens_A"] = p.tokens_A;
  j["tokens_B"] = p.tokens_B;
  j["context_span_A"] = span_to_json(p.context_span_A);
  j["context_span_B"] = span_to_json(p.context_span_B);
  j["option1_span"] = span_to_json(p.option1_span);
  j["option2_span"] = span_to_json(p.option2_span);
  j["mask_span"] = span_to_json(p.mask_span);
  j["verb_index"] = p.verb_index;
  j["np_A_tokens"] = p.np_A_tokens;
  j["np_B_tokens"] = p.np_B_tokens;
  j["source"] = to_string(p.source);
  return j.dump();
}

void serialize_dataset(const std::vector<WinogradPair>& pairs, std::ostream& out) {
  for (const auto& p : pairs) out << serialize_pair(p) << '\n';
}

ParseResult parse_dataset(std::istream& in, TokenId mask_token_id) {
  ParseResult result;
  std::set<std::pair<std::string, Condition>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string pair_id;
    try {
      const json j = json::parse(line);
      if (j.contains("pair_id") && j["pair_id"].is_string()) pair_id = j["pair_id"];
      WinogradPair pair = pair_from_json(j);
      const ValidationResult v = validate_pair(pair, mask_token_id);
      if (!v.ok()) {
        result.errors.push_back(LineError{line_no, pair_id, v.summary()});
        continue;
      }
      if (!seen.emplace(pair.pair_id, pair.condition).second) {
        result.errors.push_back(LineError{
            line_no, pair_id,
            fmt::format("duplicate pair_id '{}' for condition {}", pair_id, to_string(pair.condition))});
        continue;
      }
      result.pairs.push_back(std::move(pair));
    } catch (const std::exception& e) {
      result.errors.push_back(LineError{line_no, pair_id, std::string("malformed record: ") + e.what()});
    }
  }
  return result;
}

ParseResult parse_dataset_file(const std::string& path, TokenId mask_token_id) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset '" + path + "'");
  return parse_dataset(in, mask_token_id);
}

WinogradPair mask_context(const WinogradPair& pair, TokenId mask_token_id) {
  if (pair.condition != Condition::context_syntax && pair.condition != Condition::syntax_only) {
    throw DatasetError(fmt::format("mask_context needs a context_syntax pair, got {}",
                                   to_string(pair.condition)));
  }
  WinogradPair out = pair;
  out.condition = Condition::syntax_only;
  auto mask = [&](std::vector<TokenId>& tokens, const Span& s) {
    for (int i = std::max(0, s.start); i < std::min<int>(s.end, static_cast<int>(tokens.size())); ++i) {
      tokens[i] = mask_token_id;
    }
  };
  for (const Span& s : {pair.context_span_A, pair.context_span_B}) {
    mask(out.tokens_A, s);
    mask(out.tokens_B, s);
  }
  return out;
}

std::string to_string(TokenClass c) {
  switch (c) {
    case TokenClass::context: return "context";
    case TokenClass::options: return "options";
    case TokenClass::mask: return "mask";
    case TokenClass::verb: return "verb";
    case TokenClass::rest: return "rest";
    case TokenClass::excluded: return "excluded";
  }
  return "unknown";
}

TokenClass parse_token_class(const std::string& s) {
  for (auto c : {TokenClass::context, TokenClass::options, TokenClass::mask, TokenClass::verb,
                 TokenClass::rest, TokenClass::excluded}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown token class '" + s + "'");
}

std::vector<int> TokenClassMap::members(TokenClass c) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == c) out.push_back(static_cast<int>(i));
  }
  return out;
}

TokenClassMap annotate_classes(const WinogradPair& pair, bool exclude_specials,
                               const ExclusionRule& rule) {
  const int n = pair.length();
  std::vector<std::optional<TokenClass>> assigned(static_cast<std::size_t>(n));
  auto mark = [&](int i, TokenClass c) {
    if (i < 0 || i >= n) {
      throw DatasetError(fmt::format("{} position {} outside sentence of length {}", to_string(c), i, n));
    }
    auto& slot = assigned[static_cast<std::size_t>(i)];
    if (slot && *slot != c) {
      throw DatasetError(fmt::format("position {} is both {} and {}", i, to_string(*slot),
                                     to_string(c)));
    }
    slot = c;
  };
  for (const Span& s : {pair.context_span_A, pair.context_span_B}) {
    for (int i = s.start; i < s.end; ++i) mark(i, TokenClass::context);
  }
  for (const Span& s : {pair.option1_span, pair.option2_span}) {
    for (int i = s.start; i < s.end; ++i) mark(i, TokenClass::options);
  }
  for (int i = pair.mask_span.start; i < pair.mask_span.end; ++i) mark(i, TokenClass::mask);
  mark(pair.verb_index, TokenClass::verb);

  TokenClassMap map;
  map.classes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    TokenClass c = assigned[static_cast<std::size_t>(i)].value_or(TokenClass::rest);
    if (exclude_specials && c == TokenClass::rest) {
      const bool boundary = rule.boundaries && (i == 0 || i == n - 1);
      const bool listed = std::find(rule.token_ids.begin(), rule.token_ids.end(),
                                    pair.tokens_A[static_cast<std::size_t>(i)]) != rule.token_ids.end();
      if (boundary || listed) c = TokenClass::excluded;
    }
    map.classes.push_back(c);
  }
  return map;
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open vocabulary '" + path + "'");
  return load(in);
}

std::string Vocabulary::surface(TokenId id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < tokens_.size()) return tokens_[static_cast<std::size_t>(id)];
  return fmt::format("<{}>", id);
}

std::string Vocabulary::render(const std::vector<TokenId>& ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ' ';
    out += surface(id);
  }
  return out;
}

}  // namespace winocirc
