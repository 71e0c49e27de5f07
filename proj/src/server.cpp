#include "winocirc/server.hpp"

#include <httplib.h>

#include <fmt/format.h>

namespace winocirc {

using nlohmann::json;

namespace {

struct HttpError : std::runtime_error {
  HttpError(int status, std::string kind, const std::string& message)
      : std::runtime_error(message), status(status), kind(std::move(kind)) {}
  int status;
  std::string kind;
};

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw HttpError(400, "bad_request", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError(400, "bad_request", std::string("malformed JSON: ") + e.what());
  }
}

Condition condition_of(const json& req) {
  return req.contains("condition") ? parse_condition(req["condition"].get<std::string>())
                                   : Condition::context;
}

std::optional<std::set<int>> int_set(const json& filters, const char* key) {
  if (!filters.contains(key) || filters[key].is_null()) return std::nullopt;
  return filters[key].get<std::set<int>>();
}

std::string cache_key(const WinogradPair& p) { return p.pair_id + "\x1f" + to_string(p.condition); }

}  // namespace

struct ApiService::Server {
  httplib::Server http;
};

ApiService::ApiService(Workspace workspace, ServiceOptions options)
    : ws_(std::move(workspace)), options_(std::move(options)) {
  manifest_.command = "serve";
  manifest_.model_digest = ws_.model_digest;
  manifest_.dataset_digest = ws_.dataset_digest;
  manifest_.selection = "none";
  manifest_.timestamp = manifest_timestamp();
  manifest_.parameters = json{{"cell_budget", options_.cell_budget},
                              {"pairs", ws_.pairs.size()}};
  digest_ = manifest_.digest();
  server_ = std::make_shared<Server>();
}

ApiResponse ApiService::handle(const std::string& method, const std::string& path,
                               const std::string& body) const {
  ApiResponse r;
  try {
    if (method == "GET" && path == "/health") {
      r.body = health();
    } else if (method == "GET" && path == "/pairs") {
      r.body = list_pairs();
    } else if (method == "GET" && path.rfind("/pairs/", 0) == 0) {
      const std::string id = path.substr(7);
      json docs = json::array();
      for (const auto& p : ws_.pairs) {
        if (p.pair_id == id) docs.push_back(pair_document(p));
      }
      if (docs.empty()) throw HttpError(404, "not_found", "unknown pair_id '" + id + "'");
      r.body = json{{"pair_id", id}, {"records", docs}};
    } else if (method == "GET" && path == "/manifest") {
      r.body = json{{"manifest", manifest_.to_json()}};
    } else if (method == "POST" && path == "/score") {
      r.body = score(parse_body(body));
    } else if (method == "POST" && path == "/interchange") {
      r.body = interchange(parse_body(body));
    } else if (method == "POST" && path == "/sweep") {
      r.body = sweep(parse_body(body));
    } else {
      throw HttpError(404, "not_found", fmt::format("no route for {} {}", method, path));
    }
  } catch (const HttpError& e) {
    r.status = e.status;
    r.body = json{{"error", {{"kind", e.kind}, {"message", e.what()}}}};
  } catch (const json::exception& e) {
    r.status = 400;
    r.body = json{{"error", {{"kind", "bad_request"}, {"message", e.what()}}}};
  } catch (const PatchError& e) {
    r.status = 400;
    r.body = json{{"error", {{"kind", "bad_site"}, {"message", e.what()}}}};
  } catch (const std::invalid_argument& e) {
    r.status = 400;
    r.body = json{{"error", {{"kind", "bad_request"}, {"message", e.what()}}}};
  } catch (const ForwardError& e) {
    r.status = 400;
    const bool site = e.kind() == ForwardError::Kind::site_out_of_range;
    r.body = json{{"error", {{"kind", site ? "bad_site" : "forward"}, {"message", e.what()}}}};
  } catch (const std::exception& e) {
    r.status = 500;
    r.body = json{{"error", {{"kind", "internal"}, {"message", e.what()}}}};
  }
  r.body["manifest_digest"] = digest_;
  return r;
}

json ApiService::health() const {
  const auto& c = ws_.model.config();
  return json{{"status", "ok"},
              {"tool_version", kToolVersion},
              {"model", {{"num_layers", c.num_layers},
                         {"num_heads", c.num_heads},
                         {"hidden_dim", c.hidden_dim},
                         {"vocab_size", c.vocab_size},
                         {"layer_sharing", to_string(c.layer_sharing)}}},
              {"pairs", ws_.pairs.size()}};
}

json ApiService::pair_document(const WinogradPair& p) const {
  auto span = [](Span s) { return json::array({s.start, s.end}); };
  return json{{"pair_id", p.pair_id},
              {"condition", to_string(p.condition)},
              {"surface_A", ws_.vocabulary.render(p.tokens_A)},
              {"surface_B", ws_.vocabulary.render(p.tokens_B)},
              {"tokens_A", p.tokens_A},
              {"tokens_B", p.tokens_B},
              {"context_span_A", span(p.context_span_A)},
              {"context_span_B", span(p.context_span_B)},
              {"option1_span", span(p.option1_span)},
              {"option2_span", span(p.option2_span)},
              {"mask_span", span(p.mask_span)},
              {"verb_index", p.verb_index},
              {"np_A", ws_.vocabulary.render(p.np_A_tokens)},
              {"np_B", ws_.vocabulary.render(p.np_B_tokens)},
              {"source", to_string(p.source)}};
}

json ApiService::list_pairs() const {
  json out = json::array();
  for (const auto& p : ws_.pairs) {
    out.push_back(json{{"pair_id", p.pair_id},
                       {"condition", to_string(p.condition)},
                       {"surface_A", ws_.vocabulary.render(p.tokens_A)},
                       {"surface_B", ws_.vocabulary.render(p.tokens_B)}});
  }
  return json{{"pairs", out}};
}

const WinogradPair& ApiService::find_pair(const std::string& id, Condition condition) const {
  for (const auto& p : ws_.pairs) {
    if (p.pair_id == id && p.condition == condition) return p;
  }
  throw HttpError(404, "not_found",
                  fmt::format("no pair '{}' with condition {}", id, to_string(condition)));
}

std::shared_ptr<const InterchangeContext> ApiService::context_for(const WinogradPair& pair) const {
  const std::string key = cache_key(pair);
  {
    std::lock_guard lock(cache_mutex_);
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == key) {
        cache_.splice(cache_.begin(), cache_, it);
        return cache_.front().second;
      }
    }
  }
  // Built outside the lock; a concurrent duplicate is equal and harmless.
  auto ctx = std::make_shared<const InterchangeContext>(ws_.model, pair);
  std::lock_guard lock(cache_mutex_);
  cache_.emplace_front(key, ctx);
  while (cache_.size() > std::max<std::size_t>(options_.cache_capacity, 1)) cache_.pop_back();
  return ctx;
}

json ApiService::score(const json& req) const {
  const auto& pair = find_pair(req.at("pair_id").get<std::string>(), condition_of(req));
  return json{{"pair_id", pair.pair_id},
              {"condition", to_string(pair.condition)},
              {"scores", scores_json(context_for(pair)->baseline())}};
}

json ApiService::interchange(const json& req) const {
  const auto& pair = find_pair(req.at("pair_id").get<std::string>(), condition_of(req));
  std::vector<ActivationSite> sites;
  if (req.contains("sites")) {
    for (const auto& s : req["sites"]) sites.push_back(site_from_json(s));
  } else {
    sites.push_back(site_from_json(req.at("site")));
  }
  if (sites.empty()) throw HttpError(400, "bad_request", "no sites given");
  const auto ctx = context_for(pair);
  const EffectRecord rec = sites.size() == 1 ? ctx->effect(sites.front()) : ctx->effect(sites);
  json out = effect_json(rec);
  out["pair_id"] = pair.pair_id;
  out["condition"] = to_string(pair.condition);
  if (sites.size() > 1) {
    json all = json::array();
    for (const auto& s : sites) all.push_back(site_json(s));
    out["sites"] = all;
  }
  return out;
}

std::size_t ApiService::sweep_cost(const WinogradPair& pair, SweepKind kind,
                                   const SweepOptions& o) const {
  const auto& c = ws_.model.config();
  const std::size_t layers = o.layers ? o.layers->size() : static_cast<std::size_t>(c.num_layers);
  const std::size_t heads = o.heads ? o.heads->size() : static_cast<std::size_t>(c.num_heads);
  const auto tokens = static_cast<std::size_t>(pair.length());
  if (kind == SweepKind::heads) return layers * heads * o.components.size() * tokens;
  return layers * tokens;
}

json ApiService::sweep(const json& req) const {
  SweepRequest q;
  q.kind = parse_sweep_kind(req.value("kind", std::string("layers")));
  q.condition = q.kind == SweepKind::synonym ? Condition::synonym : condition_of(req);
  q.selection = parse_selection(req.value("selection", std::string("all")));
  q.exclude_specials = req.value("exclude_specials", false);
  q.options.threads = options_.threads;
  const json filters = req.value("filters", json::object());
  q.options.layers = int_set(filters, "layers");
  q.options.heads = int_set(filters, "heads");
  if (filters.contains("components")) {
    q.options.components.clear();
    for (const auto& c : filters["components"]) {
      q.options.components.push_back(parse_component(c.get<std::string>()));
    }
  }
  const auto& pair = find_pair(req.at("pair_id").get<std::string>(), q.condition);
  q.pair_ids = {pair.pair_id};
  const std::size_t cost = sweep_cost(pair, q.kind, q.options);
  if (cost > options_.cell_budget) {
    throw HttpError(413, "over_budget",
                    fmt::format("sweep needs {} interchanges, budget is {}", cost,
                                options_.cell_budget));
  }
  const SweepReport report = cmd_sweep(ws_.model, ws_.pairs, q);
  return json{{"rows", sweep_rows_json(report.result.rows)}, {"grid", grid_json(report.result.grid)}};
}

int ApiService::bind() {
  auto& http = server_->http;
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("X-Manifest-Digest", digest_);
    res.set_content(r.body.dump(), "application/json");
  };
  http.Get(".*", route);
  http.Post(".*", route);
  if (options_.port == 0) return bound_port_ = http.bind_to_any_port(options_.host);
  return bound_port_ = http.bind_to_port(options_.host, options_.port) ? options_.port : -1;
}

bool ApiService::listen() {
  if (bound_port_ < 0 && bind() < 0) return false;
  return server_->http.listen_after_bind();
}

bool ApiService::running() const { return server_->http.is_running(); }

void ApiService::stop() { server_->http.stop(); }

}  // namespace winocirc
