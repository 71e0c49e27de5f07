#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "winocirc/forward.hpp"
#include "winocirc/model.hpp"

using namespace winocirc;
using nlohmann::json;

namespace {

std::string archive_bytes(const ModelBundle& m) {
  std::ostringstream out(std::ios::binary);
  save_model(m, out);
  return out.str();
}

ModelBundle load_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return load_model(in);
}

// Re-emits an archive after editing its JSON header.
template <class Edit>
std::string edit_header(const std::string& bytes, Edit edit) {
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[5 + i]);
  json header = json::parse(bytes.substr(13, len));
  edit(header);
  const std::string h = header.dump();
  std::string out = bytes.substr(0, 5);
  for (int i = 0; i < 8; ++i) out += static_cast<char>((h.size() >> (8 * i)) & 0xff);
  return out + h + bytes.substr(13 + len);
}

// Non-uniform, so a following layer norm cannot cancel it.
void perturb(std::vector<float>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.1f * static_cast<float>(static_cast<int>(i % 7) - 3);
}

LoadError::Kind load_error_kind(const std::string& bytes, std::string* subject = nullptr) {
  try {
    load_bytes(bytes);
  } catch (const LoadError& e) {
    if (subject) *subject = e.subject();
    return e.kind();
  }
  FAIL("archive loaded without error");
  return LoadError::Kind::bad_magic;
}

}  // namespace

TEST_CASE("config invariants") {
  ModelConfig c = toy_config();
  CHECK_NOTHROW(c.validate());
  c.hidden_dim = 100;
  c.num_heads = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = toy_config();
  c.head_dim = 4;  // 4 heads x 4 != 32
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = toy_config();
  c.mask_token_id = static_cast<TokenId>(c.vocab_size);
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = toy_config();
  c.layernorm_epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CHECK(toy_config(LayerSharing::tied).parameter_sets() == 1);
  CHECK(toy_config(LayerSharing::untied).parameter_sets() == toy_config().num_layers);
}

TEST_CASE("required tensor set follows the layout") {
  const auto tied = required_tensors(toy_config(LayerSharing::tied));
  const auto untied = required_tensors(toy_config(LayerSharing::untied));
  CHECK(tied.contains("layers.0.attention.query.weight"));
  CHECK_FALSE(tied.contains("layers.1.attention.query.weight"));
  CHECK(untied.contains("layers.1.attention.query.weight"));
  CHECK(tied.at("embeddings.projection.weight") == std::vector<std::int64_t>{32, 16});
  CHECK(tied.at("mlm.bias") == std::vector<std::int64_t>{64});

  ModelConfig same = toy_config();
  same.embedding_dim = same.hidden_dim;
  CHECK_FALSE(required_tensors(same).contains("embeddings.projection.weight"));
}

TEST_CASE("archive round trip is bit-exact") {
  for (auto sharing : {LayerSharing::tied, LayerSharing::untied}) {
    const ModelBundle m = generate_toy_model(7, toy_config(sharing));
    const ModelBundle back = load_bytes(archive_bytes(m));
    CHECK(back.config() == m.config());
    CHECK(back.provenance() == m.provenance());
    REQUIRE(back.tensors().size() == m.tensors().size());
    for (const auto& [name, t] : m.tensors()) {
      const Tensor& u = back.tensor(name);
      REQUIRE(u.shape == t.shape);
      CHECK(std::memcmp(u.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);
    }
    CHECK(archive_bytes(back) == archive_bytes(m));
  }
}

TEST_CASE("generator is a deterministic function of the seed") {
  const ModelConfig cfg = toy_config();
  CHECK(archive_bytes(generate_toy_model(7, cfg)) == archive_bytes(generate_toy_model(7, cfg)));
  const ModelBundle a = generate_toy_model(7, cfg), b = generate_toy_model(8, cfg);
  bool differs = false;
  for (const auto& [name, t] : a.tensors()) differs = differs || !(t == b.tensor(name));
  CHECK(differs);
}

TEST_CASE("2-layer 4-head toy config survives validation after round trip") {
  ModelConfig cfg = toy_config();
  REQUIRE(cfg.num_layers == 2);
  REQUIRE(cfg.num_heads == 4);
  REQUIRE(cfg.hidden_dim == 32);
  CHECK_NOTHROW(load_bytes(archive_bytes(generate_toy_model(3, cfg))));
}

TEST_CASE("missing MLM head bias names the tensor") {
  const std::string bytes =
      edit_header(archive_bytes(generate_toy_model(1, toy_config())), [](json& h) { h.erase("mlm.bias"); });
  std::string subject;
  CHECK(load_error_kind(bytes, &subject) == LoadError::Kind::missing_tensor);
  CHECK(subject == "mlm.bias");
}

TEST_CASE("header with indivisible hidden_dim is a config error") {
  const std::string bytes = edit_header(archive_bytes(generate_toy_model(1, toy_config())), [](json& h) {
    h["__config__"]["hidden_dim"] = 100;
    h["__config__"]["num_heads"] = 8;
  });
  CHECK(load_error_kind(bytes) == LoadError::Kind::config_invalid);
}

TEST_CASE("malformed archives are rejected with a reason") {
  const std::string good = archive_bytes(generate_toy_model(1, toy_config()));
  CHECK(load_error_kind("NOPE!" + good.substr(5)) == LoadError::Kind::bad_magic);
  CHECK(load_error_kind(good.substr(0, 9)) == LoadError::Kind::truncated);
  CHECK(load_error_kind(good.substr(0, good.size() - 4)) == LoadError::Kind::truncated);

  std::string subject;
  const std::string wrong_shape = edit_header(good, [](json& h) { h["mlm.bias"]["shape"] = {63}; });
  CHECK(load_error_kind(wrong_shape, &subject) == LoadError::Kind::shape_mismatch);
  CHECK(subject == "mlm.bias");

  const std::string extra = edit_header(good, [](json& h) { h["stray"] = h["mlm.bias"]; });
  CHECK(load_error_kind(extra, &subject) == LoadError::Kind::unexpected_tensor);
  CHECK(subject == "stray");

  const std::string f16 = edit_header(good, [](json& h) { h["mlm.bias"]["dtype"] = "f16"; });
  CHECK(load_error_kind(f16) == LoadError::Kind::bad_header);
}

TEST_CASE("non-finite weights are rejected") {
  ModelBundle m = generate_toy_model(1, toy_config());
  auto tensors = m.tensors();
  tensors.at("mlm.dense.bias").data[2] = std::nanf("");
  try {
    ModelBundle bad(m.config(), tensors, "");
    FAIL("accepted NaN");
  } catch (const LoadError& e) {
    CHECK(e.kind() == LoadError::Kind::non_finite);
    CHECK(e.subject() == "mlm.dense.bias");
  }
}

TEST_CASE("tied layers alias one parameter set") {
  ModelBundle m = generate_toy_model(5, toy_config(LayerSharing::tied));
  CHECK(m.layer(0).query_w.data() == m.layer(1).query_w.data());
  std::mt19937_64 rng(1);
  const auto tokens = testing::random_sentence(rng, m.config(), 8);
  const ForwardTrace before = forward(m, tokens);

  perturb(m.mutable_tensor("layers.0.ffn.output.bias").data);
  const ForwardTrace after = forward(m, tokens);
  // Both layers read the mutated set, so both layers' outputs move.
  for (int l = 0; l < 2; ++l) {
    CHECK(relative_error(after.layers[static_cast<std::size_t>(l)].residual_out.data,
                         before.layers[static_cast<std::size_t>(l)].residual_out.data) > 1e-3);
  }
  // Same mutation on an untied copy whose layer-1 set keeps the old values:
  // layer 0 matches, layer 1 does not, so the tied layer 1 read the mutated set.
  const ModelBundle base = generate_toy_model(5, toy_config(LayerSharing::tied));
  std::map<std::string, Tensor> split;
  for (const auto& [name, t] : base.tensors()) {
    split[name] = t;
    if (name.starts_with("layers.0.")) split["layers.1." + name.substr(9)] = t;
  }
  perturb(split.at("layers.0.ffn.output.bias").data);
  const ModelBundle untied(toy_config(LayerSharing::untied), split, "");
  const ForwardTrace partial = forward(untied, tokens);
  CHECK(partial.layers[0] == after.layers[0]);
  CHECK(relative_error(partial.layers[1].residual_out.data, after.layers[1].residual_out.data) > 1e-3);
}

TEST_CASE("untied layers are independent") {
  ModelBundle m = generate_toy_model(5, toy_config(LayerSharing::untied));
  CHECK(m.layer(0).query_w.data() != m.layer(1).query_w.data());
  std::mt19937_64 rng(2);
  const auto tokens = testing::random_sentence(rng, m.config(), 8);
  const ForwardTrace before = forward(m, tokens);
  perturb(m.mutable_tensor("layers.1.ffn.output.bias").data);
  const ForwardTrace after = forward(m, tokens);
  CHECK(after.layers[0] == before.layers[0]);
  CHECK(relative_error(after.layers[1].residual_out.data, before.layers[1].residual_out.data) > 1e-3);
}
