#include <doctest.h>

#include "semvol/llm_client.hpp"
#include "support/helpers.hpp"
#include "support/mock_server.hpp"
#include "support/oracles.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>

using namespace semvol;
using namespace semvol::llm;
using nlohmann::json;
using testing::error_code;
using testing::MockServer;
using testing::reply_chat;
using testing::reply_embeddings;
using testing::vector_for;

namespace {

ClientConfig config_for(const MockServer &s) {
  ClientConfig c;
  c.api_base = s.base();
  c.api_key = "test-key";
  c.retry.base_backoff_ms = 1;
  c.timeout_ms = 5000;
  return c;
}

} // namespace

TEST_CASE("prompt rendering") {
  CHECK(prompts::render("a {q} b {q}", "q", "x") == "a x b x");
  CHECK(prompts::render("{q}", "q", "{q}") == "{q}");
  CHECK(prompts::render("none", "q", "x") == "none");
  const auto p = prompts::render(prompts::kQueryExtension, "question", "Who wrote Hamlet?");
  CHECK(p.find("Who wrote Hamlet?") != std::string::npos);
  CHECK(p.find("{question}") == std::string::npos);
}

TEST_CASE("verdict parsing") {
  CHECK(parse_verdict("Yes") == 1);
  CHECK(parse_verdict("  yes, it is") == 1);
  CHECK(parse_verdict("'No'") == 0);
  CHECK(parse_verdict("no.") == 0);
  CHECK(error_code([] { parse_verdict("It depends"); }) == ErrorCode::UnparseableVerdict);
  CHECK(error_code([] { parse_verdict("Yesterday"); }) == ErrorCode::UnparseableVerdict);
  CHECK(error_code([] { parse_verdict(""); }) == ErrorCode::UnparseableVerdict);
}

TEST_CASE("config validation and environment") {
  ClientConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_in_flight = 0;
  CHECK(error_code([&] { c.validate(); }) == ErrorCode::ConfigError);
  c = ClientConfig{};
  c.retry.max_attempts = 0;
  CHECK(error_code([&] { c.validate(); }) == ErrorCode::ConfigError);

  ::setenv("SEMVOL_CHAT_MODEL", "env-model", 1);
  ::setenv("SEMVOL_API_KEY", "", 1);
  ClientConfig e;
  e.api_key = "kept";
  apply_env(e);
  CHECK(e.chat_model == "env-model");
  CHECK(e.api_key == "kept");
  ::unsetenv("SEMVOL_CHAT_MODEL");
  ::unsetenv("SEMVOL_API_KEY");
}

TEST_CASE("embeddings have the backend dimension") {
  MockServer s;
  s.on_embed([](const json &b, httplib::Response &res, int) { reply_embeddings(b, res, 1536); });
  Client client(config_for(s));
  const std::vector<std::string> texts{"alpha", "beta", "gamma"};
  const auto v = client.embed_texts(texts);
  REQUIRE(v.size() == 3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v[i].size() == 1536);
    CHECK(v[i] == vector_for(texts[i], 1536));
  }
  CHECK(s.last_auth() == "Bearer test-key");
}

TEST_CASE("inconsistent embedding dimensions are rejected") {
  MockServer s;
  s.on_embed([](const json &b, httplib::Response &res, int) {
    json data = json::array();
    std::size_t i = 0;
    for (const auto &t : b["input"]) {
      data.push_back({{"index", i}, {"embedding", vector_for(t.get<std::string>(), i == 0 ? 1536 : 512)}});
      ++i;
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  Client client(config_for(s));
  CHECK(error_code([&] { client.embed_texts({"a", "b"}); }) == ErrorCode::DimensionInconsistent);
}

TEST_CASE("rate limits are retried") {
  MockServer s;
  s.on_chat([](const json &, httplib::Response &res, int call) {
    if (call < 3) {
      res.status = 429;
      return;
    }
    reply_chat(res, {"hello"});
  });
  Client client(config_for(s));
  ChatRequest req;
  req.messages = {{"user", "hi"}};
  const auto r = client.chat(req);
  CHECK(r.attempts == 3);
  CHECK(s.chat_calls() == 3);
  REQUIRE(r.choices.size() == 1);
  CHECK(r.choices[0].text == "hello");
}

TEST_CASE("server errors exhaust the retry budget") {
  MockServer s;
  s.on_chat([](const json &, httplib::Response &res, int) { res.status = 503; });
  auto cfg = config_for(s);
  cfg.retry.max_attempts = 3;
  Client client(cfg);
  ChatRequest req;
  req.messages = {{"user", "hi"}};
  CHECK(error_code([&] { client.chat(req); }) == ErrorCode::HttpError);
  CHECK(s.chat_calls() == 3);
}

TEST_CASE("client errors are not retried") {
  MockServer s;
  s.on_chat([](const json &, httplib::Response &res, int) { res.status = 401; });
  Client client(config_for(s));
  ChatRequest req;
  req.messages = {{"user", "hi"}};
  CHECK(error_code([&] { client.chat(req); }) == ErrorCode::HttpError);
  CHECK(s.chat_calls() == 1);
}

TEST_CASE("malformed and empty responses") {
  MockServer s;
  s.on_chat([](const json &, httplib::Response &res, int) { res.set_content("{not json", "application/json"); });
  s.on_embed([](const json &, httplib::Response &res, int) { res.set_content("[]", "application/json"); });
  Client client(config_for(s));
  ChatRequest req;
  req.messages = {{"user", "hi"}};
  CHECK(error_code([&] { client.chat(req); }) == ErrorCode::MalformedResponse);
  CHECK(error_code([&] { client.embed_texts({"x"}); }) == ErrorCode::MalformedResponse);

  s.on_chat([](const json &, httplib::Response &res, int) { reply_chat(res, {"   "}); });
  CHECK(error_code([&] { client.chat(req); }) == ErrorCode::EmptyCompletion);
  s.on_chat([](const json &, httplib::Response &res, int) { res.set_content(R"({"choices":[]})", "application/json"); });
  CHECK(error_code([&] { client.chat(req); }) == ErrorCode::EmptyCompletion);
}

TEST_CASE("timeouts surface as HTTP errors") {
  MockServer s;
  s.on_chat([](const json &, httplib::Response &res, int) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    reply_chat(res, {"late"});
  });
  auto cfg = config_for(s);
  cfg.timeout_ms = 100;
  cfg.retry.max_attempts = 2;
  Client client(cfg);
  ChatRequest req;
  req.messages = {{"user", "hi"}};
  try {
    client.chat(req);
    FAIL("expected a timeout");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::HttpError);
    CHECK(e.context().find("timeout") != std::string::npos);
  }
}

TEST_CASE("unreachable backends fail after retries") {
  ClientConfig cfg;
  cfg.api_base = "http://127.0.0.1:1";
  cfg.retry = {2, 1};
  cfg.timeout_ms = 500;
  Client client(cfg);
  CHECK(error_code([&] { client.embed_texts({"x"}); }) == ErrorCode::HttpError);
  CHECK(client.network_attempts() == 2);
}

TEST_CASE("concurrency stays within the limit") {
  MockServer s;
  s.on_embed([](const json &b, httplib::Response &res, int) {
    std::this_thread::sleep_for(std::chrono::milliseconds(40));
    reply_embeddings(b, res, 8);
  });
  auto cfg = config_for(s);
  cfg.max_in_flight = 3;
  cfg.embed_batch_size = 1;
  Client client(cfg);
  std::vector<std::string> texts;
  for (int i = 0; i < 24; ++i) texts.push_back("t" + std::to_string(i));
  const auto v = client.embed_texts(texts);
  CHECK(v.size() == 24);
  CHECK(s.embed_calls() == 24);
  CHECK(client.peak_in_flight() <= 3);
  CHECK(s.peak() <= 3);
  CHECK(s.peak() >= 2);
}

TEST_CASE("embedding batches dedupe texts and keep order") {
  MockServer s;
  std::atomic<int> inputs{0};
  s.on_embed([&](const json &b, httplib::Response &res, int) {
    inputs += static_cast<int>(b["input"].size());
    reply_embeddings(b, res, 4);
  });
  auto cfg = config_for(s);
  cfg.embed_batch_size = 2;
  Client client(cfg);
  const auto v = client.embed_texts({"a", "b", "a", "c", "b"});
  CHECK(inputs.load() == 3);
  CHECK(s.embed_calls() == 2);
  CHECK(v[0] == v[2]);
  CHECK(v[1] == v[4]);
  CHECK(v[3] == vector_for("c", 4));
  CHECK(error_code([&] { client.embed_texts({"ok", "  "}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("the embedding cache avoids repeat requests") {
  MockServer s;
  s.on_embed([](const json &b, httplib::Response &res, int) { reply_embeddings(b, res, 1536); });
  oracle::TempDir dir("cache");
  auto cfg = config_for(s);
  cfg.cache_dir = dir.path();
  const std::vector<std::string> texts{"one", "two", "three"};

  std::vector<std::vector<float>> first;
  {
    Client client(cfg);
    first = client.embed_texts(texts);
    CHECK(client.network_attempts() == 1);
  }
  const int calls = s.embed_calls();
  Client again(cfg);
  const auto second = again.embed_texts(texts);
  CHECK(s.embed_calls() == calls);
  CHECK(again.network_attempts() == 0);
  REQUIRE(second.size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(std::memcmp(first[i].data(), second[i].data(), first[i].size() * sizeof(float)) == 0);
  }

  // A different model is a different key.
  cfg.embed_model = "other";
  Client other(cfg);
  other.embed_texts({"one"});
  CHECK(other.network_attempts() == 1);
}

TEST_CASE("cache entries round-trip bit for bit") {
  oracle::TempDir dir("cache");
  EmbeddingCache cache(dir.path());
  const std::vector<float> v{0.0f, -0.0f, 1e-40f, std::numeric_limits<float>::max(),
                             -std::numeric_limits<float>::min(), 0.1f, -3.25f};
  cache.put("m", "text", v);
  const auto back = cache.get("m", "text");
  REQUIRE(back.has_value());
  REQUIRE(back->size() == v.size());
  CHECK(std::memcmp(back->data(), v.data(), v.size() * sizeof(float)) == 0);
  CHECK_FALSE(cache.get("m", "other").has_value());
  CHECK_FALSE(cache.get("m2", "text").has_value());

  const auto key = EmbeddingCache::key("m", "text");
  CHECK(key.size() == 64);
  CHECK(EmbeddingCache::key("ab", "c") != EmbeddingCache::key("a", "bc"));
  const auto path = cache.path_for(key);
  CHECK(path.parent_path().filename() == key.substr(2, 2));
  CHECK(fs::file_size(path) == 8 + 4 * v.size());

  std::ifstream in(path, std::ios::binary);
  unsigned char head[8];
  in.read(reinterpret_cast<char *>(head), 8);
  CHECK(head[0] == v.size());
  for (int i = 1; i < 8; ++i) CHECK(head[i] == 0);

  // Truncated entries read as misses.
  std::filesystem::resize_file(path, 10);
  CHECK_FALSE(cache.get("m", "text").has_value());
}

TEST_CASE("query augmentation") {
  MockServer s;
  std::atomic<int> seen_n{0};
  s.on_chat([&](const json &b, httplib::Response &res, int call) {
    seen_n = b["n"].get<int>();
    const auto prompt = b["messages"][0]["content"].get<std::string>();
    CHECK(prompt.find("Who wrote Hamlet?") != std::string::npos);
    std::vector<std::string> texts;
    for (int i = 0; i < seen_n; ++i) texts.push_back("variant " + std::to_string(call) + "." + std::to_string(i));
    reply_chat(res, texts);
  });
  auto cfg = config_for(s);
  {
    Client client(cfg);
    const auto set = client.augment_query("r1", "Who wrote Hamlet?", 4, 1.0);
    CHECK(set.texts.size() == 4);
    CHECK(s.chat_calls() == 4);
    CHECK(set.attempts == 4);
    CHECK(set.generation.prompt_template_id == prompts::kQueryExtensionId);
    CHECK(set.kind == dataio::PerturbationKind::QueryAugmentation);
  }
  cfg.use_n_choices = true;
  Client batched(cfg);
  const auto set = batched.augment_query("r1", "Who wrote Hamlet?", 5, 1.0);
  CHECK(set.texts.size() == 5);
  CHECK(seen_n.load() == 5);
  CHECK(s.chat_calls() == 5);
}

TEST_CASE("response sampling keeps token logprobs") {
  MockServer s;
  s.on_chat([](const json &b, httplib::Response &res, int) {
    CHECK(b["logprobs"] == true);
    CHECK(b["top_logprobs"] == 3);
    const json content = json::array({
        {{"token", "Par"}, {"logprob", -0.1}, {"top_logprobs", {{{"token", "Lon"}, {"logprob", -3.0}}, {{"token", "Par"}, {"logprob", -0.1}}}}},
        {{"token", "is"}, {"logprob", -0.01}, {"top_logprobs", json::array()}},
    });
    const json choice = {{"message", {{"content", "Paris"}}}, {"logprobs", {{"content", content}}}};
    res.set_content(json{{"choices", {choice}}}.dump(), "application/json");
  });
  auto cfg = config_for(s);
  cfg.request_logprobs = true;
  cfg.top_logprobs = 3;
  Client client(cfg);
  const auto set = client.sample_responses("r", "Capital of France?", 2, 0.7);
  CHECK(set.texts == std::vector<std::string>{"Paris", "Paris"});
  REQUIRE(set.logprobs.size() == 2);
  REQUIRE(set.logprobs[0].size() == 2);
  CHECK(set.logprobs[0][0].logprob == -0.1);
  CHECK(set.logprobs[0][0].top_alternatives.front().token == "Par");
  CHECK(set.generation.temperature == 0.7);
}

TEST_CASE("pTrue judge") {
  MockServer s;
  s.on_chat([](const json &b, httplib::Response &res, int) {
    CHECK(b["temperature"] == 0.0);
    const auto prompt = b["messages"][0]["content"].get<std::string>();
    reply_chat(res, {prompt.find("ambiguous") != std::string::npos ? "Yes." : "It depends"});
  });
  Client client(config_for(s));
  CHECK(client.ptrue_judge(JudgeTask::Query, "Which bank?", {"x"}) == 1);
  CHECK(error_code([&] { client.ptrue_judge(JudgeTask::Response, "q", {"a", "b"}); }) ==
        ErrorCode::UnparseableVerdict);
}

TEST_CASE("fixture mode never touches the network") {
  oracle::TempDir dir("fixtures");
  {
    std::ofstream chat(dir / "chat.jsonl");
    chat << json{{"kind", "query_augmentation"}, {"question", "Q"}, {"replies", {"a", "b", "c"}}}.dump() << "\n";
    chat << json{{"kind", "p_true"}, {"question", "Q"}, {"replies", {"No"}}}.dump() << "\n";
    std::ofstream emb(dir / "embeddings.jsonl");
    emb << json{{"text", "a"}, {"embedding", {1.0, 0.0}}}.dump() << "\n";
    emb << json{{"text", "b"}, {"embedding", {0.0, 1.0}}}.dump() << "\n";
    emb << json{{"text", "wide"}, {"embedding", {0.0, 1.0, 2.0}}}.dump() << "\n";
  }
  ClientConfig cfg;
  cfg.api_base = "http://127.0.0.1:1";
  cfg.fixture_dir = dir.path();
  Client client(cfg);
  const auto set = client.augment_query("r", "Q", 2);
  CHECK(set.texts == std::vector<std::string>{"a", "b"});
  CHECK(client.embed_texts({"a", "b"})[1] == std::vector<float>{0.0f, 1.0f});
  CHECK(client.ptrue_judge(JudgeTask::Query, "Q", {"a"}) == 0);
  CHECK(error_code([&] { client.augment_query("r", "Q", 4); }) == ErrorCode::MissingFixture);
  CHECK(error_code([&] { client.augment_query("r", "other", 1); }) == ErrorCode::MissingFixture);
  CHECK(error_code([&] { client.embed_texts({"zzz"}); }) == ErrorCode::MissingFixture);
  CHECK(error_code([&] { client.embed_texts({"a", "wide"}); }) == ErrorCode::DimensionInconsistent);
  CHECK(client.network_attempts() == 0);

  ClientConfig missing;
  missing.fixture_dir = dir / "nope";
  CHECK(error_code([&] { Client c(missing); }) == ErrorCode::ConfigError);
}
