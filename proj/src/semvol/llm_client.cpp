#include "semvol/llm_client.hpp"

#include "semvol/error.hpp"
#include "semvol/rng.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <future>
#include <random>
#include <thread>

namespace semvol::llm {

using nlohmann::json;

namespace prompts {

std::string render(std::string_view tmpl, std::string_view slot, std::string_view value) {
  const std::string needle = "{" + std::string(slot) + "}";
  std::string out(tmpl);
  for (std::size_t pos = out.find(needle); pos != std::string::npos;
       pos = out.find(needle, pos + value.size())) {
    out.replace(pos, needle.size(), value);
  }
  return out;
}

} // namespace prompts

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::IoError, "SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::vector<measures::TokenLogprob> parse_logprobs(const json &choice) {
  std::vector<measures::TokenLogprob> out;
  const auto lp = choice.find("logprobs");
  if (lp == choice.end() || !lp->is_object()) return out;
  const auto content = lp->find("content");
  if (content == lp->end() || !content->is_array()) return out;
  for (const auto &t : *content) {
    measures::TokenLogprob tok;
    tok.token = t.value("token", std::string{});
    tok.logprob = t.at("logprob").get<double>();
    if (t.contains("top_logprobs") && t["top_logprobs"].is_array()) {
      for (const auto &a : t["top_logprobs"]) {
        tok.top_alternatives.push_back({a.value("token", std::string{}), a.at("logprob").get<double>()});
      }
      std::stable_sort(tok.top_alternatives.begin(), tok.top_alternatives.end(),
                       [](const auto &a, const auto &b) { return a.logprob > b.logprob; });
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<ChatChoice> parse_chat_body(const std::string &body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedResponse, std::string("chat response is not JSON: ") + e.what());
  }
  try {
    const json &choices = j.at("choices");
    if (!choices.is_array() || choices.empty()) {
      fail(ErrorCode::EmptyCompletion, "chat response has no choices");
    }
    std::vector<ChatChoice> out;
    for (const auto &c : choices) {
      const json &content = c.at("message").at("content");
      if (!content.is_string() || trim(content.get<std::string>()).empty()) {
        fail(ErrorCode::EmptyCompletion, "chat choice has empty content");
      }
      out.push_back({trim(content.get<std::string>()), parse_logprobs(c)});
    }
    return out;
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedResponse, std::string("unexpected chat response shape: ") + e.what());
  }
}

std::vector<std::vector<float>> parse_embedding_body(const std::string &body, std::size_t expected) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedResponse, std::string("embedding response is not JSON: ") + e.what());
  }
  try {
    const json &data = j.at("data");
    if (!data.is_array() || data.size() != expected) {
      fail(ErrorCode::MalformedResponse, "embedding response has the wrong number of items",
           "expected " + std::to_string(expected));
    }
    std::vector<std::vector<float>> out(expected);
    std::vector<bool> seen(expected, false);
    for (std::size_t pos = 0; pos < data.size(); ++pos) {
      const json &item = data[pos];
      const std::size_t index = item.contains("index") ? item["index"].get<std::size_t>() : pos;
      if (index >= expected || seen[index]) {
        fail(ErrorCode::MalformedResponse, "embedding response has a bad index");
      }
      seen[index] = true;
      for (const auto &x : item.at("embedding")) out[index].push_back(x.get<float>());
      if (out[index].empty()) fail(ErrorCode::MalformedResponse, "empty embedding vector");
    }
    return out;
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedResponse, std::string("unexpected embedding response shape: ") + e.what());
  }
}

void check_dimensions(const std::vector<std::vector<float>> &vectors) {
  for (const auto &v : vectors) {
    if (v.size() != vectors.front().size()) {
      fail(ErrorCode::DimensionInconsistent, "embedding vectors disagree in dimension",
           std::to_string(vectors.front().size()) + " vs " + std::to_string(v.size()));
    }
  }
}

} // namespace

void ClientConfig::validate() const {
  if (max_in_flight < 1) fail(ErrorCode::ConfigError, "max_in_flight must be >= 1");
  if (retry.max_attempts < 1) fail(ErrorCode::ConfigError, "max_attempts must be >= 1");
  if (retry.base_backoff_ms < 0) fail(ErrorCode::ConfigError, "base_backoff_ms must be >= 0");
  if (timeout_ms < 1) fail(ErrorCode::ConfigError, "timeout_ms must be positive");
  if (embed_batch_size < 1) fail(ErrorCode::ConfigError, "embed_batch_size must be >= 1");
}

void apply_env(ClientConfig &cfg) {
  auto take = [](const char *name, std::string &slot) {
    if (const char *v = std::getenv(name); v != nullptr && *v != '\0') slot = v;
  };
  take("SEMVOL_API_BASE", cfg.api_base);
  take("SEMVOL_API_KEY", cfg.api_key);
  take("SEMVOL_EMBED_MODEL", cfg.embed_model);
  take("SEMVOL_CHAT_MODEL", cfg.chat_model);
}

std::string EmbeddingCache::key(std::string_view model, std::string_view text) {
  std::string material(model);
  material.push_back('\0');
  material.append(text);
  return sha256_hex(material);
}

fs::path EmbeddingCache::path_for(const std::string &key) const {
  return root_ / key.substr(0, 2) / key.substr(2, 2) / (key + ".bin");
}

std::optional<std::vector<float>> EmbeddingCache::get(std::string_view model,
                                                      std::string_view text) const {
  const fs::path path = path_for(key(model, text));
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char *>(header), 8)) return std::nullopt;
  std::uint64_t dim = 0;
  for (int i = 7; i >= 0; --i) dim = (dim << 8) | header[i];
  if (dim == 0 || dim > (1u << 24)) return std::nullopt;
  std::vector<unsigned char> bytes(dim * 4);
  if (!in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    return std::nullopt;
  }
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | bytes[4 * i + static_cast<std::size_t>(b)];
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void EmbeddingCache::put(std::string_view model, std::string_view text,
                         const std::vector<float> &vec) const {
  const fs::path path = path_for(key(model, text));
  fs::create_directories(path.parent_path());
  std::string bytes(8 + 4 * vec.size(), '\0');
  std::uint64_t dim = vec.size();
  for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((dim >> (8 * i)) & 0xff);
  for (std::size_t i = 0; i < vec.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(vec[i]);
    for (int b = 0; b < 4; ++b) bytes[8 + 4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  // Unique temp name per writer; rename is atomic on the same filesystem.
  std::ostringstream tmp_name;
  tmp_name << path.filename().string() << ".tmp." << std::this_thread::get_id() << '.'
           << std::chrono::steady_clock::now().time_since_epoch().count();
  const fs::path tmp = path.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write cache entry", tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
  }
}

int parse_verdict(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && (std::isspace(static_cast<unsigned char>(reply[i])) ||
                              std::ispunct(static_cast<unsigned char>(reply[i])))) {
    ++i;
  }
  std::string word;
  while (i < reply.size() && std::isalpha(static_cast<unsigned char>(reply[i]))) {
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[i]))));
    ++i;
  }
  if (word == "yes") return 1;
  if (word == "no") return 0;
  fail(ErrorCode::UnparseableVerdict, "reply does not start with yes or no", std::string(reply.substr(0, 80)));
}

struct Client::Fixtures {
  std::map<std::pair<std::string, std::string>, std::vector<ChatChoice>> chat;
  std::map<std::string, std::vector<float>> embeddings;

  explicit Fixtures(const fs::path &dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::ConfigError, "fixture directory does not exist", dir.string());
    if (const auto chat_path = dir / "chat.jsonl"; fs::exists(chat_path)) {
      dataio::for_each_jsonl(chat_path, [&](const json &j, std::size_t) {
        std::vector<ChatChoice> replies;
        const json &texts = j.at("replies");
        for (std::size_t i = 0; i < texts.size(); ++i) {
          ChatChoice c{trim(texts[i].get<std::string>()), {}};
          if (j.contains("logprobs") && j["logprobs"].is_array() && i < j["logprobs"].size()) {
            c.logprobs = parse_logprobs(json{{"logprobs", {{"content", j["logprobs"][i]}}}});
          }
          replies.push_back(std::move(c));
        }
        chat[{j.at("kind").get<std::string>(), j.at("question").get<std::string>()}] = std::move(replies);
      });
    }
    if (const auto emb_path = dir / "embeddings.jsonl"; fs::exists(emb_path)) {
      dataio::for_each_jsonl(emb_path, [&](const json &j, std::size_t) {
        embeddings[j.at("text").get<std::string>()] = j.at("embedding").get<std::vector<float>>();
      });
    }
  }
};

Client::Client(ClientConfig cfg)
    : cfg_(std::move(cfg)), slots_(std::max(1, cfg_.max_in_flight)),
      jitter_state_(cfg_.jitter_seed) {
  cfg_.validate();
  if (cfg_.fixture_dir) {
    fixtures_ = std::make_unique<Fixtures>(*cfg_.fixture_dir);
  } else {
    const auto scheme = cfg_.api_base.find("://");
    const auto slash = cfg_.api_base.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    host_ = cfg_.api_base.substr(0, slash);
    path_prefix_ = slash == std::string::npos ? "" : cfg_.api_base.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
  if (cfg_.cache_dir) cache_.emplace(*cfg_.cache_dir);
}

Client::~Client() = default;

int Client::jitter_ms(int attempt) {
  const double cap = static_cast<double>(cfg_.retry.base_backoff_ms) * std::ldexp(1.0, attempt - 1);
  std::lock_guard lock(jitter_mutex_);
  const double u = static_cast<double>(splitmix64(jitter_state_) >> 11) * 0x1.0p-53;
  return static_cast<int>(u * cap);
}

Client::HttpResult Client::post_with_retry(const std::string &path, const std::string &body) {
  HttpResult result;
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    result.attempts = attempt;
    httplib::Result res{nullptr, httplib::Error::Unknown};
    {
      slots_.acquire();
      const int now = ++in_flight_;
      int peak = peak_in_flight_.load();
      while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {}
      ++attempts_;
      httplib::Client http(host_);
      const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
      http.set_connection_timeout(timeout);
      http.set_read_timeout(timeout);
      http.set_write_timeout(timeout);
      httplib::Headers headers;
      if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
      res = http.Post(path_prefix_ + path, headers, body, "application/json");
      --in_flight_;
      slots_.release();
    }

    if (!res) {
      const auto err = res.error();
      last_error = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
                       ? "timeout"
                       : httplib::to_string(err);
      result.status = 0;
    } else {
      result.status = res->status;
      if (res->status >= 200 && res->status < 300) {
        result.body = res->body;
        return result;
      }
      last_error = "status " + std::to_string(res->status);
      if (res->status != 429 && res->status < 500) {
        fail(ErrorCode::HttpError, "request rejected", last_error + " " + path);
      }
    }
    if (attempt < cfg_.retry.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(jitter_ms(attempt)));
    }
  }
  fail(ErrorCode::HttpError, "retries exhausted",
       last_error + " after " + std::to_string(result.attempts) + " attempts " + path);
}

ChatResult Client::chat(const ChatRequest &request) {
  if (fixtures_) fail(ErrorCode::ConfigError, "raw chat is unavailable in fixture mode");
  json body = {{"model", cfg_.chat_model}, {"temperature", request.temperature}, {"n", request.n}};
  json messages = json::array();
  for (const auto &m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  body["messages"] = std::move(messages);
  if (request.logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = request.top_logprobs;
  }
  const auto http = post_with_retry("/v1/chat/completions", body.dump());
  ChatResult out;
  out.attempts = http.attempts;
  out.choices = parse_chat_body(http.body);
  return out;
}

std::vector<ChatChoice> Client::fixture_chat(std::string_view kind, const std::string &question,
                                             int n) const {
  const auto it = fixtures_->chat.find({std::string(kind), question});
  if (it == fixtures_->chat.end() || it->second.size() < static_cast<std::size_t>(n)) {
    fail(ErrorCode::MissingFixture, "no fixture replies for this question",
         std::string(kind) + ": " + question.substr(0, 80));
  }
  return {it->second.begin(), it->second.begin() + n};
}

std::vector<ChatChoice> Client::run_chat(const ChatRequest &request, std::string_view fixture_kind,
                                         const std::string &question, int n, int &attempts) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "perturbation count must be >= 1");
  attempts = 0;
  if (fixtures_) return fixture_chat(fixture_kind, question, n);

  if (cfg_.use_n_choices || n == 1) {
    ChatRequest batched = request;
    batched.n = n;
    auto result = chat(batched);
    attempts = result.attempts;
    if (result.choices.size() != static_cast<std::size_t>(n)) {
      fail(ErrorCode::MalformedResponse, "backend returned the wrong number of choices");
    }
    return std::move(result.choices);
  }

  std::vector<std::future<ChatResult>> pending;
  pending.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pending.push_back(std::async(std::launch::async, [this, &request] { return chat(request); }));
  }
  std::vector<ChatChoice> out;
  std::exception_ptr first_error;
  for (auto &f : pending) {
    try {
      auto r = f.get();
      attempts += r.attempts;
      out.push_back(std::move(r.choices.front()));
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

dataio::PerturbationSet Client::augment_query(const std::string &record_id,
                                              const std::string &query, int n, double temperature) {
  ChatRequest request;
  request.messages = {{"user", prompts::render(prompts::kQueryExtension, "question", query)}};
  request.temperature = temperature;
  dataio::PerturbationSet set;
  set.record_id = record_id;
  set.kind = dataio::PerturbationKind::QueryAugmentation;
  set.generation = {cfg_.chat_model, temperature, std::string(prompts::kQueryExtensionId)};
  for (auto &c : run_chat(request, "query_augmentation", query, n, set.attempts)) {
    set.texts.push_back(std::move(c.text));
  }
  return set;
}

dataio::PerturbationSet Client::sample_responses(const std::string &record_id,
                                                 const std::string &query, int n,
                                                 double temperature) {
  if (temperature < 0) fail(ErrorCode::InvalidArgument, "temperature must be >= 0");
  ChatRequest request;
  request.messages = {{"user", query}};
  request.temperature = temperature;
  request.logprobs = cfg_.request_logprobs;
  request.top_logprobs = cfg_.top_logprobs;
  dataio::PerturbationSet set;
  set.record_id = record_id;
  set.kind = dataio::PerturbationKind::ResponseSample;
  set.generation = {cfg_.chat_model, temperature, std::string(prompts::kResponseSampleId)};
  bool any_logprobs = false;
  std::vector<std::vector<measures::TokenLogprob>> logprobs;
  for (auto &c : run_chat(request, "response_sample", query, n, set.attempts)) {
    set.texts.push_back(std::move(c.text));
    any_logprobs = any_logprobs || !c.logprobs.empty();
    logprobs.push_back(std::move(c.logprobs));
  }
  if (any_logprobs) set.logprobs = std::move(logprobs);
  return set;
}

int Client::ptrue_judge(JudgeTask task, const std::string &question,
                        const std::vector<std::string> &candidates,
                        const std::string &proposed_answer) {
  if (candidates.empty()) fail(ErrorCode::InvalidArgument, "pTrue needs at least one candidate");
  std::string prompt;
  if (task == JudgeTask::Query) {
    prompt = prompts::render(prompts::kAmbiguity, "question", question);
  } else {
    std::string listed;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      listed += std::to_string(i + 1) + ". " + candidates[i] + "\n";
    }
    prompt = prompts::render(prompts::kResponseCheck, "question", question);
    prompt = prompts::render(prompt, "candidates", trim(listed));
    prompt = prompts::render(prompt, "answer", proposed_answer.empty() ? candidates.front() : proposed_answer);
  }
  ChatRequest request;
  request.messages = {{"user", prompt}};
  request.temperature = 0.0;
  int attempts = 0;
  const auto replies = run_chat(request, "p_true", question, 1, attempts);
  return parse_verdict(replies.front().text);
}

std::vector<std::vector<float>> Client::embed_batch(const std::vector<std::string> &texts) {
  json body = {{"model", cfg_.embed_model}, {"input", texts}};
  const auto http = post_with_retry("/v1/embeddings", body.dump());
  auto vectors = parse_embedding_body(http.body, texts.size());
  check_dimensions(vectors);
  return vectors;
}

std::vector<std::vector<float>> Client::embed_texts(const std::vector<std::string> &texts) {
  for (const auto &t : texts) {
    if (trim(t).empty()) fail(ErrorCode::InvalidArgument, "cannot embed an empty text");
  }
  std::vector<std::vector<float>> out(texts.size());
  if (texts.empty()) return out;

  if (fixtures_) {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto it = fixtures_->embeddings.find(texts[i]);
      if (it == fixtures_->embeddings.end()) {
        fail(ErrorCode::MissingFixture, "no fixture embedding for text", texts[i].substr(0, 80));
      }
      out[i] = it->second;
    }
    check_dimensions(out);
    return out;
  }

  // Unique cache misses, in first-seen order.
  std::vector<std::string> misses;
  std::map<std::string, std::size_t> miss_index;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (cache_) {
      if (auto hit = cache_->get(cfg_.embed_model, texts[i])) {
        out[i] = std::move(*hit);
        continue;
      }
    }
    if (miss_index.emplace(texts[i], misses.size()).second) misses.push_back(texts[i]);
  }

  std::vector<std::vector<float>> fetched(misses.size());
  const auto batch = static_cast<std::size_t>(cfg_.embed_batch_size);
  std::vector<std::future<std::vector<std::vector<float>>>> pending;
  for (std::size_t start = 0; start < misses.size(); start += batch) {
    std::vector<std::string> chunk(misses.begin() + static_cast<std::ptrdiff_t>(start),
                                   misses.begin() + static_cast<std::ptrdiff_t>(std::min(misses.size(), start + batch)));
    pending.push_back(std::async(std::launch::async,
                                 [this, chunk = std::move(chunk)] { return embed_batch(chunk); }));
  }
  std::exception_ptr first_error;
  std::size_t offset = 0;
  for (auto &f : pending) {
    try {
      for (auto &v : f.get()) fetched[offset++] = std::move(v);
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  check_dimensions(fetched);
  for (std::size_t k = 0; k < misses.size(); ++k) {
    if (cache_) cache_->put(cfg_.embed_model, misses[k], fetched[k]);
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (out[i].empty()) out[i] = fetched[miss_index.at(texts[i])];
  }
  check_dimensions(out);
  return out;
}

} // namespace semvol::llm
