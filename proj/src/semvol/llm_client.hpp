#pragma once

#include "semvol/dataio.hpp"
#include "semvol/measures.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

namespace semvol::llm {

namespace fs = std::filesystem;

namespace prompts {

inline constexpr std::string_view kQueryExtensionId = "query_extension_v1";
inline constexpr std::string_view kQueryExtension =
    "Provide a paraphrase of the following question with a contextual expansion, while "
    "maintaining its core meaning. The filled context information should be diverse but must "
    "be concrete and specific (it cannot be a placeholder or a template). Only reply with the "
    "new version of the question and nothing else.\n\nQuestion:\n\n{question}";

inline constexpr std::string_view kAmbiguityId = "query_ambiguity_v1";
inline constexpr std::string_view kAmbiguity =
    "Is the following question ambiguous? A question is ambiguous if it can be interpreted in "
    "multiple ways or has multiple possible answers. If the question is ambiguous, then reply "
    "'Yes', otherwise reply 'No'. Only reply with 'Yes' or 'No' and nothing else."
    "\n\nQuestion:\n\n{question}";

// "Yes" marks the proposed answer as likely wrong so that 1 = uncertain.
inline constexpr std::string_view kResponseCheckId = "response_check_v1";
inline constexpr std::string_view kResponseCheck =
    "Below are a question, several candidate answers sampled for it, and a proposed answer. Is "
    "the proposed answer likely to be incorrect? If it is likely incorrect, then reply 'Yes', "
    "otherwise reply 'No'. Only reply with 'Yes' or 'No' and nothing else."
    "\n\nQuestion:\n\n{question}\n\nCandidate answers:\n\n{candidates}\n\nProposed answer:\n\n{answer}";

// Responses are sampled from the bare question.
inline constexpr std::string_view kResponseSampleId = "question_only_v1";

// Replaces every "{slot}" occurrence.
std::string render(std::string_view tmpl, std::string_view slot, std::string_view value);

} // namespace prompts

struct RetryPolicy {
  int max_attempts = 5;
  int base_backoff_ms = 500;
};

struct ClientConfig {
  std::string api_base = "https://api.openai.com";
  std::string api_key;
  std::string embed_model = "text-embedding-3-small";
  std::string chat_model = "gpt-4o-mini";
  int max_in_flight = 8;
  RetryPolicy retry;
  int timeout_ms = 60000;
  // Request n choices in one call instead of n single-choice calls.
  bool use_n_choices = false;
  int embed_batch_size = 128;
  bool request_logprobs = false;
  int top_logprobs = 5;
  std::optional<fs::path> cache_dir;
  // Offline mode: answers come from chat.jsonl / embeddings.jsonl here.
  std::optional<fs::path> fixture_dir;
  std::uint64_t jitter_seed = 0;

  void validate() const;
};

// SEMVOL_API_BASE, SEMVOL_API_KEY, SEMVOL_EMBED_MODEL, SEMVOL_CHAT_MODEL.
void apply_env(ClientConfig &cfg);

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  int n = 1;
  bool logprobs = false;
  int top_logprobs = 0;
};

struct ChatChoice {
  std::string text;
  std::vector<measures::TokenLogprob> logprobs;
};

struct ChatResult {
  std::vector<ChatChoice> choices;
  int attempts = 0;
};

// Content-addressed float32 vectors: <root>/<h0h1>/<h2h3>/<sha256>.bin, each
// file an 8-byte little-endian dimension followed by dim little-endian floats.
class EmbeddingCache {
public:
  explicit EmbeddingCache(fs::path root) : root_(std::move(root)) {}

  static std::string key(std::string_view model, std::string_view text);
  fs::path path_for(const std::string &key) const;

  std::optional<std::vector<float>> get(std::string_view model, std::string_view text) const;
  void put(std::string_view model, std::string_view text, const std::vector<float> &vec) const;

private:
  fs::path root_;
};

enum class JudgeTask { Query, Response };

// 1 for a leading "yes", 0 for a leading "no"; throws UnparseableVerdict.
int parse_verdict(std::string_view reply);

class Client {
public:
  explicit Client(ClientConfig cfg);
  ~Client();
  Client(const Client &) = delete;
  Client &operator=(const Client &) = delete;

  const ClientConfig &config() const noexcept { return cfg_; }

  dataio::PerturbationSet augment_query(const std::string &record_id, const std::string &query,
                                        int n, double temperature = 1.0);
  dataio::PerturbationSet sample_responses(const std::string &record_id,
                                           const std::string &query, int n, double temperature);
  std::vector<std::vector<float>> embed_texts(const std::vector<std::string> &texts);
  int ptrue_judge(JudgeTask task, const std::string &question,
                  const std::vector<std::string> &candidates,
                  const std::string &proposed_answer = {});

  // One chat call with retries through the request limiter.
  ChatResult chat(const ChatRequest &request);

  std::size_t network_attempts() const noexcept { return attempts_.load(); }
  int peak_in_flight() const noexcept { return peak_in_flight_.load(); }

private:
  struct Fixtures;
  struct HttpResult {
    int status = 0;
    std::string body;
    int attempts = 0;
  };

  HttpResult post_with_retry(const std::string &path, const std::string &body);
  std::vector<ChatChoice> fixture_chat(std::string_view kind, const std::string &question,
                                       int n) const;
  std::vector<ChatChoice> run_chat(const ChatRequest &request, std::string_view fixture_kind,
                                   const std::string &question, int n, int &attempts);
  std::vector<std::vector<float>> embed_batch(const std::vector<std::string> &texts);
  int jitter_ms(int attempt);

  ClientConfig cfg_;
  std::string host_;
  std::string path_prefix_;
  std::unique_ptr<Fixtures> fixtures_;
  std::optional<EmbeddingCache> cache_;
  std::counting_semaphore<1 << 16> slots_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
  std::atomic<std::size_t> attempts_{0};
  std::mutex jitter_mutex_;
  std::uint64_t jitter_state_;
};

} // namespace semvol::llm
