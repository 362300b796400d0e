#pragma once

#include "semvol/calibration.hpp"
#include "semvol/evaluation.hpp"
#include "semvol/measures.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace semvol::dataio {

namespace fs = std::filesystem;

inline constexpr double kDefaultRougeThreshold = 0.3;
// Recorded alongside derived labels so they can be reproduced.
inline constexpr std::string_view kTokenizerVersion = "lower-alnum-v1";

enum class RecordKind { Query, Qa };

struct Record {
  std::string id;
  RecordKind kind = RecordKind::Query;
  std::string query;
  std::optional<std::string> response;
  std::optional<std::string> reference;
  std::optional<int> label;
  nlohmann::json extra = nlohmann::json::object(); // unknown keys seen on read
};

enum class PerturbationKind { QueryAugmentation, ResponseSample };

struct Generation {
  std::string model;
  double temperature = 1.0;
  std::string prompt_template_id;
};

struct PerturbationSet {
  std::string record_id;
  PerturbationKind kind = PerturbationKind::QueryAugmentation;
  std::vector<std::string> texts;
  Generation generation;
  // Per-text token logprobs when the backend returned them.
  std::vector<std::vector<measures::TokenLogprob>> logprobs;
  int attempts = 0; // HTTP attempts spent producing this set
  nlohmann::json extra = nlohmann::json::object();
};

struct EmbeddingsRecord {
  std::string id;
  int dim = 0;
  std::vector<std::vector<double>> vectors;
  nlohmann::json extra = nlohmann::json::object();
};

struct Prediction {
  std::string id;
  double score = 0.0;
  int predicted = 0;
};

std::string_view to_string(RecordKind k) noexcept;
std::string_view to_string(PerturbationKind k) noexcept;

// Lowercase runs of alphanumeric characters; bytes >= 0x80 count as
// alphanumeric so non-ASCII words stay intact.
std::vector<std::string> tokenize(std::string_view text);

// LCS F-measure (beta = 1); 0 when either side is empty or nothing matches.
double rouge_l(const std::vector<std::string> &candidate,
               const std::vector<std::string> &reference);
double rouge_l(std::string_view candidate, std::string_view reference);

// 1 (hallucination) iff rouge_l(response, reference) < threshold.
int label_by_rouge(const Record &record, double threshold = kDefaultRougeThreshold);

// Gold label if present, else the ROUGE-derived label for QA records with a
// response and reference.
std::optional<int> effective_label(const Record &record,
                                   std::optional<double> rouge_threshold);

// Seeded sample without replacement among records carrying a label. Ids are
// returned in dataset order.
std::vector<std::string> sample_labeled_subset(const std::vector<Record> &records,
                                               std::size_t size, std::uint64_t seed,
                                               bool stratified = false);

// Serialization. Readers attach 1-based line numbers to ParseError.
nlohmann::ordered_json to_json(const Record &r);
Record record_from_json(const nlohmann::json &j);
nlohmann::ordered_json to_json(const PerturbationSet &p);
PerturbationSet perturbation_from_json(const nlohmann::json &j);
nlohmann::ordered_json to_json(const EmbeddingsRecord &e);
EmbeddingsRecord embeddings_from_json(const nlohmann::json &j);
nlohmann::ordered_json to_json(const measures::ScoreRow &s);
measures::ScoreRow score_from_json(const nlohmann::json &j);
nlohmann::ordered_json to_json(const calibration::CalibrationResult &c);
calibration::CalibrationResult calibration_from_json(const nlohmann::json &j);
nlohmann::ordered_json to_json(const Prediction &p);
Prediction prediction_from_json(const nlohmann::json &j);

void for_each_jsonl(const fs::path &path,
                    const std::function<void(const nlohmann::json &, std::size_t line)> &fn);

std::vector<Record> load_dataset(const fs::path &path);
void save_dataset(const fs::path &path, const std::vector<Record> &records);
std::vector<PerturbationSet> load_perturbations(const fs::path &path);
void save_perturbations(const fs::path &path, const std::vector<PerturbationSet> &sets);
// Appends one line and flushes, for resumable stages.
void append_perturbation(const fs::path &path, const PerturbationSet &set);
std::vector<EmbeddingsRecord> load_embeddings(const fs::path &path);
void save_embeddings(const fs::path &path, const std::vector<EmbeddingsRecord> &records);
void append_embeddings(const fs::path &path, const EmbeddingsRecord &record);
std::vector<measures::ScoreRow> load_scores(const fs::path &path);
void save_scores(const fs::path &path, const std::vector<measures::ScoreRow> &rows);
calibration::CalibrationResult load_calibration(const fs::path &path);
void save_calibration(const fs::path &path, const calibration::CalibrationResult &c);
std::vector<Prediction> load_predictions(const fs::path &path);
void save_predictions(const fs::path &path, const std::vector<Prediction> &rows);
evaluation::EvalReport load_report(const fs::path &path);
void save_report(const fs::path &path, const evaluation::EvalReport &report);

// Write to a sibling temp file, then rename over the target.
void write_atomic(const fs::path &path, std::string_view content);
std::string read_file(const fs::path &path);
void warn(std::string_view message);

} // namespace semvol::dataio
