#include "semvol/dataio.hpp"

#include "semvol/error.hpp"
#include "semvol/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace semvol::dataio {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void parse_fail(const std::string &reason) { fail(ErrorCode::ParseError, reason); }

const json &require(const json &j, const char *key) {
  if (!j.is_object()) parse_fail("expected a JSON object");
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) parse_fail(std::string("missing \"") + key + "\"");
  return *it;
}

std::string require_string(const json &j, const char *key) {
  const json &v = require(j, key);
  if (!v.is_string()) parse_fail(std::string("\"") + key + "\" must be a string");
  return v.get<std::string>();
}

double require_number(const json &j, const char *key) {
  const json &v = require(j, key);
  if (!v.is_number()) parse_fail(std::string("\"") + key + "\" must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) parse_fail(std::string("\"") + key + "\" must be finite");
  return x;
}

int require_binary(const json &v, const char *key) {
  if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
    parse_fail(std::string("\"") + key + "\" must be 0 or 1");
  }
  return v.get<int>();
}

json unknown_keys(const json &j, std::initializer_list<const char *> known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char *k) { return it.key() == k; })) {
      extra[it.key()] = it.value();
    }
  }
  return extra;
}

void warn_dropped(const json &extra, const std::string &id) {
  if (!extra.empty()) {
    std::string keys;
    for (auto it = extra.begin(); it != extra.end(); ++it) {
      keys += (keys.empty() ? "" : ",") + it.key();
    }
    warn("dropping unknown keys [" + keys + "] of " + id);
  }
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T, typename Fn>
std::string to_lines(const std::vector<T> &items, Fn &&fn) {
  std::string out;
  for (const auto &item : items) {
    out += fn(item).dump();
    out += '\n';
  }
  return out;
}

void append_line(const fs::path &path, const std::string &line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open for append", path.string());
  out << line << '\n';
  out.flush();
  if (!out) fail(ErrorCode::IoError, "write failed", path.string());
}

template <typename T>
void check_unique(const std::vector<T> &items, const std::vector<std::size_t> &lines,
                  std::string (*key)(const T &)) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!seen.insert(key(items[i])).second) {
      fail(ErrorCode::DuplicateId, "duplicate id \"" + key(items[i]) + "\"",
           "line " + std::to_string(lines[i]));
    }
  }
}

json logprob_to_json(const measures::TokenLogprob &t) {
  json alts = json::array();
  for (const auto &a : t.top_alternatives) alts.push_back({{"token", a.token}, {"logprob", a.logprob}});
  return {{"token", t.token}, {"logprob", t.logprob}, {"top_logprobs", alts}};
}

measures::TokenLogprob logprob_from_json(const json &j) {
  measures::TokenLogprob t;
  t.token = j.value("token", std::string{});
  t.logprob = require_number(j, "logprob");
  if (t.logprob > 1e-6) parse_fail("logprob must be <= 0");
  if (j.contains("top_logprobs") && j["top_logprobs"].is_array()) {
    for (const auto &a : j["top_logprobs"]) {
      measures::TokenAlternative alt{a.value("token", std::string{}), require_number(a, "logprob")};
      if (alt.logprob > 1e-6) parse_fail("logprob must be <= 0");
      t.top_alternatives.push_back(std::move(alt));
    }
    std::stable_sort(t.top_alternatives.begin(), t.top_alternatives.end(),
                     [](const auto &a, const auto &b) { return a.logprob > b.logprob; });
  }
  return t;
}

} // namespace

void warn(std::string_view message) { std::cerr << "[semvol] warning: " << message << '\n'; }

std::string_view to_string(RecordKind k) noexcept { return k == RecordKind::Query ? "query" : "qa"; }

std::string_view to_string(PerturbationKind k) noexcept {
  return k == PerturbationKind::QueryAugmentation ? "query_augmentation" : "response_sample";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double rouge_l(const std::vector<std::string> &candidate,
               const std::vector<std::string> &reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), row(reference.size() + 1, 0);
  for (const auto &c : candidate) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      row[j] = c == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    }
    std::swap(prev, row);
  }
  const double lcs = static_cast<double>(prev.back());
  if (lcs == 0.0) return 0.0;
  // 2PR/(P+R) with P = lcs/|c| and R = lcs/|r|, in one rounding.
  return 2.0 * lcs / static_cast<double>(candidate.size() + reference.size());
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(tokenize(candidate), tokenize(reference));
}

int label_by_rouge(const Record &record, double threshold) {
  if (!record.response || !record.reference) {
    fail(ErrorCode::MissingField, "ROUGE labeling needs response and reference", record.id);
  }
  return rouge_l(*record.response, *record.reference) < threshold ? 1 : 0;
}

std::optional<int> effective_label(const Record &record, std::optional<double> rouge_threshold) {
  if (record.label) return record.label;
  if (rouge_threshold && record.kind == RecordKind::Qa && record.response && record.reference) {
    return label_by_rouge(record, *rouge_threshold);
  }
  return std::nullopt;
}

std::vector<std::string> sample_labeled_subset(const std::vector<Record> &records,
                                               std::size_t size, std::uint64_t seed,
                                               bool stratified) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) continue;
    (*records[i].label == 1 ? pos : neg).push_back(i);
  }
  const std::size_t available = pos.size() + neg.size();
  if (size > available) {
    fail(ErrorCode::InsufficientLabels, "labeled subset larger than the labeled records",
         "requested " + std::to_string(size) + ", have " + std::to_string(available));
  }

  Rng rng(seed);
  // First `take` entries of a partial Fisher-Yates shuffle.
  auto draw = [&rng](std::vector<std::size_t> pool, std::size_t take) {
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
  };

  std::vector<std::size_t> chosen;
  if (stratified) {
    std::size_t take_pos = std::min(pos.size(), (size + 1) / 2);
    const std::size_t take_neg = std::min(neg.size(), size - take_pos);
    take_pos = std::min(pos.size(), size - take_neg);
    chosen = draw(pos, take_pos);
    const auto n = draw(neg, take_neg);
    chosen.insert(chosen.end(), n.begin(), n.end());
  } else {
    std::vector<std::size_t> all(pos);
    all.insert(all.end(), neg.begin(), neg.end());
    std::sort(all.begin(), all.end());
    chosen = draw(all, size);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> ids;
  ids.reserve(chosen.size());
  for (const std::size_t i : chosen) ids.push_back(records[i].id);
  return ids;
}

ordered_json to_json(const Record &r) {
  warn_dropped(r.extra, r.id);
  ordered_json j;
  j["id"] = r.id;
  j["kind"] = to_string(r.kind);
  j["query"] = r.query;
  if (r.response) j["response"] = *r.response;
  if (r.reference) j["reference"] = *r.reference;
  if (r.label) j["label"] = *r.label;
  return j;
}

Record record_from_json(const json &j) {
  Record r;
  r.id = require_string(j, "id");
  if (r.id.empty()) parse_fail("\"id\" must be non-empty");
  const std::string kind = j.contains("kind") ? require_string(j, "kind") : "query";
  if (kind == "query") r.kind = RecordKind::Query;
  else if (kind == "qa") r.kind = RecordKind::Qa;
  else parse_fail("\"kind\" must be \"query\" or \"qa\"");
  r.query = require_string(j, "query");
  if (j.contains("response") && !j["response"].is_null()) r.response = require_string(j, "response");
  if (j.contains("reference") && !j["reference"].is_null()) r.reference = require_string(j, "reference");
  if (j.contains("label") && !j["label"].is_null()) r.label = require_binary(j["label"], "label");
  if (r.kind == RecordKind::Qa && !r.response) parse_fail("qa records need a \"response\"");
  r.extra = unknown_keys(j, {"id", "kind", "query", "response", "reference", "label"});
  return r;
}

ordered_json to_json(const PerturbationSet &p) {
  warn_dropped(p.extra, p.record_id);
  ordered_json j;
  j["record_id"] = p.record_id;
  j["kind"] = to_string(p.kind);
  j["texts"] = p.texts;
  j["generation"] = {{"model", p.generation.model},
                     {"temperature", p.generation.temperature},
                     {"prompt_template_id", p.generation.prompt_template_id}};
  j["attempts"] = p.attempts;
  if (!p.logprobs.empty()) {
    json all = json::array();
    for (const auto &seq : p.logprobs) {
      json tokens = json::array();
      for (const auto &t : seq) tokens.push_back(logprob_to_json(t));
      all.push_back(std::move(tokens));
    }
    j["logprobs"] = std::move(all);
  }
  return j;
}

PerturbationSet perturbation_from_json(const json &j) {
  PerturbationSet p;
  p.record_id = require_string(j, "record_id");
  const std::string kind = require_string(j, "kind");
  if (kind == "query_augmentation") p.kind = PerturbationKind::QueryAugmentation;
  else if (kind == "response_sample") p.kind = PerturbationKind::ResponseSample;
  else parse_fail("unknown perturbation kind \"" + kind + "\"");
  const json &texts = require(j, "texts");
  if (!texts.is_array() || texts.empty()) parse_fail("\"texts\" must be a non-empty array");
  for (const auto &t : texts) {
    if (!t.is_string() || trim(t.get<std::string>()).empty()) {
      parse_fail("perturbation texts must be non-empty strings");
    }
    p.texts.push_back(t.get<std::string>());
  }
  if (j.contains("generation") && j["generation"].is_object()) {
    const json &g = j["generation"];
    p.generation.model = g.value("model", std::string{});
    p.generation.temperature = g.value("temperature", 1.0);
    p.generation.prompt_template_id = g.value("prompt_template_id", std::string{});
  }
  p.attempts = j.value("attempts", 0);
  if (j.contains("logprobs") && j["logprobs"].is_array()) {
    for (const auto &seq : j["logprobs"]) {
      std::vector<measures::TokenLogprob> tokens;
      for (const auto &t : seq) tokens.push_back(logprob_from_json(t));
      p.logprobs.push_back(std::move(tokens));
    }
  }
  p.extra = unknown_keys(j, {"record_id", "kind", "texts", "generation", "attempts", "logprobs"});
  return p;
}

ordered_json to_json(const EmbeddingsRecord &e) {
  warn_dropped(e.extra, e.id);
  ordered_json j;
  j["id"] = e.id;
  j["dim"] = e.dim;
  j["vectors"] = e.vectors;
  return j;
}

EmbeddingsRecord embeddings_from_json(const json &j) {
  EmbeddingsRecord e;
  e.id = require_string(j, "id");
  const json &dim = require(j, "dim");
  if (!dim.is_number_integer() || dim.get<int>() < 1) parse_fail("\"dim\" must be a positive integer");
  e.dim = dim.get<int>();
  const json &vectors = require(j, "vectors");
  if (!vectors.is_array() || vectors.empty()) parse_fail("\"vectors\" must be a non-empty array");
  for (const auto &v : vectors) {
    if (!v.is_array() || v.size() != static_cast<std::size_t>(e.dim)) {
      parse_fail("every vector must have length dim=" + std::to_string(e.dim));
    }
    std::vector<double> values;
    values.reserve(v.size());
    for (const auto &x : v) {
      if (!x.is_number() || !std::isfinite(x.get<double>())) parse_fail("vector values must be finite numbers");
      values.push_back(x.get<double>());
    }
    e.vectors.push_back(std::move(values));
  }
  e.extra = unknown_keys(j, {"id", "dim", "vectors"});
  return e;
}

ordered_json to_json(const measures::ScoreRow &s) {
  ordered_json j;
  j["id"] = s.record_id;
  j["measure"] = measures::to_string(s.measure);
  j["score"] = s.score;
  return j;
}

measures::ScoreRow score_from_json(const json &j) {
  measures::ScoreRow s;
  s.record_id = require_string(j, "id");
  try {
    s.measure = measures::measure_from_string(require_string(j, "measure"));
  } catch (const Error &e) {
    parse_fail(std::string(e.what()) + ": " + e.context());
  }
  s.score = require_number(j, "score");
  return s;
}

ordered_json to_json(const calibration::CalibrationResult &c) {
  ordered_json j;
  j["tau_star"] = c.tau_star;
  j["metric"] = calibration::to_string(c.metric);
  j["achieved"] = c.achieved;
  j["subset_size"] = c.subset_size;
  j["seed"] = c.seed.value_or(0);
  return j;
}

calibration::CalibrationResult calibration_from_json(const json &j) {
  calibration::CalibrationResult c;
  c.tau_star = require_number(j, "tau_star");
  try {
    c.metric = calibration::metric_from_string(require_string(j, "metric"));
  } catch (const Error &e) {
    parse_fail(std::string(e.what()) + ": " + e.context());
  }
  c.achieved = require_number(j, "achieved");
  c.subset_size = static_cast<std::size_t>(require_number(j, "subset_size"));
  if (j.contains("seed") && j["seed"].is_number_unsigned()) c.seed = j["seed"].get<std::uint64_t>();
  else if (j.contains("seed") && j["seed"].is_number_integer()) c.seed = static_cast<std::uint64_t>(j["seed"].get<std::int64_t>());
  return c;
}

ordered_json to_json(const Prediction &p) {
  ordered_json j;
  j["id"] = p.id;
  j["score"] = p.score;
  j["predicted"] = p.predicted;
  return j;
}

Prediction prediction_from_json(const json &j) {
  return {require_string(j, "id"), require_number(j, "score"), require_binary(require(j, "predicted"), "predicted")};
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path &path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot open for writing", tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCode::IoError, "write failed", tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "rename failed: " + ec.message(), path.string());
}

void for_each_jsonl(const fs::path &path,
                    const std::function<void(const json &, std::size_t line)> &fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open file", path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception &e) {
      fail(ErrorCode::ParseError, std::string("invalid JSON: ") + e.what(), where);
    }
    try {
      fn(j, number);
    } catch (const Error &e) {
      if (e.code() != ErrorCode::ParseError) throw;
      fail(ErrorCode::ParseError, e.what(), where);
    } catch (const json::exception &e) {
      fail(ErrorCode::ParseError, e.what(), where);
    }
  }
}

namespace {

template <typename T, typename Parse>
std::vector<T> load_lines(const fs::path &path, Parse &&parse, std::vector<std::size_t> *lines) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const json &j, std::size_t line) {
    out.push_back(parse(j));
    if (lines) lines->push_back(line);
  });
  return out;
}

std::string record_key(const Record &r) { return r.id; }
std::string perturbation_key(const PerturbationSet &p) { return p.record_id; }
std::string embeddings_key(const EmbeddingsRecord &e) { return e.id; }

} // namespace

std::vector<Record> load_dataset(const fs::path &path) {
  std::vector<std::size_t> lines;
  auto records = load_lines<Record>(path, record_from_json, &lines);
  check_unique(records, lines, &record_key);
  return records;
}

void save_dataset(const fs::path &path, const std::vector<Record> &records) {
  write_atomic(path, to_lines(records, [](const Record &r) { return to_json(r); }));
}

std::vector<PerturbationSet> load_perturbations(const fs::path &path) {
  std::vector<std::size_t> lines;
  auto sets = load_lines<PerturbationSet>(path, perturbation_from_json, &lines);
  check_unique(sets, lines, &perturbation_key);
  return sets;
}

void save_perturbations(const fs::path &path, const std::vector<PerturbationSet> &sets) {
  write_atomic(path, to_lines(sets, [](const PerturbationSet &p) { return to_json(p); }));
}

void append_perturbation(const fs::path &path, const PerturbationSet &set) {
  append_line(path, to_json(set).dump());
}

std::vector<EmbeddingsRecord> load_embeddings(const fs::path &path) {
  std::vector<std::size_t> lines;
  auto records = load_lines<EmbeddingsRecord>(path, embeddings_from_json, &lines);
  check_unique(records, lines, &embeddings_key);
  return records;
}

void save_embeddings(const fs::path &path, const std::vector<EmbeddingsRecord> &records) {
  write_atomic(path, to_lines(records, [](const EmbeddingsRecord &e) { return to_json(e); }));
}

void append_embeddings(const fs::path &path, const EmbeddingsRecord &record) {
  append_line(path, to_json(record).dump());
}

std::vector<measures::ScoreRow> load_scores(const fs::path &path) {
  return load_lines<measures::ScoreRow>(path, score_from_json, nullptr);
}

void save_scores(const fs::path &path, const std::vector<measures::ScoreRow> &rows) {
  write_atomic(path, to_lines(rows, [](const measures::ScoreRow &s) { return to_json(s); }));
}

calibration::CalibrationResult load_calibration(const fs::path &path) {
  try {
    return calibration_from_json(json::parse(read_file(path)));
  } catch (const json::exception &e) {
    fail(ErrorCode::ParseError, e.what(), path.string());
  } catch (const Error &e) {
    if (e.code() != ErrorCode::ParseError) throw;
    fail(ErrorCode::ParseError, e.what(), path.string());
  }
}

void save_calibration(const fs::path &path, const calibration::CalibrationResult &c) {
  write_atomic(path, to_json(c).dump(2) + "\n");
}

std::vector<Prediction> load_predictions(const fs::path &path) {
  return load_lines<Prediction>(path, prediction_from_json, nullptr);
}

void save_predictions(const fs::path &path, const std::vector<Prediction> &rows) {
  write_atomic(path, to_lines(rows, [](const Prediction &p) { return to_json(p); }));
}

evaluation::EvalReport load_report(const fs::path &path) {
  try {
    return evaluation::report_from_json(json::parse(read_file(path)));
  } catch (const json::exception &e) {
    fail(ErrorCode::ParseError, e.what(), path.string());
  }
}

void save_report(const fs::path &path, const evaluation::EvalReport &report) {
  write_atomic(path, evaluation::to_json(report).dump(2) + "\n");
}

} // namespace semvol::dataio
