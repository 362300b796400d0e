#include "semvol/pipeline.hpp"

#include "semvol/dataio.hpp"
#include "semvol/error.hpp"
#include "semvol/evaluation.hpp"
#include "semvol/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace semvol::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void config_fail(std::string_view key, std::string_view value, const char *what) {
  fail(ErrorCode::ConfigError, std::string("invalid value for ") + std::string(key) + ": " + what,
       std::string(value));
}

long long parse_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) config_fail(key, v, "expected an integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(std::string(v), &used);
    if (used != v.size() || !std::isfinite(out)) config_fail(key, v, "expected a finite number");
    return out;
  } catch (const std::logic_error &) {
    config_fail(key, v, "expected a number");
  }
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  config_fail(key, v, "expected true or false");
}

std::string fmt(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

struct Option {
  std::function<void(RunConfig &, std::string_view)> set;
  std::function<std::string(const RunConfig &)> get;
};

template <typename T>
Option int_option(T RunConfig::*field, long long lo) {
  return {[field, lo](RunConfig &c, std::string_view v) {
            const long long x = parse_int("value", v);
            if (x < lo) config_fail("value", v, "out of range");
            c.*field = static_cast<T>(x);
          },
          [field](const RunConfig &c) { return std::to_string(c.*field); }};
}

Option double_option(double RunConfig::*field) {
  return {[field](RunConfig &c, std::string_view v) { c.*field = parse_double("value", v); },
          [field](const RunConfig &c) { return fmt(c.*field); }};
}

Option bool_option(bool RunConfig::*field) {
  return {[field](RunConfig &c, std::string_view v) { c.*field = parse_bool("value", v); },
          [field](const RunConfig &c) { return fmt(c.*field); }};
}

Option path_option(fs::path Paths::*field) {
  return {[field](RunConfig &c, std::string_view v) { c.paths.*field = fs::path(v); },
          [field](const RunConfig &c) { return (c.paths.*field).string(); }};
}

Option string_option(std::string llm::ClientConfig::*field) {
  return {[field](RunConfig &c, std::string_view v) { c.client.*field = std::string(v); },
          [field](const RunConfig &c) { return c.client.*field; }};
}

const std::map<std::string, Option, std::less<>> &option_table() {
  static const std::map<std::string, Option, std::less<>> table = [] {
    std::map<std::string, Option, std::less<>> t;
    t["task"] = {[](RunConfig &c, std::string_view v) {
                   if (v == "external") c.task = Task::External;
                   else if (v == "internal") c.task = Task::Internal;
                   else config_fail("task", v, "expected external or internal");
                 },
                 [](const RunConfig &c) {
                   return std::string(c.task == Task::External ? "external" : "internal");
                 }};
    t["n"] = int_option(&RunConfig::n, 1);
    t["d"] = {[](RunConfig &c, std::string_view v) {
                if (v == "auto" || v.empty()) c.d.reset();
                else {
                  const long long x = parse_int("d", v);
                  if (x < 1) config_fail("d", v, "must be positive");
                  c.d = static_cast<int>(x);
                }
              },
              [](const RunConfig &c) { return c.d ? std::to_string(*c.d) : std::string("auto"); }};
    t["epsilon"] = double_option(&RunConfig::epsilon);
    t["measure"] = {[](RunConfig &c, std::string_view v) { c.measure = measures::measure_from_string(v); },
                    [](const RunConfig &c) { return std::string(measures::to_string(c.measure)); }};
    t["seed"] = {[](RunConfig &c, std::string_view v) {
                   const long long x = parse_int("seed", v);
                   if (x < 0) config_fail("seed", v, "must be non-negative");
                   c.seed = static_cast<std::uint64_t>(x);
                 },
                 [](const RunConfig &c) { return std::to_string(c.seed); }};
    t["pca_scope"] = {[](RunConfig &c, std::string_view v) {
                        if (v == "per_record") c.pca_scope = PcaScope::PerRecord;
                        else if (v == "global") c.pca_scope = PcaScope::Global;
                        else config_fail("pca_scope", v, "expected per_record or global");
                      },
                      [](const RunConfig &c) {
                        return std::string(c.pca_scope == PcaScope::PerRecord ? "per_record" : "global");
                      }};
    t["cluster_threshold"] = double_option(&RunConfig::cluster_threshold);
    t["logprob_aggregation"] = {[](RunConfig &c, std::string_view v) {
                                  if (v == "sum") c.logprob_aggregation = measures::Aggregation::Sum;
                                  else if (v == "mean") c.logprob_aggregation = measures::Aggregation::Mean;
                                  else config_fail("logprob_aggregation", v, "expected sum or mean");
                                },
                                [](const RunConfig &c) {
                                  return std::string(c.logprob_aggregation == measures::Aggregation::Sum ? "sum" : "mean");
                                }};
    t["temperature"] = double_option(&RunConfig::temperature);
    t["subset_size"] = int_option(&RunConfig::subset_size, 2);
    t["stratified"] = bool_option(&RunConfig::stratified);
    t["metric"] = {[](RunConfig &c, std::string_view v) { c.metric = calibration::metric_from_string(v); },
                   [](const RunConfig &c) { return std::string(calibration::to_string(c.metric)); }};
    t["include_labeled"] = bool_option(&RunConfig::include_labeled);
    t["rouge_threshold"] = double_option(&RunConfig::rouge_threshold);
    t["gauss_d"] = int_option(&RunConfig::gauss_d, 1);
    t["gauss_threshold"] = double_option(&RunConfig::gauss_threshold);
    t["r2_mode"] = {[](RunConfig &c, std::string_view v) {
                      if (v == "identity") c.r2_mode = diagnostics::R2Mode::Identity;
                      else if (v == "fitted") c.r2_mode = diagnostics::R2Mode::Fitted;
                      else config_fail("r2_mode", v, "expected identity or fitted");
                    },
                    [](const RunConfig &c) {
                      return std::string(c.r2_mode == diagnostics::R2Mode::Identity ? "identity" : "fitted");
                    }};
    t["write_qq"] = bool_option(&RunConfig::write_qq);
    t["theory_d_orig"] = int_option(&RunConfig::theory_d_orig, 1);
    t["theory_d"] = int_option(&RunConfig::theory_d, 1);
    t["theory_n"] = int_option(&RunConfig::theory_n, 2);
    t["theory_scales"] = int_option(&RunConfig::theory_scales, 2);
    t["theory_scale_min"] = double_option(&RunConfig::theory_scale_min);
    t["theory_scale_max"] = double_option(&RunConfig::theory_scale_max);
    t["affine_alpha"] = double_option(&RunConfig::affine_alpha);
    t["affine_beta"] = double_option(&RunConfig::affine_beta);

    t["api_base"] = string_option(&llm::ClientConfig::api_base);
    t["api_key"] = string_option(&llm::ClientConfig::api_key);
    t["embed_model"] = string_option(&llm::ClientConfig::embed_model);
    t["chat_model"] = string_option(&llm::ClientConfig::chat_model);
    auto client_int = [](int llm::ClientConfig::*field, long long lo) {
      return Option{[field, lo](RunConfig &c, std::string_view v) {
                      const long long x = parse_int("value", v);
                      if (x < lo) config_fail("value", v, "out of range");
                      c.client.*field = static_cast<int>(x);
                    },
                    [field](const RunConfig &c) { return std::to_string(c.client.*field); }};
    };
    t["max_in_flight"] = client_int(&llm::ClientConfig::max_in_flight, 1);
    t["timeout_ms"] = client_int(&llm::ClientConfig::timeout_ms, 1);
    t["embed_batch_size"] = client_int(&llm::ClientConfig::embed_batch_size, 1);
    t["top_logprobs"] = client_int(&llm::ClientConfig::top_logprobs, 0);
    t["max_attempts"] = {[](RunConfig &c, std::string_view v) {
                           const long long x = parse_int("max_attempts", v);
                           if (x < 1) config_fail("max_attempts", v, "must be >= 1");
                           c.client.retry.max_attempts = static_cast<int>(x);
                         },
                         [](const RunConfig &c) { return std::to_string(c.client.retry.max_attempts); }};
    t["base_backoff_ms"] = {[](RunConfig &c, std::string_view v) {
                              const long long x = parse_int("base_backoff_ms", v);
                              if (x < 0) config_fail("base_backoff_ms", v, "must be >= 0");
                              c.client.retry.base_backoff_ms = static_cast<int>(x);
                            },
                            [](const RunConfig &c) { return std::to_string(c.client.retry.base_backoff_ms); }};
    t["n_choices"] = {[](RunConfig &c, std::string_view v) { c.client.use_n_choices = parse_bool("n_choices", v); },
                      [](const RunConfig &c) { return fmt(c.client.use_n_choices); }};
    t["logprobs"] = {[](RunConfig &c, std::string_view v) { c.client.request_logprobs = parse_bool("logprobs", v); },
                     [](const RunConfig &c) { return fmt(c.client.request_logprobs); }};
    t["cache_dir"] = {[](RunConfig &c, std::string_view v) {
                        if (v.empty()) c.client.cache_dir.reset();
                        else c.client.cache_dir = fs::path(v);
                      },
                      [](const RunConfig &c) { return c.client.cache_dir ? c.client.cache_dir->string() : std::string(); }};
    t["fixtures"] = {[](RunConfig &c, std::string_view v) {
                       if (v.empty()) c.client.fixture_dir.reset();
                       else c.client.fixture_dir = fs::path(v);
                     },
                     [](const RunConfig &c) { return c.client.fixture_dir ? c.client.fixture_dir->string() : std::string(); }};

    t["dataset"] = path_option(&Paths::dataset);
    t["perturbations"] = path_option(&Paths::perturbations);
    t["embeddings"] = path_option(&Paths::embeddings);
    t["scores"] = path_option(&Paths::scores);
    t["calibration"] = path_option(&Paths::calibration);
    t["predictions"] = path_option(&Paths::predictions);
    t["report"] = path_option(&Paths::report);
    t["out_dir"] = path_option(&Paths::out_dir);
    return t;
  }();
  return table;
}

void require_path(const fs::path &p, const char *name) {
  if (p.empty()) fail(ErrorCode::ConfigError, std::string("missing path: --") + name);
}

std::set<std::string> existing_ids(const fs::path &path, const char *key) {
  std::set<std::string> ids;
  if (!fs::exists(path)) return ids;
  dataio::for_each_jsonl(path, [&](const json &j, std::size_t) {
    if (j.contains(key) && j[key].is_string()) ids.insert(j[key].get<std::string>());
  });
  return ids;
}

linalg::Matrix to_matrix(const dataio::EmbeddingsRecord &e) {
  linalg::Matrix m(e.dim, static_cast<Eigen::Index>(e.vectors.size()));
  for (std::size_t j = 0; j < e.vectors.size(); ++j) {
    for (int i = 0; i < e.dim; ++i) m(i, static_cast<Eigen::Index>(j)) = e.vectors[j][static_cast<std::size_t>(i)];
  }
  return m;
}

bool uses_embeddings(measures::Measure m) {
  return m == measures::Measure::SemanticVolume || m == measures::Measure::LexicalSimilarity ||
         m == measures::Measure::SemanticEntropy;
}

std::vector<measures::ScoreRow> scores_for_measure(const RunConfig &cfg) {
  require_path(cfg.paths.scores, "scores");
  std::vector<measures::ScoreRow> rows;
  for (auto &r : dataio::load_scores(cfg.paths.scores)) {
    if (r.measure == cfg.measure) rows.push_back(std::move(r));
  }
  if (rows.empty()) {
    fail(ErrorCode::EmptyInput, "no scores for the configured measure",
         std::string(measures::to_string(cfg.measure)) + " in " + cfg.paths.scores.string());
  }
  return rows;
}

// Dataset records with their effective labels (gold or ROUGE-derived).
std::vector<dataio::Record> labeled_dataset(const RunConfig &cfg, std::size_t *derived = nullptr) {
  require_path(cfg.paths.dataset, "dataset");
  auto records = dataio::load_dataset(cfg.paths.dataset);
  const std::optional<double> rouge =
      cfg.task == Task::Internal ? std::optional<double>(cfg.rouge_threshold) : std::nullopt;
  std::size_t count = 0;
  for (auto &r : records) {
    if (!r.label && (r.label = dataio::effective_label(r, rouge))) ++count;
  }
  if (derived) *derived = count;
  return records;
}

// Sidecar describing how ROUGE-derived labels were produced.
void write_label_meta(const fs::path &output, const RunConfig &cfg, std::size_t derived) {
  if (derived == 0) return;
  nlohmann::ordered_json j;
  j["label_source"] = "rouge_l";
  j["rouge_threshold"] = cfg.rouge_threshold;
  j["tokenizer"] = dataio::kTokenizerVersion;
  j["derived_labels"] = derived;
  fs::path meta = output;
  meta += ".labels.json";
  dataio::write_atomic(meta, j.dump(2) + "\n");
}

void run_records(const std::vector<std::string> &ids, const std::function<void(const std::string &)> &fn) {
  std::optional<Error> first;
  std::size_t failed = 0;
  for (const auto &id : ids) {
    try {
      fn(id);
    } catch (const Error &e) {
      ++failed;
      dataio::warn("record " + id + ": " + std::string(to_string(e.code())) + ": " + e.what() +
                   (e.context().empty() ? "" : " (" + e.context() + ")"));
      if (!first) first = e;
    }
  }
  if (first) {
    fail(first->code(), std::to_string(failed) + " record(s) failed; first: " + first->what(),
         first->context());
  }
}

void write_text(const fs::path &path, const std::string &content) { dataio::write_atomic(path, content); }

std::string sanitize(std::string_view id) {
  std::string out;
  for (const char c : id) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
  }
  return out.empty() ? "_" : out;
}

} // namespace

void RunConfig::validate() const {
  if (n < 1) fail(ErrorCode::ConfigError, "n must be >= 1");
  if (resolved_d() > n) {
    fail(ErrorCode::ConfigError, "PCA dimension d must not exceed n",
         "d=" + std::to_string(resolved_d()) + " n=" + std::to_string(n));
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::ConfigError, "epsilon must be positive");
  if (!(cluster_threshold > 0.0 && cluster_threshold <= 1.0)) {
    fail(ErrorCode::ConfigError, "cluster_threshold must lie in (0, 1]");
  }
  if (subset_size < 2) fail(ErrorCode::ConfigError, "subset_size must be >= 2");
  if (!(temperature >= 0.0)) fail(ErrorCode::ConfigError, "temperature must be >= 0");
  client.validate();
}

void set_option(RunConfig &cfg, std::string_view key, std::string_view value) {
  const auto &table = option_table();
  const auto it = table.find(key);
  if (it == table.end()) fail(ErrorCode::ConfigError, "unknown option", std::string(key));
  try {
    it->second.set(cfg, value);
  } catch (const Error &e) {
    if (e.code() != ErrorCode::ConfigError) throw;
    fail(ErrorCode::ConfigError, std::string("invalid value for ") + std::string(key), std::string(value));
  }
}

std::string get_option(const RunConfig &cfg, std::string_view key) {
  const auto &table = option_table();
  const auto it = table.find(key);
  if (it == table.end()) fail(ErrorCode::ConfigError, "unknown option", std::string(key));
  return it->second.get(cfg);
}

const std::vector<std::string> &option_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto &[name, _] : option_table()) k.push_back(name);
    return k;
  }();
  return keys;
}

void load_config_file(RunConfig &cfg, const fs::path &path) {
  json j;
  try {
    j = json::parse(dataio::read_file(path));
  } catch (const json::exception &e) {
    fail(ErrorCode::ConfigError, std::string("config file is not valid JSON: ") + e.what(), path.string());
  }
  if (!j.is_object()) fail(ErrorCode::ConfigError, "config file must hold a JSON object", path.string());
  for (auto it = j.begin(); it != j.end(); ++it) {
    set_option(cfg, it.key(), it->is_string() ? it->get<std::string>() : it->dump());
  }
}

void apply_env(RunConfig &cfg) { llm::apply_env(cfg.client); }

void cmd_perturb(const RunConfig &cfg) {
  cfg.validate();
  require_path(cfg.paths.dataset, "dataset");
  require_path(cfg.paths.perturbations, "perturbations");
  const auto records = dataio::load_dataset(cfg.paths.dataset);
  if (cfg.task == Task::External) {
    for (const auto &r : records) {
      if (r.kind == dataio::RecordKind::Qa) {
        fail(ErrorCode::ConfigError, "query augmentation applies to query records; use --task internal", r.id);
      }
    }
  }
  const auto done = existing_ids(cfg.paths.perturbations, "record_id");
  std::vector<std::string> todo;
  std::unordered_map<std::string, const dataio::Record *> by_id;
  for (const auto &r : records) {
    by_id[r.id] = &r;
    if (!done.count(r.id)) todo.push_back(r.id);
  }
  if (todo.empty()) return;

  llm::Client client(cfg.client);
  run_records(todo, [&](const std::string &id) {
    const auto &r = *by_id.at(id);
    const auto set = cfg.task == Task::External
                         ? client.augment_query(r.id, r.query, cfg.n, cfg.temperature)
                         : client.sample_responses(r.id, r.query, cfg.n, cfg.temperature);
    dataio::append_perturbation(cfg.paths.perturbations, set);
  });
}

void cmd_embed(const RunConfig &cfg) {
  cfg.validate();
  require_path(cfg.paths.perturbations, "perturbations");
  require_path(cfg.paths.embeddings, "embeddings");
  const auto sets = dataio::load_perturbations(cfg.paths.perturbations);
  const auto done = existing_ids(cfg.paths.embeddings, "id");
  std::vector<std::string> todo;
  std::unordered_map<std::string, const dataio::PerturbationSet *> by_id;
  for (const auto &s : sets) {
    by_id[s.record_id] = &s;
    if (!done.count(s.record_id)) todo.push_back(s.record_id);
  }
  if (todo.empty()) return;

  llm::Client client(cfg.client);
  run_records(todo, [&](const std::string &id) {
    const auto vectors = client.embed_texts(by_id.at(id)->texts);
    dataio::EmbeddingsRecord e;
    e.id = id;
    e.dim = static_cast<int>(vectors.front().size());
    for (const auto &v : vectors) e.vectors.emplace_back(v.begin(), v.end());
    dataio::append_embeddings(cfg.paths.embeddings, e);
  });
}

measures::ScoreRow score_record(const RunConfig &cfg, const std::string &id,
                                const linalg::EmbeddingMatrix *v,
                                const linalg::PcaProjection *projection) {
  measures::ScoreRow row;
  row.record_id = id;
  row.measure = cfg.measure;
  if (!v) fail(ErrorCode::MissingEmbeddings, "no embeddings for record", id);
  switch (cfg.measure) {
  case measures::Measure::SemanticVolume:
    row.score = projection ? measures::semantic_volume(*v, *projection, cfg.epsilon)
                           : measures::semantic_volume(*v, cfg.resolved_d(), cfg.epsilon);
    break;
  case measures::Measure::LexicalSimilarity: {
    const auto value = measures::lexical_similarity(*v);
    row.score = value.score;
    row.raw = value.raw;
    break;
  }
  case measures::Measure::SemanticEntropy:
    row.score = measures::semantic_entropy(measures::cluster_semantic(*v, cfg.cluster_threshold));
    break;
  default:
    fail(ErrorCode::InvalidArgument, "measure does not use embeddings", std::string(measures::to_string(cfg.measure)));
  }
  return row;
}

void cmd_score(const RunConfig &cfg) {
  cfg.validate();
  require_path(cfg.paths.scores, "scores");

  std::vector<dataio::PerturbationSet> sets;
  if (!cfg.paths.perturbations.empty()) sets = dataio::load_perturbations(cfg.paths.perturbations);
  std::vector<dataio::Record> records;
  if (!cfg.paths.dataset.empty()) records = dataio::load_dataset(cfg.paths.dataset);

  std::unordered_map<std::string, const dataio::PerturbationSet *> set_by_id;
  for (const auto &s : sets) set_by_id[s.record_id] = &s;

  std::vector<std::string> order;
  if (!records.empty()) {
    for (const auto &r : records) order.push_back(r.id);
  } else if (!sets.empty()) {
    for (const auto &s : sets) order.push_back(s.record_id);
  }

  std::vector<measures::ScoreRow> rows;
  if (uses_embeddings(cfg.measure)) {
    require_path(cfg.paths.embeddings, "embeddings");
    const auto embeddings = dataio::load_embeddings(cfg.paths.embeddings);
    if (order.empty()) {
      for (const auto &e : embeddings) order.push_back(e.id);
    }
    std::unordered_map<std::string, linalg::EmbeddingMatrix> matrices;
    for (const auto &e : embeddings) {
      try {
        matrices.emplace(e.id, linalg::EmbeddingMatrix::normalize(to_matrix(e)));
      } catch (const Error &err) {
        fail(err.code(), err.what(), e.id + ": " + err.context());
      }
    }
    for (const auto &id : order) {
      const auto it = matrices.find(id);
      if (it == matrices.end()) fail(ErrorCode::MissingEmbeddings, "no embeddings for record", id);
      if (const auto s = set_by_id.find(id);
          s != set_by_id.end() && static_cast<Eigen::Index>(s->second->texts.size()) != it->second.count()) {
        fail(ErrorCode::MissingEmbeddings, "embedding count differs from perturbation count", id);
      }
    }

    std::optional<linalg::PcaProjection> global;
    if (cfg.measure == measures::Measure::SemanticVolume && cfg.pca_scope == PcaScope::Global) {
      Eigen::Index total = 0, dim = 0;
      for (const auto &id : order) {
        total += matrices.at(id).count();
        dim = matrices.at(id).dim();
      }
      linalg::Matrix all(dim, total);
      Eigen::Index col = 0;
      for (const auto &id : order) {
        const auto &m = matrices.at(id).data();
        if (m.rows() != dim) fail(ErrorCode::DimensionMismatch, "records disagree in embedding dimension", id);
        all.middleCols(col, m.cols()) = m;
        col += m.cols();
      }
      global = linalg::fit_pca(all, cfg.resolved_d());
    }
    for (const auto &id : order) {
      try {
        rows.push_back(score_record(cfg, id, &matrices.at(id), global ? &*global : nullptr));
      } catch (const Error &err) {
        fail(err.code(), err.what(), id + (err.context().empty() ? "" : ": " + err.context()));
      }
    }
  } else if (cfg.measure == measures::Measure::LogProbSum ||
             cfg.measure == measures::Measure::LastTokenEntropy) {
    if (sets.empty()) fail(ErrorCode::ConfigError, "logprob measures need --perturbations with logprobs");
    for (const auto &id : order) {
      const auto it = set_by_id.find(id);
      if (it == set_by_id.end()) fail(ErrorCode::MissingField, "no perturbations for record", id);
      const auto &lp = it->second->logprobs;
      const auto seq = std::find_if(lp.begin(), lp.end(), [](const auto &s) { return !s.empty(); });
      if (seq == lp.end()) fail(ErrorCode::MissingField, "record has no token logprobs", id);
      measures::ScoreRow row;
      row.record_id = id;
      row.measure = cfg.measure;
      if (cfg.measure == measures::Measure::LogProbSum) {
        const auto v = measures::log_prob_sum(*seq, cfg.logprob_aggregation);
        row.score = v.score;
        row.raw = v.raw;
      } else {
        row.score = measures::last_token_entropy(seq->back().top_alternatives);
      }
      rows.push_back(std::move(row));
    }
  } else {
    // pTrue: one judging call per record.
    if (records.empty() || sets.empty()) {
      fail(ErrorCode::ConfigError, "p_true needs --dataset and --perturbations");
    }
    llm::Client client(cfg.client);
    for (const auto &r : records) {
      const auto it = set_by_id.find(r.id);
      if (it == set_by_id.end()) fail(ErrorCode::MissingField, "no perturbations for record", r.id);
      const auto task = cfg.task == Task::External ? llm::JudgeTask::Query : llm::JudgeTask::Response;
      try {
        const int verdict = client.ptrue_judge(task, r.query, it->second->texts, r.response.value_or(""));
        rows.push_back({r.id, cfg.measure, static_cast<double>(verdict), std::nullopt});
      } catch (const Error &e) {
        if (e.code() != ErrorCode::UnparseableVerdict) throw;
        dataio::warn("excluding " + r.id + ": unparseable verdict (" + e.context() + ")");
      }
    }
  }
  dataio::save_scores(cfg.paths.scores, rows);
}

namespace {

struct LabeledScores {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
};

LabeledScores join_labels(const std::vector<measures::ScoreRow> &rows,
                          const std::vector<dataio::Record> &records,
                          const std::unordered_set<std::string> *only,
                          const std::unordered_set<std::string> *exclude) {
  std::unordered_map<std::string, double> score_by_id;
  for (const auto &r : rows) score_by_id[r.record_id] = r.score;
  LabeledScores out;
  for (const auto &r : records) {
    if (!r.label) continue;
    if (only && !only->count(r.id)) continue;
    if (exclude && exclude->count(r.id)) continue;
    const auto it = score_by_id.find(r.id);
    if (it == score_by_id.end()) {
      if (only) fail(ErrorCode::MissingField, "labeled record has no score", r.id);
      continue;
    }
    out.ids.push_back(r.id);
    out.scores.push_back(it->second);
    out.labels.push_back(*r.label);
  }
  return out;
}

} // namespace

void cmd_calibrate(const RunConfig &cfg) {
  cfg.validate();
  require_path(cfg.paths.calibration, "calibration");
  const auto rows = scores_for_measure(cfg);
  std::size_t derived = 0;
  const auto records = labeled_dataset(cfg, &derived);
  const auto subset = dataio::sample_labeled_subset(records, cfg.subset_size, cfg.seed, cfg.stratified);
  const std::unordered_set<std::string> only(subset.begin(), subset.end());
  const auto joined = join_labels(rows, records, &only, nullptr);
  if (joined.scores.size() < 2) {
    fail(ErrorCode::InsufficientLabels, "calibration needs at least two labeled records");
  }
  auto result = calibration::optimal_threshold(joined.scores, joined.labels, cfg.metric);
  result.seed = cfg.seed;
  if (result.degenerate) dataio::warn("labeled subset has no positive labels; F1 is zero everywhere");
  dataio::save_calibration(cfg.paths.calibration, result);
  write_label_meta(cfg.paths.calibration, cfg, derived);
}

void cmd_classify(const RunConfig &cfg) {
  require_path(cfg.paths.calibration, "calibration");
  require_path(cfg.paths.predictions, "predictions");
  const auto rows = scores_for_measure(cfg);
  const auto cal = dataio::load_calibration(cfg.paths.calibration);
  std::vector<dataio::Prediction> out;
  out.reserve(rows.size());
  for (const auto &r : rows) out.push_back({r.record_id, r.score, r.score > cal.tau_star ? 1 : 0});
  dataio::save_predictions(cfg.paths.predictions, out);
}

void cmd_evaluate(const RunConfig &cfg) {
  cfg.validate();
  require_path(cfg.paths.calibration, "calibration");
  require_path(cfg.paths.report, "report");
  const auto rows = scores_for_measure(cfg);
  std::size_t derived = 0;
  const auto records = labeled_dataset(cfg, &derived);
  const auto cal = dataio::load_calibration(cfg.paths.calibration);

  std::unordered_set<std::string> subset;
  if (!cfg.include_labeled) {
    const auto ids = dataio::sample_labeled_subset(records, cal.subset_size, cal.seed.value_or(cfg.seed),
                                                   cfg.stratified);
    subset.insert(ids.begin(), ids.end());
  }
  const auto joined = join_labels(rows, records, nullptr, cfg.include_labeled ? nullptr : &subset);
  if (joined.scores.empty()) fail(ErrorCode::EmptyInput, "no labeled records left to evaluate");
  const auto report = evaluation::evaluate(joined.scores, joined.labels, cal.tau_star,
                                           measures::is_binary(cfg.measure));
  dataio::save_report(cfg.paths.report, report);
  write_label_meta(cfg.paths.report, cfg, derived);
}

void cmd_diagnose(const RunConfig &cfg) {
  require_path(cfg.paths.embeddings, "embeddings");
  require_path(cfg.paths.out_dir, "out-dir");
  const auto embeddings = dataio::load_embeddings(cfg.paths.embeddings);
  if (embeddings.empty()) fail(ErrorCode::EmptyInput, "embeddings file is empty", cfg.paths.embeddings.string());

  std::vector<measures::ScoreRow> scores;
  if (!cfg.paths.scores.empty()) {
    scores = dataio::load_scores(cfg.paths.scores);
    if (scores.empty()) fail(ErrorCode::EmptyInput, "scores file is empty", cfg.paths.scores.string());
  }

  fs::create_directories(cfg.paths.out_dir);
  std::vector<linalg::EmbeddingMatrix> matrices;
  matrices.reserve(embeddings.size());
  for (const auto &e : embeddings) matrices.push_back(linalg::EmbeddingMatrix::normalize(to_matrix(e)));

  std::string gauss_lines;
  std::size_t evaluated = 0, passed = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto &v = matrices[i];
    ordered_json line;
    line["id"] = embeddings[i].id;
    const Eigen::Index d = cfg.gauss_d;
    if (v.count() < d + 2 || d > v.dim()) {
      line["skipped"] = "needs at least d + 2 perturbations and d <= embedding dimension";
    } else {
      try {
        const auto p = linalg::fit_pca(v, d);
        const auto report = diagnostics::gaussianity_r2(linalg::project(p, v), cfg.gauss_threshold, cfg.r2_mode);
        line["r2"] = report.r2;
        line["d"] = report.d;
        line["n"] = report.n;
        line["passed"] = report.passed;
        ++evaluated;
        passed += report.passed ? 1 : 0;
        if (cfg.write_qq) {
          std::string csv = "theoretical,observed\n";
          for (std::size_t k = 0; k < report.observed.size(); ++k) {
            csv += json(report.theoretical[k]).dump() + "," + json(report.observed[k]).dump() + "\n";
          }
          write_text(cfg.paths.out_dir / "qq" / (sanitize(embeddings[i].id) + ".csv"), csv);
        }
      } catch (const Error &e) {
        line["skipped"] = std::string(to_string(e.code())) + ": " + e.what();
      }
    }
    gauss_lines += line.dump() + "\n";
  }
  write_text(cfg.paths.out_dir / "gaussianity.jsonl", gauss_lines);

  const auto eps = diagnostics::epsilon_report(matrices, cfg.epsilon);
  std::string norms_csv = "id,spectral_norm\n";
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    norms_csv += embeddings[i].id + "," + json(eps.norms[i]).dump() + "\n";
  }
  write_text(cfg.paths.out_dir / "spectral_norms.csv", norms_csv);

  ordered_json summary;
  summary["records"] = embeddings.size();
  summary["gaussianity"] = {{"evaluated", evaluated},
                            {"passed", passed},
                            {"pass_fraction", evaluated ? static_cast<double>(passed) / static_cast<double>(evaluated) : 0.0},
                            {"threshold", cfg.gauss_threshold},
                            {"d", cfg.gauss_d},
                            {"plotting_positions", "hazen"},
                            {"r2_mode", cfg.r2_mode == diagnostics::R2Mode::Identity ? "identity" : "fitted"}};
  summary["epsilon"] = {{"epsilon", eps.epsilon},
                        {"min", eps.min},
                        {"median", eps.median},
                        {"max", eps.max},
                        {"min_over_epsilon", eps.min_over_epsilon}};
  if (!scores.empty() && !cfg.paths.dataset.empty()) {
    const auto records = labeled_dataset(cfg);
    std::vector<measures::ScoreRow> selected;
    for (const auto &s : scores) {
      if (s.measure == cfg.measure) selected.push_back(s);
    }
    const auto joined = join_labels(selected, records, nullptr, nullptr);
    std::vector<double> neg, pos;
    std::string csv = "label,score\n";
    for (std::size_t i = 0; i < joined.scores.size(); ++i) {
      (joined.labels[i] ? pos : neg).push_back(joined.scores[i]);
      csv += std::to_string(joined.labels[i]) + "," + json(joined.scores[i]).dump() + "\n";
    }
    write_text(cfg.paths.out_dir / "scores_by_label.csv", csv);
    if (!pos.empty() && !neg.empty()) {
      const auto ks = evaluation::ks_two_sample(neg, pos);
      summary["ks"] = {{"stat", ks.stat}, {"pvalue", ks.pvalue}};
    }
  }
  write_text(cfg.paths.out_dir / "diagnose.json", summary.dump(2) + "\n");
}

void cmd_verify_theory(const RunConfig &cfg) {
  require_path(cfg.paths.out_dir, "out-dir");
  fs::create_directories(cfg.paths.out_dir);

  diagnostics::Theorem1Config tc;
  tc.d_orig = cfg.theory_d_orig;
  tc.d = cfg.theory_d;
  tc.n = cfg.theory_n;
  tc.seed = cfg.seed;
  tc.epsilon = cfg.epsilon;
  tc.scales = diagnostics::log_spaced(cfg.theory_scales, cfg.theory_scale_min, cfg.theory_scale_max);
  const auto t1 = diagnostics::theorem1_experiment(tc);

  std::string csv = "scale,semantic_volume,target_logdet\n";
  for (const auto &r : t1.rows) {
    csv += json(r.scale).dump() + "," + json(r.semantic_volume).dump() + "," + json(r.target_logdet).dump() + "\n";
  }
  write_text(cfg.paths.out_dir / "theorem1.csv", csv);

  // Affine check on real stage files when available, else on seeded
  // synthetic labeled scores.
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> labeled;
  std::string source;
  if (!cfg.paths.scores.empty() && !cfg.paths.dataset.empty()) {
    const auto joined = join_labels(scores_for_measure(cfg), labeled_dataset(cfg), nullptr, nullptr);
    scores = joined.scores;
    labels = joined.labels;
    source = "stage_files";
  } else {
    Rng rng(stream_seed(cfg.seed, 7919));
    for (int i = 0; i < 1000; ++i) {
      const int y = rng.uniform() < 0.5 ? 1 : 0;
      labels.push_back(y);
      scores.push_back(static_cast<double>(y) + rng.normal());
    }
    source = "synthetic";
  }
  {
    std::vector<dataio::Record> pseudo(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      pseudo[i].id = std::to_string(i);
      pseudo[i].label = labels[i];
    }
    const std::size_t size = std::min(cfg.subset_size, scores.size());
    for (const auto &id : dataio::sample_labeled_subset(pseudo, size, cfg.seed, cfg.stratified)) {
      labeled.push_back(static_cast<std::size_t>(std::stoull(id)));
    }
  }
  const auto affine = diagnostics::affine_check(scores, labels, labeled, cfg.affine_alpha, cfg.affine_beta);

  ordered_json out;
  ordered_json theorem1;
  theorem1["d_orig"] = tc.d_orig;
  theorem1["d"] = tc.d;
  theorem1["n"] = tc.n;
  theorem1["seed"] = tc.seed;
  theorem1["scales"] = tc.scales;
  theorem1["spearman"] = t1.spearman ? json(*t1.spearman) : json(nullptr);
  out["theorem1"] = theorem1;
  ordered_json aff;
  aff["source"] = source;
  aff["alpha"] = affine.alpha;
  aff["beta"] = affine.beta;
  aff["tau_original"] = affine.tau_original;
  aff["tau_transformed"] = affine.tau_transformed;
  aff["evaluated"] = affine.evaluated;
  aff["mismatches"] = affine.mismatches;
  aff["labels_identical"] = affine.identical();
  out["affine"] = aff;
  write_text(cfg.paths.out_dir / "theory.json", out.dump(2) + "\n");
}

} // namespace semvol::pipeline
