#pragma once

#include "semvol/calibration.hpp"
#include "semvol/diagnostics.hpp"
#include "semvol/llm_client.hpp"
#include "semvol/measures.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace semvol::pipeline {

namespace fs = std::filesystem;

enum class Task { External, Internal };
enum class PcaScope { PerRecord, Global };

struct Paths {
  fs::path dataset;
  fs::path perturbations;
  fs::path embeddings;
  fs::path scores;
  fs::path calibration;
  fs::path predictions;
  fs::path report;
  fs::path out_dir;
};

struct RunConfig {
  Task task = Task::External;
  int n = 20;
  std::optional<int> d; // 10 for external, 20 for internal when unset
  double epsilon = linalg::kDefaultEpsilon;
  measures::Measure measure = measures::Measure::SemanticVolume;
  std::uint64_t seed = 0;
  PcaScope pca_scope = PcaScope::PerRecord;
  double cluster_threshold = measures::kDefaultClusterThreshold;
  measures::Aggregation logprob_aggregation = measures::Aggregation::Sum;
  double temperature = 1.0;

  std::size_t subset_size = 100;
  bool stratified = false;
  calibration::Metric metric = calibration::Metric::F1;
  bool include_labeled = false;
  double rouge_threshold = 0.3;

  int gauss_d = 10;
  double gauss_threshold = diagnostics::kGaussPassThreshold;
  diagnostics::R2Mode r2_mode = diagnostics::R2Mode::Identity;
  bool write_qq = true;

  int theory_d_orig = 50;
  int theory_d = 10;
  int theory_n = 20;
  int theory_scales = 12;
  double theory_scale_min = 0.01;
  double theory_scale_max = 1.0;
  double affine_alpha = 3.7;
  double affine_beta = -12.0;

  llm::ClientConfig client;
  Paths paths;

  int resolved_d() const { return d.value_or(task == Task::External ? 10 : 20); }
  void validate() const;
};

// String-keyed access used by the C API and config files. Keys are the long
// CLI flag names with '_' separators (e.g. "cluster_threshold").
void set_option(RunConfig &cfg, std::string_view key, std::string_view value);
std::string get_option(const RunConfig &cfg, std::string_view key);
const std::vector<std::string> &option_keys();

// Config file: one JSON object whose keys are option keys.
void load_config_file(RunConfig &cfg, const fs::path &path);
void apply_env(RunConfig &cfg);

void cmd_perturb(const RunConfig &cfg);
void cmd_embed(const RunConfig &cfg);
void cmd_score(const RunConfig &cfg);
void cmd_calibrate(const RunConfig &cfg);
void cmd_classify(const RunConfig &cfg);
void cmd_evaluate(const RunConfig &cfg);
void cmd_diagnose(const RunConfig &cfg);
void cmd_verify_theory(const RunConfig &cfg);

// Scores for a single record under the configured measure. `projection` is
// used for the semantic volume when PCA is fitted dataset-wide.
measures::ScoreRow score_record(const RunConfig &cfg, const std::string &id,
                                const linalg::EmbeddingMatrix *v,
                                const linalg::PcaProjection *projection);

} // namespace semvol::pipeline
