#pragma once

#include "semvol/linalg.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace semvol::measures {

enum class Measure {
  SemanticVolume,
  LexicalSimilarity,
  SemanticEntropy,
  LogProbSum,
  LastTokenEntropy,
  PTrue,
};

std::string_view to_string(Measure m) noexcept;
Measure measure_from_string(std::string_view name);
// Measures that only produce binary verdicts (no meaningful ranking).
bool is_binary(Measure m) noexcept;

// Every score follows "higher = more uncertain". `raw` keeps the value before
// any polarity flip.
struct ScoreRow {
  std::string record_id;
  Measure measure = Measure::SemanticVolume;
  double score = 0.0;
  std::optional<double> raw;
};

struct ClusterAssignment {
  std::vector<int> labels;
  int k = 0;

  std::vector<int> sizes() const;
};

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  std::vector<TokenAlternative> top_alternatives; // descending by logprob
};

struct MeasureValue {
  double score = 0.0;
  double raw = 0.0;
};

inline constexpr int kDefaultQueryDim = 10;
inline constexpr int kDefaultResponseDim = 20;
inline constexpr double kDefaultClusterThreshold = 0.9;

double semantic_volume(const linalg::EmbeddingMatrix &v, Eigen::Index d,
                       double epsilon = linalg::kDefaultEpsilon);
// Same, with a projection fitted elsewhere (dataset-level PCA).
double semantic_volume(const linalg::EmbeddingMatrix &v, const linalg::PcaProjection &p,
                       double epsilon = linalg::kDefaultEpsilon);

// score = -mean pairwise cosine, raw = mean pairwise cosine.
MeasureValue lexical_similarity(const linalg::EmbeddingMatrix &v);

// Connected components of the graph linking columns with cosine >= threshold.
ClusterAssignment cluster_semantic(const linalg::EmbeddingMatrix &v,
                                   double sim_threshold = kDefaultClusterThreshold);

double semantic_entropy(const ClusterAssignment &assignment);

enum class Aggregation { Sum, Mean };

// score = -aggregate, raw = aggregate of the chosen-token logprobs.
MeasureValue log_prob_sum(const std::vector<TokenLogprob> &tokens,
                          Aggregation aggregation = Aggregation::Sum);

// Entropy of the top-k alternatives renormalized to sum to one.
double last_token_entropy(const std::vector<TokenAlternative> &alternatives);

// 0.5 * (log det(sigma) + d log(2 pi) + d)
double gaussian_entropy(const linalg::Matrix &sigma);

// -(1/m) sum log N(x_i; mu, sigma)
double mc_entropy_estimate(const linalg::Matrix &samples, const linalg::Vector &mu,
                           const linalg::Matrix &sigma);

} // namespace semvol::measures
