#include "semvol/measures.hpp"

#include "semvol/error.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace semvol::measures {

std::string_view to_string(Measure m) noexcept {
  switch (m) {
  case Measure::SemanticVolume: return "semantic_volume";
  case Measure::LexicalSimilarity: return "lexical_similarity";
  case Measure::SemanticEntropy: return "semantic_entropy";
  case Measure::LogProbSum: return "log_prob_sum";
  case Measure::LastTokenEntropy: return "last_token_entropy";
  case Measure::PTrue: return "p_true";
  }
  return "unknown";
}

Measure measure_from_string(std::string_view name) {
  for (const Measure m : {Measure::SemanticVolume, Measure::LexicalSimilarity,
                          Measure::SemanticEntropy, Measure::LogProbSum,
                          Measure::LastTokenEntropy, Measure::PTrue}) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorCode::ConfigError, "unknown measure", std::string(name));
}

bool is_binary(Measure m) noexcept { return m == Measure::PTrue; }

std::vector<int> ClusterAssignment::sizes() const {
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

double semantic_volume(const linalg::EmbeddingMatrix &v, Eigen::Index d, double epsilon) {
  return semantic_volume(v, linalg::fit_pca(v, d), epsilon);
}

double semantic_volume(const linalg::EmbeddingMatrix &v, const linalg::PcaProjection &p,
                       double epsilon) {
  if (v.count() < 2) {
    fail(ErrorCode::InvalidArgument, "semantic volume needs at least two perturbations",
         "n=" + std::to_string(v.count()));
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "epsilon must be positive");
  return linalg::log_det_gram(linalg::project(p, v), epsilon);
}

MeasureValue lexical_similarity(const linalg::EmbeddingMatrix &v) {
  const Eigen::Index n = v.count();
  if (n < 2) fail(ErrorCode::InvalidArgument, "lexical similarity needs at least two perturbations");
  const linalg::Matrix g = linalg::gram(v.data());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) sum += g(i, j);
  }
  const double mean = sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
  return {-mean, mean};
}

ClusterAssignment cluster_semantic(const linalg::EmbeddingMatrix &v, double sim_threshold) {
  if (!(sim_threshold > 0.0 && sim_threshold <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "cluster threshold must lie in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(v.count());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const linalg::Matrix g = linalg::gram(v.data());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= sim_threshold) {
        parent[find(i)] = find(j);
      }
    }
  }

  ClusterAssignment out;
  out.labels.assign(n, -1);
  std::vector<int> root_label(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (root_label[r] < 0) root_label[r] = out.k++;
    out.labels[i] = root_label[r];
  }
  return out;
}

double semantic_entropy(const ClusterAssignment &assignment) {
  const double n = static_cast<double>(assignment.labels.size());
  if (n < 1) fail(ErrorCode::EmptySequence, "no cluster members");
  double h = 0.0;
  for (const int c : assignment.sizes()) {
    if (c == 0) continue;
    const double p = c / n;
    h -= p * std::log(p);
  }
  return h;
}

MeasureValue log_prob_sum(const std::vector<TokenLogprob> &tokens, Aggregation aggregation) {
  if (tokens.empty()) fail(ErrorCode::EmptySequence, "no tokens");
  double total = 0.0;
  for (const auto &t : tokens) total += t.logprob;
  if (aggregation == Aggregation::Mean) total /= static_cast<double>(tokens.size());
  return {-total, total};
}

double last_token_entropy(const std::vector<TokenAlternative> &alternatives) {
  if (alternatives.empty()) fail(ErrorCode::EmptySequence, "no alternatives for the last token");
  double max_lp = -std::numeric_limits<double>::infinity();
  for (const auto &a : alternatives) {
    if (std::isfinite(a.logprob)) max_lp = std::max(max_lp, a.logprob);
  }
  if (!std::isfinite(max_lp)) fail(ErrorCode::EmptySequence, "no finite alternative logprob");
  double z = 0.0;
  for (const auto &a : alternatives) {
    if (std::isfinite(a.logprob)) z += std::exp(a.logprob - max_lp);
  }
  double h = 0.0;
  for (const auto &a : alternatives) {
    if (!std::isfinite(a.logprob)) continue;
    const double p = std::exp(a.logprob - max_lp) / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

double gaussian_entropy(const linalg::Matrix &sigma) {
  const double d = static_cast<double>(sigma.rows());
  return 0.5 * (linalg::log_det_spd(sigma) + d * std::log(2.0 * std::numbers::pi) + d);
}

double mc_entropy_estimate(const linalg::Matrix &samples, const linalg::Vector &mu,
                           const linalg::Matrix &sigma) {
  if (samples.cols() < 100) {
    fail(ErrorCode::InvalidArgument, "Monte-Carlo entropy needs at least 100 samples");
  }
  if (samples.rows() != sigma.rows() || mu.size() != sigma.rows()) {
    fail(ErrorCode::DimensionMismatch, "samples, mean and covariance disagree in dimension");
  }
  const double log_det = linalg::log_det_spd(sigma);
  Eigen::LLT<linalg::Matrix> llt(0.5 * (sigma + sigma.transpose()));
  if (llt.info() != Eigen::Success) fail(ErrorCode::Singular, "covariance is not positive definite");
  const linalg::Matrix y = llt.matrixL().solve(samples.colwise() - mu);
  const double d = static_cast<double>(sigma.rows());
  const double mean_sq = y.colwise().squaredNorm().mean();
  return 0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + mean_sq);
}

} // namespace semvol::measures
