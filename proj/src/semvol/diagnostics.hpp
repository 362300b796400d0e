#pragma once

#include "semvol/linalg.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace semvol::diagnostics {

// Regularized lower incomplete gamma P(d/2, x/2).
double chi2_cdf(double x, int d);
double chi2_pdf(double x, int d);
// Inverse of chi2_cdf, |P(x) - p| < 1e-10.
double chi2_quantile(double p, int d);

enum class R2Mode {
  Identity, // y_hat = theoretical quantile
  Fitted,   // y_hat from least-squares line through the Q-Q points
};

inline constexpr double kGaussPassThreshold = 0.8;

struct GaussReport {
  double r2 = 0.0;
  int d = 0;
  int n = 0;
  bool passed = false;
  double threshold = kGaussPassThreshold;
  R2Mode mode = R2Mode::Identity;
  std::vector<double> theoretical; // chi2 quantiles at (i - 0.5) / n
  std::vector<double> observed;    // sorted squared Mahalanobis distances
};

// Q-Q regression of already-computed squared distances against chi2_d.
GaussReport qq_report(std::vector<double> squared_distances, int d,
                      double threshold = kGaussPassThreshold, R2Mode mode = R2Mode::Identity);

// Samples are the columns of x (d x m).
GaussReport gaussianity_r2(const linalg::Matrix &x, double threshold = kGaussPassThreshold,
                           R2Mode mode = R2Mode::Identity);

struct EpsilonReport {
  double epsilon = linalg::kDefaultEpsilon;
  std::vector<double> norms;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  double min_over_epsilon = 0.0;
};

// Spectral norm of V^T V for every record.
EpsilonReport epsilon_report(std::span<const linalg::EmbeddingMatrix> records,
                             double epsilon = linalg::kDefaultEpsilon);

// Spearman rank correlation with average ranks for ties; absent when either
// side has zero rank variance.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct Theorem1Config {
  int d_orig = 50;
  int d = 10;
  int n = 20;
  std::vector<double> scales;
  std::uint64_t seed = 0;
  double epsilon = linalg::kDefaultEpsilon;
};

// `count` scales log-spaced over [lo, hi].
std::vector<double> log_spaced(int count, double lo, double hi);
Theorem1Config default_theorem1_config();

struct Theorem1Row {
  double scale = 0.0;
  double semantic_volume = 0.0;
  double target_logdet = 0.0; // log det of scale * Sigma0 on the scored subspace
};

struct Theorem1Result {
  std::vector<Theorem1Row> rows;
  std::optional<double> spearman;
};

// Draws n embeddings around a fixed mean with covariance s * Sigma0 for each
// scale s, normalizes and scores them, and ranks the scores against the
// log-determinant of the covariance restricted to the PCA subspace.
Theorem1Result theorem1_experiment(const Theorem1Config &config);

struct AffineCheck {
  double alpha = 1.0;
  double beta = 0.0;
  double tau_original = 0.0;
  double tau_transformed = 0.0;
  std::size_t evaluated = 0;
  std::size_t mismatches = 0;
  bool identical() const noexcept { return mismatches == 0; }
};

// Calibrates on the labeled subset of `scores` and of alpha * scores + beta,
// classifies the unlabeled remainder both ways and counts disagreements.
// alpha < 0 uses the flipped polarity for the transformed scores.
AffineCheck affine_check(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::size_t> labeled, double alpha, double beta);

} // namespace semvol::diagnostics
