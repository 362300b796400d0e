#include "semvol/diagnostics.hpp"

#include "semvol/calibration.hpp"
#include "semvol/error.hpp"
#include "semvol/measures.hpp"
#include "semvol/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace semvol::diagnostics {

double chi2_cdf(double x, int d) {
  if (d < 1) fail(ErrorCode::InvalidArgument, "chi-square degrees of freedom must be positive");
  if (!(x > 0.0)) return 0.0;
  if (std::isinf(x)) return 1.0;
  return boost::math::gamma_p(0.5 * d, 0.5 * x);
}

double chi2_pdf(double x, int d) {
  if (d < 1) fail(ErrorCode::InvalidArgument, "chi-square degrees of freedom must be positive");
  if (x < 0.0) return 0.0;
  const double k = 0.5 * d;
  if (x == 0.0) return d == 2 ? 0.5 : (d == 1 ? std::numeric_limits<double>::infinity() : 0.0);
  return std::exp((k - 1.0) * std::log(x) - 0.5 * x - k * std::log(2.0) - std::lgamma(k));
}

double chi2_quantile(double p, int d) {
  if (d < 1) fail(ErrorCode::InvalidArgument, "chi-square degrees of freedom must be positive");
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorCode::InvalidArgument, "quantile level must lie in [0, 1)");
  if (p == 0.0) return 0.0;

  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(d));
  while (chi2_cdf(hi, d) < p) {
    lo = hi;
    hi *= 2.0;
  }
  double x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 400; ++iter) {
    const double f = chi2_cdf(x, d) - p;
    if (std::abs(f) < 1e-14) break;
    (f < 0 ? lo : hi) = x;
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
    const double slope = chi2_pdf(x, d);
    double next = slope > 0.0 && std::isfinite(slope) ? x - f / slope : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

GaussReport qq_report(std::vector<double> squared_distances, int d, double threshold,
                      R2Mode mode) {
  if (squared_distances.empty()) fail(ErrorCode::EmptySample, "no distances for Q-Q regression");
  std::sort(squared_distances.begin(), squared_distances.end());
  const std::size_t m = squared_distances.size();

  GaussReport r;
  r.d = d;
  r.n = static_cast<int>(m);
  r.threshold = threshold;
  r.mode = mode;
  r.observed = std::move(squared_distances);
  r.theoretical.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    r.theoretical[i] = chi2_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(m), d);
  }

  const double y_bar = std::accumulate(r.observed.begin(), r.observed.end(), 0.0) / m;
  std::vector<double> fitted = r.theoretical;
  if (mode == R2Mode::Fitted) {
    const double x_bar = std::accumulate(r.theoretical.begin(), r.theoretical.end(), 0.0) / m;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sxy += (r.theoretical[i] - x_bar) * (r.observed[i] - y_bar);
      sxx += (r.theoretical[i] - x_bar) * (r.theoretical[i] - x_bar);
    }
    const double slope = sxx > 0 ? sxy / sxx : 0.0;
    for (std::size_t i = 0; i < m; ++i) fitted[i] = y_bar + slope * (r.theoretical[i] - x_bar);
  }
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    ss_res += (r.observed[i] - fitted[i]) * (r.observed[i] - fitted[i]);
    ss_tot += (r.observed[i] - y_bar) * (r.observed[i] - y_bar);
  }
  r.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  r.passed = r.r2 >= threshold;
  return r;
}

GaussReport gaussianity_r2(const linalg::Matrix &x, double threshold, R2Mode mode) {
  const auto d = x.rows();
  const auto m = x.cols();
  if (d < 1 || m < d + 2) {
    fail(ErrorCode::InvalidArgument, "gaussianity check needs at least d + 2 samples",
         "d=" + std::to_string(d) + " m=" + std::to_string(m));
  }
  const linalg::Vector mean = linalg::sample_mean(x);
  const linalg::Matrix cov = linalg::sample_covariance(x, mean);
  const linalg::Vector dist = linalg::mahalanobis_sq(x, mean, cov);
  return qq_report(std::vector<double>(dist.begin(), dist.end()), static_cast<int>(d), threshold,
                   mode);
}

EpsilonReport epsilon_report(std::span<const linalg::EmbeddingMatrix> records, double epsilon) {
  if (records.empty()) fail(ErrorCode::EmptyInput, "no records for the epsilon report");
  EpsilonReport r;
  r.epsilon = epsilon;
  r.norms.reserve(records.size());
  for (const auto &v : records) r.norms.push_back(linalg::spectral_norm(linalg::gram(v.data())));

  std::vector<double> sorted = r.norms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t k = sorted.size();
  r.min = sorted.front();
  r.max = sorted.back();
  r.median = k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
  r.min_over_epsilon = epsilon > 0 ? r.min / epsilon : std::numeric_limits<double>::infinity();
  return r;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mid;
    i = j;
  }
  return ranks;
}

} // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "spearman inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> log_spaced(int count, double lo, double hi) {
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) {
    fail(ErrorCode::InvalidArgument, "log_spaced needs count >= 1 and 0 < lo <= hi");
  }
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out[static_cast<std::size_t>(i)] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
  }
  return out;
}

Theorem1Config default_theorem1_config() {
  Theorem1Config c;
  c.scales = log_spaced(12, 0.01, 1.0);
  return c;
}

Theorem1Result theorem1_experiment(const Theorem1Config &config) {
  if (config.scales.size() < 2) fail(ErrorCode::InvalidArgument, "need at least two scales");
  if (config.d < 1 || config.d > config.d_orig || config.n < config.d) {
    fail(ErrorCode::InvalidArgument, "theorem-1 experiment needs 1 <= d <= d_orig and n >= d");
  }
  for (const double s : config.scales) {
    if (!(s > 0.0)) fail(ErrorCode::InvalidArgument, "scales must be positive");
  }

  // Shared mean and base covariance Sigma0 = Q diag(lambda) Q^T, lambda
  // log-uniform in [0.5, 1.5] / d_orig so unit noise at scale 1.
  Rng base(stream_seed(config.seed, 0));
  const Eigen::Index dim = config.d_orig;
  const linalg::Matrix q = base.orthogonal(dim);
  linalg::Vector lambda(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    lambda[i] = std::exp(base.uniform(std::log(0.5), std::log(1.5))) / static_cast<double>(dim);
  }
  const linalg::Matrix sigma0 = q * lambda.asDiagonal() * q.transpose();
  const linalg::Matrix root = q * lambda.cwiseSqrt().asDiagonal();
  linalg::Vector mean = base.normal_matrix(dim, 1).col(0);
  mean.normalize();

  Theorem1Result result;
  result.rows.reserve(config.scales.size());
  for (std::size_t k = 0; k < config.scales.size(); ++k) {
    const double s = config.scales[k];
    Rng rng(stream_seed(config.seed, k + 1));
    linalg::Matrix x = std::sqrt(s) * root * rng.normal_matrix(dim, config.n);
    x.colwise() += mean;
    const auto v = linalg::EmbeddingMatrix::normalize(x);
    const auto projection = linalg::fit_pca(v, config.d);
    Theorem1Row row;
    row.scale = s;
    row.semantic_volume = measures::semantic_volume(v, projection, config.epsilon);
    row.target_logdet =
        linalg::log_det_spd(s * projection.basis.transpose() * sigma0 * projection.basis);
    result.rows.push_back(row);
  }

  std::set<double> distinct(config.scales.begin(), config.scales.end());
  if (distinct.size() >= 2) {
    std::vector<double> sv, target;
    for (const auto &r : result.rows) {
      sv.push_back(r.semantic_volume);
      target.push_back(r.target_logdet);
    }
    result.spearman = spearman(sv, target);
  }
  return result;
}

AffineCheck affine_check(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::size_t> labeled, double alpha, double beta) {
  if (alpha == 0.0 || !std::isfinite(alpha) || !std::isfinite(beta)) {
    fail(ErrorCode::InvalidArgument, "affine check needs finite alpha != 0 and finite beta");
  }
  if (scores.size() != labels.size()) fail(ErrorCode::LengthMismatch, "scores and labels differ");

  std::vector<bool> in_subset(scores.size(), false);
  std::vector<double> sub, sub_t;
  std::vector<int> sub_labels;
  for (const std::size_t i : labeled) {
    if (i >= scores.size()) fail(ErrorCode::InvalidArgument, "labeled index out of range");
    in_subset[i] = true;
    sub.push_back(scores[i]);
    sub_t.push_back(alpha * scores[i] + beta);
    sub_labels.push_back(labels[i]);
  }
  const auto polarity = alpha > 0 ? calibration::Polarity::HigherIsPositive
                                  : calibration::Polarity::LowerIsPositive;
  const auto original = calibration::optimal_threshold(sub, sub_labels, calibration::Metric::F1);
  const auto transformed =
      calibration::optimal_threshold(sub_t, sub_labels, calibration::Metric::F1, polarity);

  std::vector<double> rest, rest_t;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (in_subset[i]) continue;
    rest.push_back(scores[i]);
    rest_t.push_back(alpha * scores[i] + beta);
  }
  const auto a = calibration::classify(rest, original.tau_star);
  const auto b = calibration::classify_with(rest_t, transformed.tau_star, polarity);

  AffineCheck check;
  check.alpha = alpha;
  check.beta = beta;
  check.tau_original = original.tau_star;
  check.tau_transformed = transformed.tau_star;
  check.evaluated = rest.size();
  for (std::size_t i = 0; i < a.size(); ++i) check.mismatches += a[i] != b[i] ? 1 : 0;
  return check;
}

} // namespace semvol::diagnostics
