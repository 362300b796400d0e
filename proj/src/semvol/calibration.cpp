#include "semvol/calibration.hpp"

#include "semvol/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace semvol::calibration {

namespace {

void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::LengthMismatch, "scores and labels differ in length",
         std::to_string(scores.size()) + " vs " + std::to_string(labels.size()));
  }
  for (const int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  }
  for (const double s : scores) {
    if (!std::isfinite(s)) fail(ErrorCode::NonFinite, "scores must be finite");
  }
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

double f1_of(const Counts &c) {
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) +
                       static_cast<double>(c.fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / denom;
}

double accuracy_of(const Counts &c) {
  const std::size_t total = c.tp + c.fp + c.fn + c.tn;
  return total == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

Counts count_at(std::span<const double> scores, std::span<const int> labels, double tau) {
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > tau;
    const bool truth = labels[i] == 1;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

} // namespace

std::string_view to_string(Metric m) noexcept { return m == Metric::F1 ? "f1" : "accuracy"; }

Metric metric_from_string(std::string_view name) {
  if (name == "f1") return Metric::F1;
  if (name == "accuracy") return Metric::Accuracy;
  fail(ErrorCode::ConfigError, "unknown metric", std::string(name));
}

std::vector<int> classify(std::span<const double> scores, double tau) {
  std::vector<int> out(scores.size());
  std::transform(scores.begin(), scores.end(), out.begin(),
                 [tau](double s) { return s > tau ? 1 : 0; });
  return out;
}

double f1_at(std::span<const double> scores, std::span<const int> labels, double tau) {
  check_labels(scores, labels);
  return f1_of(count_at(scores, labels, tau));
}

double accuracy_at(std::span<const double> scores, std::span<const int> labels, double tau) {
  check_labels(scores, labels);
  return accuracy_of(count_at(scores, labels, tau));
}

double metric_at(Metric metric, std::span<const double> scores, std::span<const int> labels,
                 double tau) {
  return metric == Metric::F1 ? f1_at(scores, labels, tau) : accuracy_at(scores, labels, tau);
}

CalibrationResult optimal_threshold(std::span<const double> scores, std::span<const int> labels,
                                    Metric metric) {
  check_labels(scores, labels);
  const std::size_t m = scores.size();
  if (m < 2) fail(ErrorCode::InsufficientLabels, "calibration needs at least two labeled items");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Start below every score: everything is predicted positive. Walking the
  // thresholds upward flips whole groups of equal scores to negative.
  Counts c;
  for (const int l : labels) (l == 1 ? c.tp : c.fp) += 1;
  auto value = [&](const Counts &k) { return metric == Metric::F1 ? f1_of(k) : accuracy_of(k); };

  // Sentinels sit half the score range beyond the extremes (1 when all
  // scores coincide), so they move with any positive affine map of the scores.
  const double range = scores[order.back()] - scores[order.front()];
  const double margin = range > 0.0 ? 0.5 * range : 1.0;

  CalibrationResult best;
  best.metric = metric;
  best.subset_size = m;
  best.tau_star = scores[order.front()] - margin;
  best.achieved = value(c);

  std::size_t i = 0;
  while (i < m) {
    const double current = scores[order[i]];
    std::size_t j = i;
    while (j < m && scores[order[j]] == current) {
      if (labels[order[j]] == 1) {
        --c.tp;
        ++c.fn;
      } else {
        --c.fp;
        ++c.tn;
      }
      ++j;
    }
    const double tau = j < m ? 0.5 * (current + scores[order[j]]) : current + margin;
    const double v = value(c);
    if (v >= best.achieved) {
      best.achieved = v;
      best.tau_star = tau;
    }
    i = j;
  }

  if (metric == Metric::F1 && std::none_of(labels.begin(), labels.end(), [](int l) { return l == 1; })) {
    best.degenerate = true;
  }
  // Recompute from scratch so the stored value matches an independent evaluation.
  best.achieved = metric_at(metric, scores, labels, best.tau_star);
  return best;
}

CalibrationResult optimal_threshold(std::span<const double> scores, std::span<const int> labels,
                                    Metric metric, Polarity polarity) {
  if (polarity == Polarity::HigherIsPositive) return optimal_threshold(scores, labels, metric);
  std::vector<double> flipped(scores.begin(), scores.end());
  for (double &s : flipped) s = -s;
  return optimal_threshold(flipped, labels, metric);
}

std::vector<int> classify_with(std::span<const double> scores, double tau, Polarity polarity) {
  if (polarity == Polarity::HigherIsPositive) return classify(scores, tau);
  std::vector<double> flipped(scores.begin(), scores.end());
  for (double &s : flipped) s = -s;
  return classify(flipped, tau);
}

} // namespace semvol::calibration
