#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace semvol::calibration {

enum class Metric { F1, Accuracy };

std::string_view to_string(Metric m) noexcept;
Metric metric_from_string(std::string_view name);

// Which side of the threshold is the positive class. LowerIsPositive is the
// polarity flip for scores where smaller means more uncertain; it negates the
// scores and then applies the usual rule.
enum class Polarity { HigherIsPositive, LowerIsPositive };

struct CalibrationResult {
  double tau_star = 0.0;
  Metric metric = Metric::F1;
  double achieved = 0.0;
  std::size_t subset_size = 0;
  // Set when F1 is identically zero (no positive labels in the subset).
  bool degenerate = false;
  std::optional<std::uint64_t> seed;
};

// y_hat = 1 iff score > tau.
std::vector<int> classify(std::span<const double> scores, double tau);

// 2 TP / (2 TP + FP + FN), 0 when the denominator vanishes.
double f1_at(std::span<const double> scores, std::span<const int> labels, double tau);
double accuracy_at(std::span<const double> scores, std::span<const int> labels, double tau);
double metric_at(Metric metric, std::span<const double> scores, std::span<const int> labels,
                 double tau);

// Exact sweep over midpoints of consecutive distinct scores plus the
// sentinels min - r/2 and max + r/2 (r = score range, 1 when r = 0). Metric
// ties go to the largest threshold.
CalibrationResult optimal_threshold(std::span<const double> scores, std::span<const int> labels,
                                    Metric metric = Metric::F1);

// Polarity-aware variants. With LowerIsPositive the returned tau lives in
// negated-score space; pass the same polarity to classify_with.
CalibrationResult optimal_threshold(std::span<const double> scores, std::span<const int> labels,
                                    Metric metric, Polarity polarity);
std::vector<int> classify_with(std::span<const double> scores, double tau, Polarity polarity);

} // namespace semvol::calibration
