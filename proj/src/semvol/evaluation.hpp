#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <optional>
#include <span>

namespace semvol::evaluation {

struct KsResult {
  double stat = 0.0;
  double pvalue = 1.0;
};

struct AccuracyF1 {
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> auroc; // absent for binary-verdict measures
  double ks_stat = 0.0;
  double ks_pvalue = 1.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// P[score_pos > score_neg] with ties credited 1/2 (Mann-Whitney form).
double auroc(std::span<const double> scores, std::span<const int> labels);

// Kolmogorov Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_survival(double lambda);

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

AccuracyF1 accuracy_f1(std::span<const int> predicted, std::span<const int> truth);

// Scores the thresholded predictions and the separation between the label-0
// and label-1 score distributions.
EvalReport evaluate(std::span<const double> scores, std::span<const int> truth, double tau,
                    bool binary_measure);

nlohmann::ordered_json to_json(const EvalReport &report);
EvalReport report_from_json(const nlohmann::json &j);

} // namespace semvol::evaluation
