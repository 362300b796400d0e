#include "semvol/evaluation.hpp"

#include "semvol/calibration.hpp"
#include "semvol/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace semvol::evaluation {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::LengthMismatch, "scores and labels differ in length");
  }
  const auto n = scores.size();
  std::int64_t n_pos = 0;
  for (const int l : labels) n_pos += l == 1 ? 1 : 0;
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::OneClassOnly, "AUROC needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum, with tied groups sharing rank (first+last)/2.
  std::int64_t rank_sum2 = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum2 += twice_mid;
    }
    i = j;
  }
  const std::int64_t u2 = rank_sum2 - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // Small-lambda form of the same distribution converges where the
    // alternating series does not.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int j = 1; j < 100; ++j) {
      const double k = 2.0 * j - 1.0;
      const double term = std::exp(-k * k * pi2 / (8.0 * lambda * lambda));
      cdf += term;
      if (term < 1e-12) break;
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int j = 1; j < 1000; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptySample, "KS test needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size());
  const double nb = static_cast<double>(y.size());

  double stat = 0.0;
  std::size_t i = 0, j = 0;
  while (i < x.size() || j < y.size()) {
    double v;
    if (j == y.size() || (i < x.size() && x[i] <= y[j])) v = x[i];
    else v = y[j];
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    stat = std::max(stat, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }

  const double en = std::sqrt(na * nb / (na + nb));
  const double lambda = (en + 0.12 + 0.11 / en) * stat;
  return {stat, kolmogorov_survival(lambda)};
}

AccuracyF1 accuracy_f1(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    fail(ErrorCode::LengthMismatch, "prediction and truth differ in length",
         std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()));
  }
  if (predicted.empty()) fail(ErrorCode::EmptySample, "nothing to evaluate");
  std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    correct += predicted[i] == truth[i] ? 1 : 0;
    if (predicted[i] == 1 && truth[i] == 1) ++tp;
    else if (predicted[i] == 1) ++fp;
    else if (truth[i] == 1) ++fn;
  }
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
  return {static_cast<double>(correct) / static_cast<double>(predicted.size()),
          denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom};
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> truth, double tau,
                    bool binary_measure) {
  if (scores.size() != truth.size()) {
    fail(ErrorCode::LengthMismatch, "scores and labels differ in length");
  }
  const auto predicted = calibration::classify(scores, tau);
  const auto af = accuracy_f1(predicted, truth);

  EvalReport r;
  r.accuracy = af.accuracy;
  r.f1 = af.f1;
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (truth[i] == 1 ? pos : neg).push_back(scores[i]);
  r.n_pos = pos.size();
  r.n_neg = neg.size();
  if (!pos.empty() && !neg.empty()) {
    if (!binary_measure) r.auroc = auroc(scores, truth);
    const auto ks = ks_two_sample(neg, pos);
    r.ks_stat = ks.stat;
    r.ks_pvalue = ks.pvalue;
  }
  return r;
}

nlohmann::ordered_json to_json(const EvalReport &report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["f1"] = report.f1;
  if (report.auroc) j["auroc"] = *report.auroc;
  j["ks_stat"] = report.ks_stat;
  j["ks_pvalue"] = report.ks_pvalue;
  j["n_pos"] = report.n_pos;
  j["n_neg"] = report.n_neg;
  return j;
}

EvalReport report_from_json(const nlohmann::json &j) {
  EvalReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.f1 = j.at("f1").get<double>();
  if (j.contains("auroc") && !j["auroc"].is_null()) r.auroc = j["auroc"].get<double>();
  r.ks_stat = j.at("ks_stat").get<double>();
  r.ks_pvalue = j.at("ks_pvalue").get<double>();
  r.n_pos = j.at("n_pos").get<std::size_t>();
  r.n_neg = j.at("n_neg").get<std::size_t>();
  return r;
}

} // namespace semvol::evaluation
