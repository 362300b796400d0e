#pragma once

// Slow, independent reference computations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

// Determinant by Gaussian elimination with partial pivoting.
inline double det(Dense a) {
  const std::size_t n = a.size();
  double d = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::fabs(a[i][k]) > std::fabs(a[p][k])) p = i;
    }
    if (a[p][k] == 0.0) return 0.0;
    if (p != k) {
      std::swap(a[p], a[k]);
      d = -d;
    }
    d *= a[k][k];
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
    }
  }
  return d;
}

inline double log_abs_det(const Dense &a) { return std::log(std::fabs(det(a))); }

// Columns given as a list of vectors; returns the n x n Gram matrix.
inline Dense gram(const std::vector<std::vector<double>> &cols) {
  const std::size_t n = cols.size();
  Dense g(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < cols[i].size(); ++k) g[i][j] += cols[i][k] * cols[j][k];
  return g;
}

// Fraction of (pos, neg) pairs ordered correctly, ties counting one half.
inline double auroc_pairs(const std::vector<double> &scores, const std::vector<int> &labels) {
  double credit = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) credit += 1.0;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  return credit / pairs;
}

// max over pooled points of |F_a(x) - F_b(x)|, each ECDF counted directly.
inline double ks_brute(const std::vector<double> &a, const std::vector<double> &b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  double best = 0.0;
  for (const double x : pooled) {
    double fa = 0.0, fb = 0.0;
    for (const double v : a) fa += v <= x ? 1.0 : 0.0;
    for (const double v : b) fb += v <= x ? 1.0 : 0.0;
    best = std::max(best, std::fabs(fa / static_cast<double>(a.size()) - fb / static_cast<double>(b.size())));
  }
  return best;
}

// Chi-square density, d >= 1.
inline double chi2_density(double x, int d) {
  if (x <= 0.0) return d == 2 ? 0.5 : 0.0;
  const double k = d / 2.0;
  return std::exp((k - 1.0) * std::log(x) - x / 2.0 - k * std::log(2.0) - std::lgamma(k));
}

// CDF by composite Simpson on [lo, x]. For d = 1 the integrable singularity
// at 0 is removed with the substitution x = t^2.
inline double chi2_cdf_simpson(double x, int d, int panels = 200000) {
  if (x <= 0.0) return 0.0;
  if (d == 1) {
    const double hi = std::sqrt(x);
    const double h = hi / panels;
    auto f = [](double t) { return 2.0 * std::exp(-t * t / 2.0) / std::sqrt(2.0 * M_PI); };
    double s = f(0.0) + f(hi);
    for (int i = 1; i < panels; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
  }
  const double h = x / panels;
  double s = chi2_density(0.0, d) + chi2_density(x, d);
  for (int i = 1; i < panels; ++i) s += chi2_density(i * h, d) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Longest common subsequence by enumerating every subsequence of `a` and
// testing it against `b`. Exponential; meant for length <= 12.
inline std::size_t lcs_brute(const std::vector<std::string> &a, const std::vector<std::string> &b) {
  std::size_t best = 0;
  const std::uint32_t limit = 1u << a.size();
  for (std::uint32_t mask = 0; mask < limit; ++mask) {
    std::size_t len = 0;
    std::size_t pos = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      while (pos < b.size() && b[pos] != a[i]) ++pos;
      if (pos == b.size()) ok = false;
      else {
        ++pos;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

inline double rouge_from_lcs(std::size_t lcs, std::size_t nc, std::size_t nr) {
  if (lcs == 0 || nc == 0 || nr == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(nc);
  const double r = static_cast<double>(lcs) / static_cast<double>(nr);
  return 2.0 * p * r / (p + r);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("semvol-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

} // namespace oracle
