#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace semvol {

inline std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for the k-th independent stream derived from a base seed.
inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t state = base ^ (0x632be59bd9b4e019ULL * (stream + 1));
  splitmix64(state);
  return splitmix64(state);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  // Haar-distributed orthogonal matrix via QR with sign correction.
  Eigen::MatrixXd orthogonal(Eigen::Index n) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(normal_matrix(n, n));
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (r(i, i) < 0) q.col(i) = -q.col(i);
    }
    return q;
  }

  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace semvol
