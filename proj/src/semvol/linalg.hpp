#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace semvol::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultEpsilon = 1e-10;
inline constexpr double kZeroNormTolerance = 1e-12;

// d_orig x n matrix of unit-norm columns, one column per perturbation.
class EmbeddingMatrix {
public:
  // Divides every column by its Euclidean norm. Throws ZeroVector.
  static EmbeddingMatrix normalize(const Matrix &raw);
  // Adopts columns that are already unit norm (1 +- 1e-9); throws otherwise.
  static EmbeddingMatrix from_unit_columns(Matrix unit);

  const Matrix &data() const noexcept { return data_; }
  Eigen::Index dim() const noexcept { return data_.rows(); }
  Eigen::Index count() const noexcept { return data_.cols(); }

private:
  explicit EmbeddingMatrix(Matrix data) : data_(std::move(data)) {}
  Matrix data_;
};

struct PcaProjection {
  Matrix basis; // d_orig x d, orthonormal columns
  Vector singular_values; // length d, descending
  // Trailing components whose singular value fell below 1e-12 and were
  // filled by an orthonormal completion.
  int rank_deficient_components = 0;

  Eigen::Index input_dim() const noexcept { return basis.rows(); }
  Eigen::Index dim() const noexcept { return basis.cols(); }
};

EmbeddingMatrix normalize_columns(const Matrix &raw);

Matrix gram(const Matrix &columns);

// sum_i log(lambda_i + epsilon) over the eigenvalues of V^T V. Eigenvalues
// within round-off of zero are clamped; epsilon may be 0 only when the Gram
// matrix is nonsingular.
double log_det_gram(const Matrix &columns, double epsilon = kDefaultEpsilon);
inline double log_det_gram(const EmbeddingMatrix &v, double epsilon = kDefaultEpsilon) {
  return log_det_gram(v.data(), epsilon);
}

// Top-d left singular vectors of the uncentered matrix.
PcaProjection fit_pca(const Matrix &columns, Eigen::Index d);
inline PcaProjection fit_pca(const EmbeddingMatrix &v, Eigen::Index d) {
  return fit_pca(v.data(), d);
}

Matrix project(const PcaProjection &p, const Matrix &columns);
inline Matrix project(const PcaProjection &p, const EmbeddingMatrix &v) {
  return project(p, v.data());
}

// log det(M + u v^T) through the matrix determinant lemma.
double rank_one_logdet(const Matrix &m, const Vector &u, const Vector &v);

// Log-determinant of a symmetric positive definite matrix via its eigenvalues.
double log_det_spd(const Matrix &sigma);

Vector sample_mean(const Matrix &samples);
// Unbiased (m - 1) covariance of the columns of `samples`.
Matrix sample_covariance(const Matrix &samples, const Vector &mean);

// Squared Mahalanobis distance of every column of `samples` to `mu`. A ridge
// of 1e-9 * trace(sigma) / d is added to the diagonal before factorizing.
Vector mahalanobis_sq(const Matrix &samples, const Vector &mu, const Matrix &sigma);

double spectral_norm(const Matrix &a);

bool is_symmetric(const Matrix &a, double tolerance);

} // namespace semvol::linalg
