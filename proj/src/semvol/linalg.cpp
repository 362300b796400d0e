#include "semvol/linalg.hpp"

#include "semvol/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace semvol::linalg {

namespace {

void require_finite(const Matrix &m, const char *what) {
  if (!m.allFinite()) {
    fail(ErrorCode::NonFinite, std::string(what) + " contains non-finite values");
  }
}

Vector symmetric_eigenvalues(const Matrix &a, const char *what) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    fail(ErrorCode::NonFinite, std::string("eigendecomposition of ") + what +
                                   " did not converge");
  }
  return solver.eigenvalues();
}

Eigen::Index first_nonzero_index(const Vector &v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > kZeroNormTolerance) return i;
  }
  return v.size();
}

} // namespace

EmbeddingMatrix EmbeddingMatrix::normalize(const Matrix &raw) {
  if (raw.cols() < 1 || raw.rows() < 1) {
    fail(ErrorCode::InvalidArgument, "embedding matrix must have at least one row and column");
  }
  require_finite(raw, "embedding matrix");
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double norm = raw.col(j).norm();
    if (norm < kZeroNormTolerance) {
      fail(ErrorCode::ZeroVector, "column has zero norm", "column " + std::to_string(j));
    }
    out.col(j) = raw.col(j) / norm;
  }
  return EmbeddingMatrix(std::move(out));
}

EmbeddingMatrix EmbeddingMatrix::from_unit_columns(Matrix unit) {
  if (unit.cols() < 1 || unit.rows() < 1) {
    fail(ErrorCode::InvalidArgument, "embedding matrix must have at least one row and column");
  }
  require_finite(unit, "embedding matrix");
  for (Eigen::Index j = 0; j < unit.cols(); ++j) {
    if (std::abs(unit.col(j).norm() - 1.0) > 1e-9) {
      fail(ErrorCode::InvalidArgument, "column is not unit norm", "column " + std::to_string(j));
    }
  }
  return EmbeddingMatrix(std::move(unit));
}

EmbeddingMatrix normalize_columns(const Matrix &raw) { return EmbeddingMatrix::normalize(raw); }

Matrix gram(const Matrix &columns) {
  Matrix g = columns.transpose() * columns;
  return 0.5 * (g + g.transpose());
}

double log_det_gram(const Matrix &columns, double epsilon) {
  if (columns.cols() < 2) {
    fail(ErrorCode::InvalidArgument, "log_det_gram needs at least two columns",
         "n=" + std::to_string(columns.cols()));
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    fail(ErrorCode::InvalidArgument, "epsilon must be finite and non-negative");
  }
  require_finite(columns, "embedding matrix");

  // The eigenvalues of V^T V are the squared singular values of V, padded
  // with n - min(dim, n) exact zeros. Working from V avoids squaring the
  // round-off of near-null directions before log(lambda + epsilon) sees it.
  Eigen::JacobiSVD<Matrix> svd(columns);
  const Vector sigma = svd.singularValues();
  if (!sigma.allFinite()) fail(ErrorCode::NonFinite, "singular value decomposition did not converge");
  const Eigen::Index zeros = columns.cols() - sigma.size();
  double total = 0.0;
  for (const double s : sigma) {
    const double shifted = s * s + epsilon;
    if (shifted <= 0.0) fail(ErrorCode::Singular, "Gram matrix is singular and epsilon is zero");
    total += std::log(shifted);
  }
  if (zeros > 0) {
    if (epsilon == 0.0) {
      fail(ErrorCode::Singular, "Gram matrix is singular and epsilon is zero",
           "dim=" + std::to_string(columns.rows()) + " n=" + std::to_string(columns.cols()));
    }
    total += static_cast<double>(zeros) * std::log(epsilon);
  }
  return total;
}

PcaProjection fit_pca(const Matrix &columns, Eigen::Index d) {
  const Eigen::Index limit = std::min(columns.rows(), columns.cols());
  if (d < 1 || d > limit) {
    fail(ErrorCode::InvalidArgument, "PCA dimension out of range",
         "d=" + std::to_string(d) + " max=" + std::to_string(limit));
  }
  require_finite(columns, "embedding matrix");

  Eigen::JacobiSVD<Matrix> svd(columns, Eigen::ComputeThinU);
  const Matrix &u = svd.matrixU();
  const Vector &sigma = svd.singularValues();

  // Deterministic ordering: descending singular value, ties by the index of
  // the first nonzero loading. Signs are fixed so that loading is positive.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(sigma.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Eigen::Index> lead(order.size());
  for (Eigen::Index k = 0; k < sigma.size(); ++k) lead[k] = first_nonzero_index(u.col(k));
  const double tie = 1e-12 * std::max(1.0, sigma.size() ? sigma[0] : 0.0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std::abs(sigma[a] - sigma[b]) > tie) return sigma[a] > sigma[b];
    return lead[a] < lead[b];
  });

  PcaProjection p;
  p.basis.resize(columns.rows(), d);
  p.singular_values.resize(d);
  Eigen::Index kept = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    if (sigma[src] < kZeroNormTolerance) break;
    Vector col = u.col(src);
    const Eigen::Index i = first_nonzero_index(col);
    if (i < col.size() && col[i] < 0) col = -col;
    p.basis.col(k) = col;
    p.singular_values[k] = sigma[src];
    ++kept;
  }

  // Orthonormal completion for directions the data does not span.
  p.rank_deficient_components = static_cast<int>(d - kept);
  Eigen::Index filled = kept;
  for (Eigen::Index axis = 0; filled < d && axis < columns.rows(); ++axis) {
    Vector w = Vector::Unit(columns.rows(), axis);
    for (int pass = 0; pass < 2; ++pass) {
      const auto prior = p.basis.leftCols(filled);
      w -= prior * (prior.transpose() * w);
    }
    const double norm = w.norm();
    if (norm < 1e-6) continue;
    p.basis.col(filled) = w / norm;
    p.singular_values[filled] = 0.0;
    ++filled;
  }
  return p;
}

Matrix project(const PcaProjection &p, const Matrix &columns) {
  if (p.basis.rows() != columns.rows()) {
    fail(ErrorCode::DimensionMismatch, "projection basis and embeddings disagree in dimension",
         "basis=" + std::to_string(p.basis.rows()) + " embeddings=" +
             std::to_string(columns.rows()));
  }
  return p.basis.transpose() * columns;
}

double rank_one_logdet(const Matrix &m, const Vector &u, const Vector &v) {
  if (m.rows() != m.cols() || u.size() != m.rows() || v.size() != m.rows()) {
    fail(ErrorCode::DimensionMismatch, "rank_one_logdet operands disagree in dimension");
  }
  require_finite(m, "matrix");
  Eigen::PartialPivLU<Matrix> lu(m);
  if (!(lu.rcond() >= 1e-12)) {
    fail(ErrorCode::Singular, "matrix is singular or ill-conditioned",
         "rcond=" + std::to_string(lu.rcond()));
  }
  const Vector diag = lu.matrixLU().diagonal();
  double log_abs = 0.0;
  double sign = lu.permutationP().determinant();
  for (const double x : diag) {
    log_abs += std::log(std::abs(x));
    if (x < 0) sign = -sign;
  }
  if (sign <= 0) {
    fail(ErrorCode::NonPositiveDeterminant, "det(M) is not positive");
  }
  const double update = 1.0 + v.dot(lu.solve(u));
  if (!(update > 0.0)) {
    fail(ErrorCode::NonPositiveUpdate, "1 + v^T M^-1 u is not positive",
         "value=" + std::to_string(update));
  }
  return log_abs + std::log(update);
}

double log_det_spd(const Matrix &sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    fail(ErrorCode::DimensionMismatch, "covariance must be square and non-empty");
  }
  require_finite(sigma, "covariance");
  const Vector lambda = symmetric_eigenvalues(0.5 * (sigma + sigma.transpose()), "covariance");
  if (lambda.minCoeff() <= 1e-12) {
    fail(ErrorCode::Singular, "covariance is not positive definite",
         "min eigenvalue=" + std::to_string(lambda.minCoeff()));
  }
  return lambda.array().log().sum();
}

Vector sample_mean(const Matrix &samples) {
  if (samples.cols() == 0) fail(ErrorCode::EmptySample, "no samples");
  return samples.rowwise().mean();
}

Matrix sample_covariance(const Matrix &samples, const Vector &mean) {
  if (samples.cols() < 2) fail(ErrorCode::EmptySample, "covariance needs at least two samples");
  const Matrix centered = samples.colwise() - mean;
  Matrix cov = centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
  return 0.5 * (cov + cov.transpose());
}

Vector mahalanobis_sq(const Matrix &samples, const Vector &mu, const Matrix &sigma) {
  const Eigen::Index d = sigma.rows();
  if (sigma.cols() != d || mu.size() != d || samples.rows() != d) {
    fail(ErrorCode::DimensionMismatch, "mahalanobis operands disagree in dimension");
  }
  require_finite(sigma, "covariance");
  Matrix ridged = 0.5 * (sigma + sigma.transpose());
  ridged.diagonal().array() += 1e-9 * sigma.trace() / static_cast<double>(d);
  Eigen::LLT<Matrix> llt(ridged);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::Singular, "covariance is singular after ridge");
  }
  const Matrix y = llt.matrixL().solve(samples.colwise() - mu);
  return y.colwise().squaredNorm().transpose();
}

bool is_symmetric(const Matrix &a, double tolerance) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tolerance * scale;
}

double spectral_norm(const Matrix &a) {
  if (a.rows() == 0 || !is_symmetric(a, 1e-9)) {
    fail(ErrorCode::NotSymmetric, "spectral_norm expects a symmetric matrix");
  }
  require_finite(a, "matrix");
  const Vector lambda = symmetric_eigenvalues(0.5 * (a + a.transpose()), "matrix");
  return std::max(std::abs(lambda.minCoeff()), std::abs(lambda.maxCoeff()));
}

} // namespace semvol::linalg
