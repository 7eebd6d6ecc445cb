#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace censreg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using IndexList = std::vector<Index>;

/// Raised when a matrix that must be symmetric positive definite fails
/// Cholesky factorization, even after one jittered retry.
class FactorizationError : public std::runtime_error {
 public:
  explicit FactorizationError(std::string block)
      : std::runtime_error("Cholesky factorization failed for " + block),
        block_(std::move(block)) {}

  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

/// Cholesky factor of an SPD matrix. On failure the diagonal is inflated by
/// 1e-10 * trace / dim and factorization is attempted once more.
inline Eigen::LLT<Matrix> robust_cholesky(const Matrix& a, const std::string& what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double dim = static_cast<double>(a.rows());
  double jitter = 1e-10 * a.trace() / dim;
  if (!(jitter > 0.0)) jitter = 1e-10;
  Matrix b = a;
  b.diagonal().array() += jitter;
  llt.compute(b);
  if (llt.info() != Eigen::Success) throw FactorizationError(what);
  return llt;
}

inline bool is_spd(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) return false;
  if (!a.allFinite()) return false;
  if (!a.isApprox(a.transpose(), 1e-10)) return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

inline Matrix spd_inverse(const Matrix& a, const std::string& what) {
  auto llt = robust_cholesky(a, what);
  return llt.solve(Matrix::Identity(a.rows(), a.cols()));
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline Matrix covariance_to_correlation(const Matrix& cov) {
  const Vector inv_sd = cov.diagonal().array().sqrt().inverse().matrix();
  return inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
}

inline Vector gather(const Vector& v, std::span<const Index> idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = v(idx[k]);
  return out;
}

inline Matrix gather(const Matrix& m, std::span<const Index> rows, std::span<const Index> cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = m(rows[i], cols[j]);
  return out;
}

inline double sample_variance(const Vector& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace censreg
