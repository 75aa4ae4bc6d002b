#include "xmreid/cca.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace xmreid {

namespace {

double default_regularization(const Matrix& s) {
  return 1e-4 * s.trace() / static_cast<double>(s.rows());
}

}  // namespace

CovarianceSet estimate_covariances(const Matrix& X, const Matrix& Y, const CcaRegularization& r) {
  if (X.cols() != Y.cols()) {
    throw ValidationError("CCA needs paired observations: X has " + std::to_string(X.cols()) +
                          " columns, Y has " + std::to_string(Y.cols()));
  }
  if (X.cols() < 2) throw ValidationError("CCA needs at least 2 observations");
  if (X.rows() < 1 || Y.rows() < 1) throw ValidationError("CCA needs non-empty feature dimensions");
  if (!X.allFinite() || !Y.allFinite()) throw NumericError("CCA input contains non-finite values");

  CovarianceSet c;
  c.m = X.cols();
  c.mean_x = X.rowwise().mean();
  c.mean_y = Y.rowwise().mean();
  const Matrix xc = X.colwise() - c.mean_x;
  const Matrix yc = Y.colwise() - c.mean_y;
  const double norm = 1.0 / static_cast<double>(c.m - 1);
  c.sxx = norm * (xc * xc.transpose());
  c.syy = norm * (yc * yc.transpose());
  c.sxy = norm * (xc * yc.transpose());
  c.r_x = r.x ? *r.x : default_regularization(c.sxx);
  c.r_y = r.y ? *r.y : default_regularization(c.syy);
  if (!(c.r_x >= 0) || !(c.r_y >= 0)) throw ValidationError("CCA regularisation must be non-negative");
  c.sxx.diagonal().array() += c.r_x;
  c.syy.diagonal().array() += c.r_y;
  return c;
}

Matrix inverse_sqrt(const Matrix& S) {
  if (S.rows() != S.cols() || S.rows() == 0) throw ValidationError("inverse_sqrt needs a square matrix");
  if (!S.allFinite()) throw NumericError("inverse_sqrt input contains non-finite values");
  const double scale = S.cwiseAbs().maxCoeff();
  if (!((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(scale, 1.0))) {
    throw ValidationError("inverse_sqrt needs a symmetric matrix");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed in inverse_sqrt");
  const Vector& lambda = eig.eigenvalues();
  const double tol = 1e-14 * std::max(scale, 1e-300);
  if (!(lambda.minCoeff() > tol)) {
    throw NumericError("inverse_sqrt needs a positive-definite matrix (smallest eigenvalue " +
                       std::to_string(lambda.minCoeff()) + ")");
  }
  const Matrix& Q = eig.eigenvectors();
  Matrix M = Q * lambda.array().rsqrt().matrix().asDiagonal() * Q.transpose();
  return 0.5 * (M + M.transpose());
}

CcaModel fit_cca(const Matrix& X, const Matrix& Y, const CcaRegularization& r, Eigen::Index components) {
  const CovarianceSet c = estimate_covariances(X, Y, r);
  const Matrix kx = inverse_sqrt(c.sxx);
  const Matrix ky = inverse_sqrt(c.syy);
  const Matrix T = kx * c.sxy * ky;
  Eigen::JacobiSVD<Matrix> svd(T, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!svd.singularValues().allFinite()) {
    throw NumericError("SVD of the whitened cross-covariance produced non-finite values");
  }
  const Eigen::Index kmax = std::min(X.rows(), Y.rows());
  if (components < 0 || components > kmax) {
    throw ValidationError("CCA components must be in 0.." + std::to_string(kmax));
  }
  const Eigen::Index k = components == 0 ? kmax : components;

  CcaModel model;
  model.w_x = kx * svd.matrixU().leftCols(k);
  model.w_y = ky * svd.matrixV().leftCols(k);
  model.correlations = svd.singularValues().head(k);
  model.mean_x = c.mean_x;
  model.mean_y = c.mean_y;
  model.r_x = c.r_x;
  model.r_y = c.r_y;
  return model;
}

Matrix CcaModel::project(const Matrix& features, CcaSide side) const {
  const Matrix& w = side == CcaSide::x ? w_x : w_y;
  const Vector& mean = side == CcaSide::x ? mean_x : mean_y;
  if (features.rows() != w.rows()) {
    throw ValidationError("CCA projection expects dimension " + std::to_string(w.rows()) + ", got " +
                          std::to_string(features.rows()));
  }
  return w.transpose() * (features.colwise() - mean);
}

Vector CcaModel::project_one(const Vector& feature, CcaSide side) const {
  return project(feature, side).col(0);
}

CcaModel CcaModel::identity(Eigen::Index dim) {
  CcaModel m;
  m.w_x = Matrix::Identity(dim, dim);
  m.w_y = Matrix::Identity(dim, dim);
  m.correlations = Vector::Ones(dim);
  m.mean_x = Vector::Zero(dim);
  m.mean_y = Vector::Zero(dim);
  return m;
}

}  // namespace xmreid
