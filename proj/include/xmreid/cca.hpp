#pragma once

#include <optional>

#include "xmreid/common.hpp"

namespace xmreid {

// Observations are columns: X is d_x x m, Y is d_y x m.
struct CovarianceSet {
  Matrix sxx;  // with r_x I added
  Matrix syy;  // with r_y I added
  Matrix sxy;
  Vector mean_x;
  Vector mean_y;
  double r_x = 0.0;
  double r_y = 0.0;
  Eigen::Index m = 0;
};

// Regularisation per side; unset means 1e-4 * trace(S) / d of that side.
struct CcaRegularization {
  std::optional<double> x;
  std::optional<double> y;

  static CcaRegularization both(double r) { return {r, r}; }
};

CovarianceSet estimate_covariances(const Matrix& X, const Matrix& Y, const CcaRegularization& r = {});

// Symmetric M with M S M = I, via eigendecomposition.
Matrix inverse_sqrt(const Matrix& S);

enum class CcaSide { x, y };

struct CcaModel {
  Matrix w_x;           // d_x x k
  Matrix w_y;           // d_y x k
  Vector correlations;  // k, non-increasing
  Vector mean_x;
  Vector mean_y;
  double r_x = 0.0;
  double r_y = 0.0;

  Eigen::Index components() const { return correlations.size(); }
  Eigen::Index input_dim(CcaSide side) const { return side == CcaSide::x ? w_x.rows() : w_y.rows(); }
  // W*^T (f - mean) for each column of `features`.
  Matrix project(const Matrix& features, CcaSide side) const;
  // Same for a single feature vector.
  Vector project_one(const Vector& feature, CcaSide side) const;

  // W* = I and zero means; components = dim.
  static CcaModel identity(Eigen::Index dim);
};

// components = 0 keeps all min(d_x, d_y).
CcaModel fit_cca(const Matrix& X, const Matrix& Y, const CcaRegularization& r = {},
                 Eigen::Index components = 0);

}  // namespace xmreid
