#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace oracle {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

inline LMatrix widen(const Eigen::MatrixXd& m) { return m.cast<long double>(); }

// Column observations, 1/(m-1) normalisation.
inline LMatrix covariance(const LMatrix& X, const LMatrix& Y) {
  const auto m = X.cols();
  LMatrix xc = X;
  LMatrix yc = Y;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    long double s = 0;
    for (Eigen::Index c = 0; c < m; ++c) s += X(r, c);
    xc.row(r).array() -= s / m;
  }
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    long double s = 0;
    for (Eigen::Index c = 0; c < m; ++c) s += Y(r, c);
    yc.row(r).array() -= s / m;
  }
  LMatrix out = LMatrix::Zero(X.rows(), Y.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.rows(); ++j) {
      long double s = 0;
      for (Eigen::Index c = 0; c < m; ++c) s += xc(i, c) * yc(j, c);
      out(i, j) = s / (m - 1);
    }
  return out;
}

// Canonical correlations from the generalized eigenproblem
//   Sxy Syy^-1 Syx w = rho^2 Sxx w
// reduced with a Cholesky factor Sxx = L L^T, descending.
inline std::vector<long double> canonical_correlations(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                                       long double r_x, long double r_y) {
  const LMatrix x = widen(X);
  const LMatrix y = widen(Y);
  LMatrix sxx = covariance(x, x);
  LMatrix syy = covariance(y, y);
  const LMatrix sxy = covariance(x, y);
  sxx += r_x * LMatrix::Identity(sxx.rows(), sxx.cols());
  syy += r_y * LMatrix::Identity(syy.rows(), syy.cols());
  const Eigen::LLT<LMatrix> lx(sxx);
  const Eigen::LLT<LMatrix> ly(syy);
  const LMatrix inner = sxy * ly.solve(sxy.transpose());
  const LMatrix L = lx.matrixL();
  const LMatrix left = L.triangularView<Eigen::Lower>().solve(inner);
  LMatrix c = L.triangularView<Eigen::Lower>().solve(left.transpose()).transpose();
  c = (c + c.transpose()) / 2;
  const Eigen::SelfAdjointEigenSolver<LMatrix> eig(c);
  std::vector<long double> rho;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    rho.push_back(std::sqrt(std::max<long double>(0, eig.eigenvalues()(i))));
  }
  std::sort(rho.rbegin(), rho.rend());
  rho.resize(static_cast<std::size_t>(std::min(X.rows(), Y.rows())));
  return rho;
}

// Ranks and APs by direct enumeration: for each query, count gallery items
// that beat each relevant item under (similarity desc, index asc).
struct QueryOracle {
  int first_match = 0;  // 1-based; 0 when nothing is relevant
  long double ap = 0;
};

inline QueryOracle brute_force_query(const Eigen::RowVectorXd& sims, int label, const std::vector<int>& gallery) {
  const auto n = sims.size();
  std::vector<int> relevant_ranks;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (gallery[static_cast<std::size_t>(j)] != label) continue;
    int better = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (sims(k) > sims(j) || (sims(k) == sims(j) && k < j)) ++better;
    }
    relevant_ranks.push_back(better + 1);
  }
  QueryOracle q;
  if (relevant_ranks.empty()) return q;
  std::sort(relevant_ranks.begin(), relevant_ranks.end());
  q.first_match = relevant_ranks.front();
  for (std::size_t i = 0; i < relevant_ranks.size(); ++i) {
    q.ap += static_cast<long double>(i + 1) / relevant_ranks[i];
  }
  q.ap /= relevant_ranks.size();
  return q;
}

}  // namespace oracle
