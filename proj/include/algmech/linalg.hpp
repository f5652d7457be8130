#pragma once

#include <Eigen/Dense>

namespace algmech {

/// Numerical rank: singular values above tol * max(1, sigma_max) count.
Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double tol);

/// Orthonormal basis (columns) of the null space of a, same threshold as numerical_rank.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& a, double tol);

/// Reduced row echelon form with partial pivoting; entries below tol * row scale are zeroed.
/// Rows that vanish are dropped.
Eigen::MatrixXd rref(const Eigen::MatrixXd& a, double tol);

/// Canonical basis for the column span of b: columns of rref(b^T)^T.
Eigen::MatrixXd canonical_basis(const Eigen::MatrixXd& b, double tol);

double min_singular_value(const Eigen::MatrixXd& a);

}  // namespace algmech
