#include "algmech/linalg.hpp"

#include <cmath>

namespace algmech {

namespace {

double threshold(const Eigen::VectorXd& sv, double tol) {
  const double smax = sv.size() ? sv[0] : 0.0;
  return tol * std::max(1.0, smax);
}

}  // namespace

Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double tol) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const Eigen::VectorXd sv = svd.singularValues();
  const double t = threshold(sv, tol);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv[i] > t ? 1 : 0;
  return r;
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& a, double tol) {
  const Eigen::Index cols = a.cols();
  if (cols == 0) return Eigen::MatrixXd(0, 0);
  if (a.rows() == 0) return Eigen::MatrixXd::Identity(cols, cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double t = threshold(sv, tol);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv[i] > t ? 1 : 0;
  return svd.matrixV().rightCols(cols - r);
}

Eigen::MatrixXd rref(const Eigen::MatrixXd& a, double tol) {
  Eigen::MatrixXd m = a;
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  Eigen::Index lead = 0;
  for (Eigen::Index c = 0; c < cols && lead < rows; ++c) {
    Eigen::Index piv = lead;
    for (Eigen::Index r = lead + 1; r < rows; ++r) {
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    }
    if (std::abs(m(piv, c)) <= tol * scale) {
      for (Eigen::Index r = lead; r < rows; ++r) m(r, c) = 0.0;
      continue;
    }
    m.row(lead).swap(m.row(piv));
    m.row(lead) /= m(lead, c);
    m(lead, c) = 1.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (r == lead) continue;
      m.row(r) -= m(r, c) * m.row(lead);
      m(r, c) = 0.0;
    }
    ++lead;
  }
  Eigen::MatrixXd out = m.topRows(lead);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (std::abs(out.data()[i]) <= tol * scale) out.data()[i] = 0.0;
  }
  return out;
}

Eigen::MatrixXd canonical_basis(const Eigen::MatrixXd& b, double tol) {
  if (b.cols() == 0) return b;
  return rref(b.transpose(), tol).transpose();
}

double min_singular_value(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues().minCoeff();
}

}  // namespace algmech
