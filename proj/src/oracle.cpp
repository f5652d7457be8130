#include "algmech/error.hpp"
#include "algmech/solve.hpp"

namespace algmech {

namespace {

// Admissible variation generated by eta = e_a at node k: returns (delta x_j, delta y_j) for the
// nodes j in [k - 1, k + 1]; eta-dot uses central differences.
struct Variation {
  std::vector<Eigen::VectorXd> dx;
  std::vector<Eigen::VectorXd> dy;
};

template <class State>
Variation variation(const AlgebroidChart& chart, const std::vector<State>& path, std::size_t k, Eigen::Index a, double h) {
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  Variation v;
  for (std::size_t j = k - 1; j <= k + 1; ++j) {
    const ChartPoint cp = chart.at(path[j].x);
    Eigen::VectorXd dy = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(chart.base_dim()));
    if (j == k) {
      dx = cp.rho.col(a);
      for (Eigen::Index c = 0; c < n; ++c)
        for (Eigen::Index b = 0; b < n; ++b) dy[c] += cp.C(static_cast<std::size_t>(c), static_cast<std::size_t>(b),
                                                            static_cast<std::size_t>(a)) * path[j].y[b];
    } else {
      dy[a] += (j < k ? 1.0 : -1.0) / (2 * h);
    }
    v.dx.push_back(dx);
    v.dy.push_back(dy);
  }
  return v;
}

}  // namespace

Eigen::MatrixXd oracle_action_gradient(const LagrangianProblem& prob, const std::vector<AlgebroidState>& path, double h,
                                       double eps) {
  const auto& chart = prob.chart();
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  const std::size_t N = path.size() - 1;
  if (path.size() < 5) throw Error("oracle needs at least 5 path nodes");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(N + 1));
  for (std::size_t k = 2; k + 2 <= N; ++k) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const Variation v = variation(chart, path, k, a, h);
      auto action = [&](double e) {
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
          const auto& st = path[k - 1 + i];
          s += h * prob.evaluate(st.x + e * v.dx[i], st.y + e * v.dy[i], 0).value[0];
        }
        return s;
      };
      grad(a, static_cast<Eigen::Index>(k)) = (action(eps) - action(-eps)) / (2 * eps);
    }
  }
  return grad;
}

Eigen::MatrixXd oracle_action_gradient(const SecondOrderProblem& prob, const std::vector<SecondOrderState>& path, double h,
                                       double eps) {
  const auto& chart = prob.chart();
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  const std::size_t N = path.size() - 1;
  if (path.size() < 7) throw Error("oracle needs at least 7 path nodes");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(N + 1));
  for (std::size_t k = 3; k + 3 <= N; ++k) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const Variation v = variation(chart, path, k, a, h);
      // delta y is supported on k-1..k+1, so delta z = central difference lives on k-2..k+2.
      auto dy_at = [&](std::size_t j) -> Eigen::VectorXd {
        if (j + 1 < k || j > k + 1) return Eigen::VectorXd::Zero(n);
        return v.dy[j + 1 - k];
      };
      auto action = [&](double e) {
        double s = 0.0;
        for (std::size_t j = k - 2; j <= k + 2; ++j) {
          const auto& st = path[j];
          Eigen::VectorXd x = st.x;
          if (j + 1 >= k && j <= k + 1) x += e * v.dx[j + 1 - k];
          const Eigen::VectorXd y = st.y + e * dy_at(j);
          const Eigen::VectorXd z = st.z + e * (dy_at(j + 1) - dy_at(j - 1)) / (2 * h);
          s += h * prob.evaluate(x, y, z, 0).value[0];
        }
        return s;
      };
      grad(a, static_cast<Eigen::Index>(k)) = (action(eps) - action(-eps)) / (2 * eps);
    }
  }
  return grad;
}

}  // namespace algmech
