#include "algmech/solve.hpp"

#include "algmech/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>

namespace algmech {

double Trajectory::max_step() const {
  double h = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) h = std::max(h, t[i] - t[i - 1]);
  return h;
}

Eigen::VectorXd Trajectory::at(double time) const {
  if (t.empty()) throw Error("empty trajectory");
  if (time <= t.front()) return states.front();
  if (time >= t.back()) return states.back();
  const auto it = std::upper_bound(t.begin(), t.end(), time);
  const std::size_t i = static_cast<std::size_t>(it - t.begin()) - 1;
  const double h = t[i + 1] - t[i];
  const double s = (time - t[i]) / h;
  if (s == 0.0) return states[i];
  const double s2 = s * s;
  const double s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * states[i] + h10 * h * derivatives[i] + h01 * states[i + 1] + h11 * h * derivatives[i + 1];
}

void Trajectory::add_monitor(const std::string& name, const std::function<double(double, const Eigen::VectorXd&)>& fn) {
  std::vector<double> values(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) values[i] = fn(t[i], states[i]);
  const auto it = std::find(monitor_names_.begin(), monitor_names_.end(), name);
  if (it != monitor_names_.end()) {
    monitors_[static_cast<std::size_t>(it - monitor_names_.begin())] = std::move(values);
    return;
  }
  monitor_names_.push_back(name);
  monitors_.push_back(std::move(values));
}

const std::vector<double>& Trajectory::monitor(const std::string& name) const {
  const auto it = std::find(monitor_names_.begin(), monitor_names_.end(), name);
  if (it == monitor_names_.end()) throw Error("no monitor named " + name);
  return monitors_[static_cast<std::size_t>(it - monitor_names_.begin())];
}

double Trajectory::monitor_drift(const std::string& name) const {
  const auto& v = monitor(name);
  double d = 0.0;
  for (double x : v) d = std::max(d, std::abs(x - v.front()));
  return d;
}

double Trajectory::monitor_max_abs(const std::string& name) const {
  double d = 0.0;
  for (double x : monitor(name)) d = std::max(d, std::abs(x));
  return d;
}

void Trajectory::append(const Trajectory& other) {
  if (other.t.empty()) return;
  if (t.empty()) {
    t = other.t;
    states = other.states;
    derivatives = other.derivatives;
    return;
  }
  for (std::size_t i = 1; i < other.t.size(); ++i) {
    t.push_back(other.t[i]);
    states.push_back(other.states[i]);
    derivatives.push_back(other.derivatives[i]);
  }
  monitor_names_.clear();
  monitors_.clear();
}

namespace {

Eigen::VectorXd call(const VectorField& f, double t, const Eigen::VectorXd& s) {
  try {
    Eigen::VectorXd d = f(t, s);
    if (!d.allFinite()) throw EvaluationError("non-finite state derivative");
    return d;
  } catch (const RegularityError& e) {
    throw RegularityError("at t = " + format_number(t) + ": " + e.what(), e.matrix());
  } catch (const std::exception& e) {
    throw EvaluationError("at t = " + format_number(t) + ": " + e.what());
  }
}

Trajectory integrate_rk4(const VectorField& f, const Eigen::VectorXd& s0, double T, const Rk4& m, double t0) {
  if (!(m.h > 0.0)) throw Error("rk4 step must be positive");
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(T / m.h - 1e-9)));
  const double h = T / static_cast<double>(steps);
  Trajectory tr;
  tr.t.reserve(steps + 1);
  tr.states.reserve(steps + 1);
  tr.derivatives.reserve(steps + 1);
  Eigen::VectorXd s = s0;
  Eigen::VectorXd k1 = call(f, t0, s);
  tr.t.push_back(t0);
  tr.states.push_back(s);
  tr.derivatives.push_back(k1);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    const Eigen::VectorXd k2 = call(f, t + h / 2, s + (h / 2) * k1);
    const Eigen::VectorXd k3 = call(f, t + h / 2, s + (h / 2) * k2);
    const Eigen::VectorXd k4 = call(f, t + h, s + h * k3);
    s += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    const double tn = i + 1 == steps ? t0 + T : t0 + static_cast<double>(i + 1) * h;
    k1 = call(f, tn, s);
    tr.t.push_back(tn);
    tr.states.push_back(s);
    tr.derivatives.push_back(k1);
  }
  return tr;
}

Trajectory integrate_rk45(const VectorField& f, const Eigen::VectorXd& s0, double T, const Rk45& m, double t0) {
  if (!(m.rtol > 0.0) || !(m.atol > 0.0)) throw Error("rk45 tolerances must be positive");
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  Trajectory tr;
  Eigen::VectorXd s = s0;
  Eigen::VectorXd k1 = call(f, t0, s);
  tr.t.push_back(t0);
  tr.states.push_back(s);
  tr.derivatives.push_back(k1);
  const double t_end = t0 + T;
  double t = t0;
  double h = m.h0 > 0.0 ? m.h0 : T / 100.0;
  const double h_min = 1e-14 * std::max(1.0, std::abs(T));
  for (std::size_t step = 0; t < t_end; ++step) {
    if (step >= m.max_steps) throw ConvergenceError("rk45 exceeded the step limit");
    if (h < h_min) throw ConvergenceError("rk45 step underflow at t = " + format_number(t));
    const bool last = t + h >= t_end - h_min;
    if (last) h = t_end - t;
    const Eigen::VectorXd k2 = call(f, t + h / 5, s + h * a21 * k1);
    const Eigen::VectorXd k3 = call(f, t + 3 * h / 10, s + h * (a31 * k1 + a32 * k2));
    const Eigen::VectorXd k4 = call(f, t + 4 * h / 5, s + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Eigen::VectorXd k5 = call(f, t + 8 * h / 9, s + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Eigen::VectorXd k6 = call(f, t + h, s + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Eigen::VectorXd sn = s + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::VectorXd k7 = call(f, last ? t_end : t + h, sn);
    const Eigen::VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double norm = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double sc = m.atol + m.rtol * std::max(std::abs(s[i]), std::abs(sn[i]));
      norm += (err[i] / sc) * (err[i] / sc);
    }
    norm = s.size() > 0 ? std::sqrt(norm / static_cast<double>(s.size())) : 0.0;
    const double factor = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
    if (norm <= 1.0) {
      t = last ? t_end : t + h;
      s = sn;
      k1 = k7;
      tr.t.push_back(t);
      tr.states.push_back(s);
      tr.derivatives.push_back(k1);
      h *= factor;
    } else {
      h *= std::min(1.0, factor);
    }
  }
  return tr;
}

}  // namespace

Trajectory integrate(const VectorField& field, const Eigen::VectorXd& s0, double T, const Method& method, double t0) {
  if (!(T > 0.0)) throw Error("integration horizon must be positive");
  if (const auto* m = std::get_if<Rk4>(&method)) return integrate_rk4(field, s0, T, *m, t0);
  return integrate_rk45(field, s0, T, std::get<Rk45>(method), t0);
}

double finite_difference_jet(const Trajectory& traj, std::size_t channel, int order, double t) {
  return finite_difference_jet(traj, channel, order, t, std::max(1e-3, 10.0 * traj.max_step()));
}

double finite_difference_jet(const Trajectory& traj, std::size_t channel, int order, double t, double step) {
  if (order < 1 || order > 3) throw Error("jet order must be 1, 2 or 3");
  if (channel >= traj.state_dim()) throw DimensionError("channel out of range");
  if (t - 2 * step < traj.t.front() || t + 2 * step > traj.t.back()) throw Error("time too close to the trajectory ends");
  const auto c = static_cast<Eigen::Index>(channel);
  double f[5];
  for (int k = -2; k <= 2; ++k) f[k + 2] = traj.at(t + k * step)[c];
  switch (order) {
    case 1: return (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * step);
    case 2: return (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * step * step);
    default: return (f[4] - 2 * f[3] + 2 * f[1] - f[0]) / (2 * step * step * step);
  }
}

std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(std::ostream& out, const Trajectory& traj, const std::vector<std::string>& state_names) {
  if (state_names.size() != traj.state_dim()) throw DimensionError("one column name per state component");
  out << 't';
  for (const auto& n : state_names) out << ',' << n;
  for (const auto& n : traj.monitor_names()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << format_number(traj.t[i]);
    for (Eigen::Index k = 0; k < traj.states[i].size(); ++k) out << ',' << format_number(traj.states[i][k]);
    for (const auto& n : traj.monitor_names()) out << ',' << format_number(traj.monitor(n)[i]);
    out << '\n';
  }
}

// ---- shooting ----

namespace {

struct Segments {
  const ShootingProblem& problem;
  const ShootingOptions& options;
  std::size_t d = 0;
  std::size_t S = 1;

  double node(std::size_t k) const { return problem.T * static_cast<double>(k) / static_cast<double>(S); }

  Eigen::VectorXd start(const Eigen::VectorXd& U, std::size_t k) const {
    if (k == 0) return problem.initial_state(U.head(static_cast<Eigen::Index>(problem.unknown_count)));
    return U.segment(static_cast<Eigen::Index>(problem.unknown_count + (k - 1) * d), static_cast<Eigen::Index>(d));
  }

  Trajectory run(const Eigen::VectorXd& U, std::size_t k) const {
    return integrate(problem.field, start(U, k), node(k + 1) - node(k), options.method, node(k));
  }

  std::optional<Eigen::VectorXd> residual(const Eigen::VectorXd& U) const {
    try {
      Eigen::VectorXd r(U.size());
      Eigen::Index at = 0;
      for (std::size_t k = 0; k < S; ++k) {
        const Eigen::VectorXd end = run(U, k).states.back();
        if (k + 1 < S) {
          r.segment(at, static_cast<Eigen::Index>(d)) = end - start(U, k + 1);
          at += static_cast<Eigen::Index>(d);
        } else {
          const Eigen::VectorXd b = problem.residual(end);
          if (at + b.size() != r.size()) throw DimensionError("shooting system is not square");
          r.tail(b.size()) = b;
        }
      }
      if (!r.allFinite()) return std::nullopt;
      return r;
    } catch (const DimensionError&) {
      throw;
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  Trajectory trajectory(const Eigen::VectorXd& U) const {
    Trajectory tr;
    for (std::size_t k = 0; k < S; ++k) tr.append(run(U, k));
    return tr;
  }
};

}  // namespace

ShootingResult shoot(const ShootingProblem& problem, const Eigen::VectorXd& guess, const ShootingOptions& options) {
  if (static_cast<std::size_t>(guess.size()) != problem.unknown_count) throw DimensionError("guess has the wrong length");
  Segments seg{problem, options};
  seg.S = std::max<std::size_t>(1, options.segments);
  const Eigen::VectorXd s0 = problem.initial_state(guess);
  seg.d = static_cast<std::size_t>(s0.size());

  const auto q = static_cast<Eigen::Index>(problem.unknown_count);
  Eigen::VectorXd U(q + static_cast<Eigen::Index>((seg.S - 1) * seg.d));
  U.head(q) = guess;
  if (seg.S > 1) {
    Trajectory full;
    bool ok = true;
    try {
      full = integrate(problem.field, s0, problem.T, options.method);
    } catch (const Error&) {
      ok = false;
    }
    for (std::size_t k = 1; k < seg.S; ++k) {
      U.segment(q + static_cast<Eigen::Index>((k - 1) * seg.d), static_cast<Eigen::Index>(seg.d)) =
          ok ? full.at(seg.node(k)) : s0;
    }
  }

  ShootingResult result;
  auto F = seg.residual(U);
  if (!F) throw ConvergenceError("shooting map cannot be evaluated at the initial guess");
  if (F->size() != U.size()) throw DimensionError("shooting system is not square");
  double norm = F->lpNorm<Eigen::Infinity>();
  std::size_t it = 0;
  while (norm >= options.newton_tol && it < options.max_iter) {
    ++it;
    Eigen::MatrixXd J(U.size(), U.size());
    for (Eigen::Index i = 0; i < U.size(); ++i) {
      Eigen::VectorXd Up = U;
      const double step = options.fd_step * std::max(1.0, std::abs(U[i]));
      Up[i] += step;
      const auto Fp = seg.residual(Up);
      if (!Fp) {
        result.message = "shooting map failed while forming the Jacobian";
        break;
      }
      J.col(i) = (*Fp - *F) / step;
    }
    if (!result.message.empty()) break;
    const auto cod = J.completeOrthogonalDecomposition();
    const bool singular = cod.rank() < J.cols();
    const Eigen::VectorXd du = -cod.solve(*F);
    double lambda = 1.0;
    bool accepted = false;
    while (lambda >= options.min_damping) {
      const Eigen::VectorXd Un = U + lambda * du;
      const auto Fn = seg.residual(Un);
      if (Fn && Fn->lpNorm<Eigen::Infinity>() < norm) {
        U = Un;
        F = Fn;
        norm = Fn->lpNorm<Eigen::Infinity>();
        accepted = true;
        break;
      }
      lambda /= 2;
    }
    if (!accepted) {
      result.message = singular ? "singular shooting Jacobian" : "line search failed to reduce the residual";
      break;
    }
  }
  result.converged = norm < options.newton_tol;
  if (result.converged) {
    result.message.clear();
  } else if (result.message.empty()) {
    result.message = "Newton iteration limit reached";
  }
  result.residual_norm = norm;
  result.iterations = it;
  result.unknowns = U.head(q);
  result.trajectory = seg.trajectory(U);
  return result;
}

}  // namespace algmech
