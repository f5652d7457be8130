#pragma once

#include "algmech/algebroid.hpp"
#include "algmech/expr.hpp"
#include "algmech/ocp.hpp"
#include "algmech/parser.hpp"
#include "algmech/solve.hpp"
#include "algmech/sorusk.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace algmech {

enum ExitCode : int {
  exit_ok = 0,
  exit_schema = 1,
  exit_nonconvergence = 2,
  exit_regularity = 3,
  exit_validation = 4,
};

struct SolverSettings {
  std::string method = "rk4";
  double h = 1e-3;
  double rtol = 1e-10;
  double atol = 1e-12;
  double newton_tol = 1e-10;
  std::size_t max_iter = 50;
  std::size_t segments = 1;
  std::size_t max_levels = 8;

  Method integrator() const;
};

struct ValidationSettings {
  std::size_t samples = 100;
  double lo = -1.0;
  double hi = 1.0;
  double tol = 1e-10;
};

struct InitialData {
  std::optional<Eigen::VectorXd> x0;
  std::optional<Eigen::VectorXd> y0;
  std::optional<Eigen::VectorXd> z0;
  std::optional<Eigen::VectorXd> p0;
  std::optional<Eigen::VectorXd> pbar0;
};

/// A validated problem document. Expressions are parsed; vectors are dimension-checked.
struct ProblemFile {
  nlohmann::json document;
  std::string mode;
  AlgebroidChart chart;
  std::optional<Expr> lagrangian;
  std::optional<Expr> hamiltonian;
  std::optional<Expr> cost;
  std::optional<std::vector<std::size_t>> actuation;  // 0-based
  std::vector<Expr> force;
  std::vector<Expr> constraints;
  std::optional<Elimination> elimination;
  std::optional<Boundary> boundary;
  InitialData initial;
  std::optional<Eigen::VectorXd> guess;
  SolverSettings solver;
  ValidationSettings validation;
  double T = 1.0;

  std::size_t m() const { return chart.base_dim(); }
  std::size_t n() const { return chart.fiber_rank(); }
};

const std::vector<std::string>& known_modes();

/// Throws SchemaError carrying the JSON pointer of the first violation.
ProblemFile parse_problem(const nlohmann::json& doc);
/// Reads and parses; unreadable files raise IoError, malformed JSON raises SchemaError.
nlohmann::json read_document(const std::filesystem::path& path);
ProblemFile load_problem(const std::filesystem::path& path);

struct RunOptions {
  std::optional<double> tol;  // overrides validation and Newton tolerances
  std::uint64_t seed = 0;
};

struct RunOutcome {
  int exit_code = exit_ok;
  std::string message;
  nlohmann::json report;
};

/// Runs the document's mode, writes report.json (always) and trajectory.csv (when a trajectory
/// exists) into out_dir. Output bytes depend only on the document and options.
RunOutcome run_problem(const ProblemFile& pf, const std::filesystem::path& out_dir, const RunOptions& options);

/// Chart axiom check only, whatever the mode.
RunOutcome validate_problem(const ProblemFile& pf, const std::optional<std::filesystem::path>& out_dir,
                            const RunOptions& options);

/// "/json/pointer=v1,v2,..." ; values are read as JSON when possible, else as strings.
struct SweepAxis {
  std::string pointer;
  std::vector<nlohmann::json> values;
};

SweepAxis parse_sweep_axis(const std::string& spec);

/// Runs the Cartesian product of the axes, one directory per point (point_000, ...), concurrently
/// on up to `threads` workers, and writes sweep.json. Returns the largest exit code.
int run_sweep(const nlohmann::json& doc, const std::vector<SweepAxis>& axes, const std::filesystem::path& out_dir,
              const RunOptions& options, std::size_t threads);

}  // namespace algmech
