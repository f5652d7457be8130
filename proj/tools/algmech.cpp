#include "algmech/error.hpp"
#include "algmech/problem_file.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("algmech");
  logger->set_pattern("%l: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("ALGMECH_LOG")) {
    const std::string v = env;
    if (v == "error") spdlog::set_level(spdlog::level::err);
    else if (v == "debug") spdlog::set_level(spdlog::level::debug);
    else if (v != "info") spdlog::warn("ignoring ALGMECH_LOG={}; expected error, info or debug", v);
  }
}

int report(const algmech::RunOutcome& r, const std::string& what) {
  if (r.exit_code == algmech::exit_ok) {
    spdlog::info("{}: ok", what);
  } else {
    spdlog::error("{}: {} (exit {})", what, r.message, r.exit_code);
  }
  spdlog::debug("report:\n{}", r.report.dump(2));
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Mechanics and second-order variational problems on Lie algebroids"};
  app.require_subcommand(1);

  std::string input;
  std::string out;
  std::optional<double> tol;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());

  auto common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--input", input, "problem file (JSON)")->required()->check(CLI::ExistingFile);
    auto* o = sub->add_option("--out", out, "output directory");
    if (out_required) o->required();
    sub->add_option("--tol", tol, "tolerance override for validation and Newton convergence");
    sub->add_option("--seed", seed, "seed for random sampling");
  };
  CLI::App* validate = app.add_subcommand("validate", "check the algebroid structure equations");
  common(validate, false);
  CLI::App* run = app.add_subcommand("run", "run the problem file's mode");
  common(run, true);
  CLI::App* sweep = app.add_subcommand("sweep", "run a parameter grid, one directory per point");
  common(sweep, true);
  sweep->add_option("--set", sets, "grid axis /json/pointer=v1,v2,...")->required();
  sweep->add_option("--threads", threads, "concurrent runs");

  CLI11_PARSE(app, argc, argv);

  try {
    algmech::RunOptions options;
    options.tol = tol;
    options.seed = seed;
    if (*sweep) {
      std::vector<algmech::SweepAxis> axes;
      for (const auto& s : sets) axes.push_back(algmech::parse_sweep_axis(s));
      const int code = algmech::run_sweep(algmech::read_document(input), axes, out, options, threads);
      spdlog::info("sweep finished with exit code {}", code);
      return code;
    }
    const algmech::ProblemFile pf = algmech::load_problem(input);
    spdlog::debug("loaded {} (mode {}, chart {})", input, pf.mode, pf.chart.name());
    if (*validate) {
      return report(algmech::validate_problem(pf, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out), options),
                    "validate");
    }
    return report(algmech::run_problem(pf, out, options), pf.mode);
  } catch (const algmech::SchemaError& e) {
    spdlog::error("schema error at '{}': {}", e.pointer(), e.what());
    return algmech::exit_schema;
  } catch (const algmech::Error& e) {
    spdlog::error("{}", e.what());
    return algmech::exit_schema;
  }
}
