#include "algmech/error.hpp"
#include "algmech/problem_file.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace algmech;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path source_dir{ALGMECH_SOURCE_DIR};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("algmech_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> bundled_examples() {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(source_dir / "examples"))
    if (e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

json minimal() {
  return {{"mode", "simulate-el"},
          {"algebroid", {{"builtin", {{"name", "tangent_bundle"}, {"params", {{"m", 1}}}}}}},
          {"lagrangian", "0.5*y1^2 - 0.5*x1^2"},
          {"initial", {{"x0", {0.0}}, {"y0", {1.0}}, {"T", 1.0}}}};
}

std::string pointer_of(const json& doc) {
  try {
    parse_problem(doc);
  } catch (const SchemaError& e) {
    return e.pointer();
  }
  return "<accepted>";
}

}  // namespace

TEST(ProblemFile, LoadsRigidBodySpline) {
  const ProblemFile pf = load_problem(source_dir / "examples" / "rigid_body_spline.json");
  EXPECT_EQ(pf.mode, "solve-ocp");
  EXPECT_EQ(pf.n(), 3u);
  ASSERT_TRUE(pf.boundary.has_value());
  ASSERT_TRUE(pf.boundary->z0.has_value());
  EXPECT_EQ(*pf.actuation, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ProblemFile, LoadsElroyBeanie) {
  const ProblemFile pf = load_problem(source_dir / "examples" / "elroy_beanie.json");
  EXPECT_EQ(pf.m(), 1u);
  EXPECT_EQ(pf.n(), 4u);
  EXPECT_EQ(pf.actuation->size(), 1u);
}

TEST(ProblemFile, SchemaErrorsCarryPointers) {
  EXPECT_EQ(pointer_of(minimal()), "<accepted>");
  json d = minimal();
  d["mode"] = "fly";
  EXPECT_EQ(pointer_of(d), "/mode");
  d = minimal();
  d["lagrangian"] = "0.5*y1^2 +";
  EXPECT_EQ(pointer_of(d), "/lagrangian");
  d = minimal();
  d["initial"]["y0"] = {1.0, 2.0};
  EXPECT_EQ(pointer_of(d), "/initial/y0");
  d = minimal();
  d["algebroid"]["builtin"]["params"]["m"] = "two";
  EXPECT_EQ(pointer_of(d), "/algebroid/builtin/params");
  d = minimal();
  d.erase("algebroid");
  EXPECT_EQ(pointer_of(d), "/algebroid");
  d = minimal();
  d["solver"] = {{"method", "euler"}};
  EXPECT_EQ(pointer_of(d), "/solver/method");
}

TEST(ProblemFile, UnreadableAndMalformedFiles) {
  EXPECT_THROW(read_document("/nonexistent/problem.json"), IoError);
  const fs::path dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"mode\": ";
  EXPECT_THROW(read_document(dir / "bad.json"), SchemaError);
}

TEST(Run, EveryBundledExampleSucceeds) {
  const auto files = bundled_examples();
  ASSERT_GE(files.size(), 5u);
  for (const auto& f : files) {
    const fs::path out = scratch("example_" + f.stem().string());
    const RunOutcome r = run_problem(load_problem(f), out, RunOptions{});
    EXPECT_EQ(r.exit_code, exit_ok) << f.filename() << ": " << r.message;
    EXPECT_TRUE(fs::exists(out / "report.json")) << f.filename();
    const json rep = json::parse(slurp(out / "report.json"));
    EXPECT_EQ(rep["status"], "ok") << f.filename();
    for (const auto& c : rep["checks"]) EXPECT_TRUE(c["pass"].get<bool>()) << f.filename() << " " << c.dump();
  }
}

TEST(Run, DegenerateCostExitsWithRegularityMatrix) {
  json d = json::parse(slurp(source_dir / "examples" / "rigid_body_spline.json"));
  d["cost"] = "0";
  const fs::path out = scratch("degenerate");
  const RunOutcome r = run_problem(parse_problem(d), out, RunOptions{});
  EXPECT_EQ(r.exit_code, exit_regularity);
  const json rep = json::parse(slurp(out / "report.json"));
  ASSERT_TRUE(rep["error"].contains("matrix"));
  EXPECT_EQ(rep["error"]["matrix"].size(), 3u);
}

TEST(Run, PerturbedStructureConstantsFailValidation) {
  const fs::path out = scratch("perturbed");
  const RunOutcome r = run_problem(load_problem(source_dir / "tests" / "data" / "so3_perturbed.json"), out, RunOptions{});
  EXPECT_EQ(r.exit_code, exit_validation);
  const json rep = json::parse(slurp(out / "report.json"));
  EXPECT_NEAR(rep["validation"]["jacobi"]["max"].get<double>(), 1e-3, 1e-9);
  EXPECT_FALSE(rep["validation"]["jacobi"]["location"].get<std::string>().empty());
}

TEST(Run, OutputsAreByteIdentical) {
  for (const char* name : {"elroy_beanie.json", "so3_validate.json", "planar_multiplier.json"}) {
    const ProblemFile pf = load_problem(source_dir / "examples" / name);
    const fs::path a = scratch(std::string("det_a_") + name), b = scratch(std::string("det_b_") + name);
    run_problem(pf, a, RunOptions{});
    run_problem(pf, b, RunOptions{});
    for (const char* file : {"report.json", "trajectory.csv"}) {
      if (!fs::exists(a / file)) continue;
      EXPECT_EQ(slurp(a / file), slurp(b / file)) << name << " " << file;
    }
  }
}

TEST(Sweep, AxisParsing) {
  const SweepAxis a = parse_sweep_axis("/parameters/k=0.1,0.2,abc");
  EXPECT_EQ(a.pointer, "/parameters/k");
  ASSERT_EQ(a.values.size(), 3u);
  EXPECT_EQ(a.values[1], json(0.2));
  EXPECT_EQ(a.values[2], json("abc"));
  EXPECT_THROW(parse_sweep_axis("no-equals"), SchemaError);
}

TEST(Sweep, GridWritesOneDirectoryPerPoint) {
  const json doc = minimal();
  const fs::path out = scratch("sweep");
  const int code = run_sweep(doc, {parse_sweep_axis("/initial/T=0.5,1.0"), parse_sweep_axis("/initial/y0/0=1,2")}, out, RunOptions{}, 2);
  EXPECT_EQ(code, exit_ok);
  const json index = json::parse(slurp(out / "sweep.json"));
  ASSERT_EQ(index["points"].size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(fs::exists(out / ("point_00" + std::to_string(i)) / "report.json"));
}

TEST(Cli, ExitCodes) {
  const std::string cli = ALGMECH_CLI;
  const fs::path out = scratch("cli");
  auto run = [&](const std::string& args) {
    const int status = std::system(("ALGMECH_LOG=error " + cli + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(run("validate --input " + (source_dir / "examples" / "so3_validate.json").string()), 0);
  EXPECT_EQ(run("validate --input " + (source_dir / "tests" / "data" / "so3_perturbed.json").string()), 4);
  EXPECT_EQ(run("run --input " + (source_dir / "examples" / "pendulum_el.json").string() + " --out " + (out / "p").string()), 0);
  EXPECT_TRUE(fs::exists(out / "p" / "trajectory.csv"));
  const fs::path bad = out / "bad.json";
  fs::create_directories(out);
  std::ofstream(bad) << R"({"mode": "simulate-el", "algebroid": {"builtin": {"name": "so3"}}, "lagrangian": "y9"})";
  EXPECT_EQ(run("run --input " + bad.string() + " --out " + (out / "bad").string()), 1);
  EXPECT_NE(run("run --input /nonexistent.json --out " + (out / "x").string()), 0);
}
