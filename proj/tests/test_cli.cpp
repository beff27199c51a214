#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grushin/cli.hpp"

using namespace grushin;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("grushin_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string csv(const RunRecord& r) {
  std::ostringstream o;
  write_csv(o, r);
  return o.str();
}

// CSV with the named column dropped.
std::string drop_column(const std::string& text, const std::string& col) {
  std::istringstream in(text);
  std::string line, out;
  int skip = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == col) skip = int(i);
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (int(i) != skip) out += cells[i] + ";";
    out += "\n";
  }
  return out;
}

ExperimentConfig constant_sweep() {
  return ExperimentConfig::from_json({{"kind", "resolvent_sweep"},
                                      {"params", {{"profile", {{"kind", "constant"}, {"value", 1.0}}},
                                                  {"h_list", {0.2, 0.14}}}}});
}

RunRecord fixture_record(int n, bool with_target) {
  RunRecord r;
  r.kind = "resolvent_sweep";
  r.columns = csv_columns(ExperimentKind::resolvent_sweep);
  FitSummary f;
  f.name = "norm";
  f.meaning = "norm ~ C h^-exponent";
  const double hs[] = {0.2, 0.1, 0.05};
  for (int i = 0; i < n; ++i) {
    f.h.push_back(hs[i]);
    f.value.push_back(3.0 * std::pow(hs[i], -2.1) * (1 + 0.01 * i));
  }
  f.samples = n;
  if (n >= 2) {
    // exact least-squares line through the fixture points
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
      double x = std::log(1 / f.h[i]), y = std::log(f.value[i]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    f.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.intercept = (sy - f.exponent * sx) / n;
  }
  if (with_target) f.target = SlopeTarget{2.0, std::nullopt};
  r.fits.push_back(f);
  return r;
}

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("canonical JSON and hashing") {
  json a = json::parse(R"({"b": 1, "a": [1.5, 0.1], "c": {"y": true, "x": null}})");
  json b = json::parse(R"({"c": {"x": null, "y": true}, "a": [1.5, 0.1], "b": 1})");
  CHECK(canonical_json(a) == canonical_json(b));
  CHECK(canonical_json(a) == R"({"a":[1.5,0.1],"b":1,"c":{"x":null,"y":true}})");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  auto c1 = constant_sweep(), c2 = constant_sweep();
  c2.out_dir = "elsewhere";
  c2.jobs = 4;
  CHECK(c1.hash() == c2.hash());
  c2.seed = 1;
  CHECK(c1.hash() != c2.hash());
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "nope"}}), ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "resolvent_sweep"}, {"params", {{"hh", 1}}}}), ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "resolvent_sweep"}, {"params", {{"h_list", {0.1, -1}}}}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "flow_classify"}, {"params", {{"sample", 99}}}}), ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "quasimode_sweep"}, {"params", {{"regime", "inside"}}}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "oned_family"}, {"params", {{"profile", "egcc_trig"}}}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "acceptance_suite"}, {"params", {{"suite", "slow"}}}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"kind", "resolvent_sweep"}, {"jobs", 0}}), ConfigInvalid);
  auto c = ExperimentConfig::from_json({{"kind", "resolvent_sweep"}});
  CHECK(c.params["h_list"].size() == 5);
  CHECK(c.params["profile"]["kind"] == "egcc_trig");
  // defaults are filled once: validating again changes nothing
  auto before = c.hash();
  c.validate();
  CHECK(c.hash() == before);
}

TEST_CASE("suite ids") {
  CHECK(suite_criteria("fast") == std::vector<int>{7, 8});
  CHECK(suite_criteria("scaling") == std::vector<int>{1, 2, 3, 4, 5, 6});
  CHECK(suite_criteria("all").size() == 8);
  CHECK_THROWS_AS(suite_criteria("bogus"), ConfigInvalid);
}

TEST_CASE("constant damping sweep: norm <= 1/(h c), cache reuse, identical records") {
  auto dir = scratch("cache");
  SampleCache cache(dir);
  auto cfg = constant_sweep();
  auto cold = run(cfg, cache);
  REQUIRE(cold.pass.has_value());
  CHECK(*cold.pass);
  CHECK(cold.errors.empty());
  CHECK(cold.cache_misses == 2);
  CHECK(cold.cache_hits == 0);
  for (const auto& row : cold.rows) CHECK(row["norm"].get<double>() * row["h"].get<double>() <= 1.0 + 1e-8);
  auto warm = run(cfg, cache);
  CHECK(warm.cache_misses == 0);
  CHECK(warm.cache_hits == 2);
  CHECK(warm.reproducible_json().dump() == cold.reproducible_json().dump());
  CHECK(csv(warm) == csv(cold));
  REQUIRE(warm.fits.size() == 1);
  CHECK(warm.fits[0].exponent == cold.fits[0].exponent);
  // cache entries are laid out by key prefix
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) files += e.is_regular_file();
  CHECK(files == 2);
}

TEST_CASE("cache directory from the environment") {
  const char* old = std::getenv("GRUSHIN_CACHE_DIR");
  std::string saved = old ? old : "";
  ::setenv("GRUSHIN_CACHE_DIR", "/tmp/somewhere", 1);
  CHECK(SampleCache::from_env("/tmp/fallback").dir() == "/tmp/somewhere");
  ::setenv("GRUSHIN_CACHE_DIR", "", 1);
  CHECK_FALSE(SampleCache::from_env("/tmp/fallback").enabled());
  ::unsetenv("GRUSHIN_CACHE_DIR");
  CHECK(SampleCache::from_env("/tmp/fallback").dir() == "/tmp/fallback");
  CHECK_FALSE(SampleCache::from_env().enabled());
  if (old) ::setenv("GRUSHIN_CACHE_DIR", saved.c_str(), 1);
}

TEST_CASE("CSV schema and precision") {
  SampleCache off;
  auto r = run(constant_sweep(), off);
  auto text = csv(r);
  std::istringstream in(text);
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "case_id,h,beta_h,n_x,n_y,norm,sigma_min,iters,wall_ms,converged");
  std::getline(in, row);
  CHECK(row.rfind("0,0.20000000000000001,0,", 0) == 0);
  for (auto k : {ExperimentKind::quasimode_sweep, ExperimentKind::oned_family, ExperimentKind::normal_form_bench,
                 ExperimentKind::flow_classify, ExperimentKind::acceptance_suite}) {
    CHECK(csv_columns(k).front() == "case_id");
    CHECK(std::find(csv_columns(k).begin(), csv_columns(k).end(), "wall_ms") != csv_columns(k).end());
  }
}

TEST_CASE("cold reruns agree in every column except the wall time") {
  SampleCache off;
  auto cfg = ExperimentConfig::from_json({{"kind", "normal_form_bench"}, {"seed", 11}, {"params", {{"seeds", 3}}}});
  auto a = run(cfg, off), b = run(cfg, off);
  CHECK(drop_column(csv(a), "wall_ms") == drop_column(csv(b), "wall_ms"));
  for (std::size_t i = 0; i < a.fits.size(); ++i) CHECK(a.fits[i].exponent == b.fits[i].exponent);
  CHECK(a.pass.value_or(false));
  cfg.seed = 12;
  auto c = run(cfg, off);
  CHECK(drop_column(csv(a), "wall_ms") != drop_column(csv(c), "wall_ms"));
}

TEST_CASE("jobs do not change results") {
  SampleCache off;
  auto cfg = ExperimentConfig::from_json({{"kind", "normal_form_bench"}, {"params", {{"seeds", 4}}}});
  auto a = run(cfg, off);
  cfg.jobs = 3;
  auto b = run(cfg, off);
  CHECK(drop_column(csv(a), "wall_ms") == drop_column(csv(b), "wall_ms"));
}

TEST_CASE("per-sample failures are recorded and the run continues") {
  SampleCache off;
  auto cfg = ExperimentConfig::from_json(
      {{"kind", "resolvent_sweep"},
       {"params",
        {{"profile", {{"kind", "constant"}, {"value", 1.0}}}, {"h_list", {0.2, 0.14}}, {"c_y", 0.5}, {"strict_grid", true}}}});
  auto r = run(cfg, off);
  CHECK(r.errors.size() == 2);
  CHECK(r.rows.size() == 2);
  CHECK(r.rows[0].contains("error"));
  REQUIRE(r.pass.has_value());
  CHECK_FALSE(*r.pass);
  CHECK(csv(r).find("nan") != std::string::npos);
}

TEST_CASE("outside-damping quasimode sweep meets its declared target") {
  SampleCache off;
  auto cfg = ExperimentConfig::from_json({{"kind", "quasimode_sweep"}, {"target", {{"min", 1.8}}}});
  auto r = run(cfg, off);
  CHECK(r.rows.size() == 5);
  REQUIRE(r.pass.has_value());
  CHECK(*r.pass);
  REQUIRE(!r.fits.empty());
  CHECK(r.fits[0].exponent >= 1.8);
  // inapplicable compact-regime columns are absent here, applicable ones finite
  CHECK(csv(r).find("nan") == std::string::npos);
}

TEST_CASE("run record JSON round trip") {
  SampleCache off;
  auto r = run(constant_sweep(), off);
  auto back = RunRecord::from_json(r.to_json());
  CHECK(back.to_json().dump() == r.to_json().dump());
}

TEST_CASE("plots") {
  auto dir = scratch("plot");
  SUBCASE("two points give one segment and identical bytes") {
    auto r = fixture_record(2, false);
    auto a = render_plot(r), b = render_plot(r);
    CHECK(a == b);
    CHECK(count(a, "<line") == 1);
    CHECK(count(a, "<circle") == 2);
    emit_plot(r, (dir / "a.svg").string());
    emit_plot(r, (dir / "b.svg").string());
    CHECK(slurp(dir / "a.svg") == slurp(dir / "b.svg"));
  }
  SUBCASE("too few samples: error and no file") {
    auto r = fixture_record(0, false);
    CHECK_THROWS_AS(emit_plot(r, (dir / "empty.svg").string()), std::invalid_argument);
    CHECK_FALSE(fs::exists(dir / "empty.svg"));
    RunRecord none;
    CHECK_THROWS_AS(emit_plot(none, (dir / "none.svg").string()), std::invalid_argument);
    CHECK_FALSE(fs::exists(dir / "none.svg"));
  }
  SUBCASE("golden file") {
    auto svg = render_plot(fixture_record(3, true));
    const fs::path golden = fs::path(GRUSHIN_SOURCE_DIR) / "tests" / "golden" / "plot_fixture.svg";
    if (std::getenv("GRUSHIN_UPDATE_GOLDEN")) {
      std::ofstream(golden, std::ios::binary) << svg;
    }
    REQUIRE(fs::exists(golden));
    CHECK(svg == slurp(golden));
  }
}

TEST_CASE("CLI exit codes") {
  const std::string exe = GRUSHIN_EXE;
  auto dir = scratch("exe");
  auto code = [&](const std::string& args) {
    std::string cmd = "GRUSHIN_CACHE_DIR= " + exe + " " + args + " > " + (dir / "log").string() + " 2>&1";
    int s = std::system(cmd.c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(code("accept bogus") == 2);
  CHECK(code("resolvent --h-list 0.2,x") == 2);
  CHECK(code("flow --h-list 0.1") == 2);
  CHECK(code("resolvent --config " + (dir / "missing.json").string()) == 2);
  std::ofstream(dir / "bad.json") << R"({"kind": "oned_family"})";
  CHECK(code("resolvent --config " + (dir / "bad.json").string()) == 2);
  CHECK(code("resolvent --profile '{\"kind\":\"constant\",\"value\":1}' --h-list 0.2,0.14 --out " + (dir / "run").string()) ==
        0);
  CHECK(fs::exists(dir / "run" / "resolvent_sweep.csv"));
  CHECK(fs::exists(dir / "run" / "report.json"));
  CHECK(fs::exists(dir / "run" / "plot.svg"));
  CHECK(code("plot " + (dir / "run" / "report.json").string() + " --out " + (dir / "again.svg").string()) == 0);
  CHECK(slurp(dir / "again.svg") == slurp(dir / "run" / "plot.svg"));
  // declared target that cannot hold
  std::ofstream(dir / "strict.json") << R"({"kind": "resolvent_sweep", "target": {"min": 3},
      "params": {"profile": {"kind": "constant", "value": 1}, "h_list": [0.2, 0.14]}})";
  CHECK(code("resolvent --config " + (dir / "strict.json").string() + " --out " + (dir / "strict").string()) == 1);
}
