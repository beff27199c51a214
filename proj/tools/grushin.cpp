// Command-line front end for the experiment harness.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "grushin/cli.hpp"

using namespace grushin;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::vector<double> h_list;
  std::optional<double> nu;
  std::string profile;
  std::string out;
  int jobs = 0;
  bool strict_grid = false;
  std::optional<std::uint64_t> seed;
  std::string regime;
};

json parse_profile_flag(const std::string& s) {
  if (!s.empty() && s.front() == '{') {
    try {
      return json::parse(s);
    } catch (const json::exception& e) {
      throw ConfigInvalid("--profile is not valid JSON: " + std::string(e.what()));
    }
  }
  return s;
}

// Profile object with nu overridden; only strip and finite_type carry nu.
json with_nu(json profile, double nu) {
  json p = profile_from_spec(profile).to_json();
  const std::string k = p["kind"];
  if (k != "strip" && k != "finite_type") throw ConfigInvalid("--nu needs a strip or finite_type profile, got " + k);
  p["nu"] = nu;
  return p;
}

ExperimentConfig build_config(ExperimentKind kind, const Flags& f) {
  json j;
  if (!f.config.empty()) {
    if (fs::path(f.config).extension() == ".toml") throw ConfigInvalid("TOML configs are not supported, use JSON");
    std::ifstream in(f.config);
    if (!in) throw ConfigInvalid("cannot open config " + f.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigInvalid("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigInvalid("config must be a JSON object");
    if (j.contains("kind") && j["kind"] != kind_name(kind))
      throw ConfigInvalid("config kind " + j["kind"].dump() + " does not match the subcommand");
  } else {
    j = json::object();
  }
  j["kind"] = kind_name(kind);
  json& p = j["params"];
  if (p.is_null()) p = json::object();

  if (!f.regime.empty()) p["regime"] = f.regime;
  if (!f.h_list.empty()) {
    if (kind == ExperimentKind::normal_form_bench) p["eps_list"] = f.h_list;
    else if (kind == ExperimentKind::flow_classify) throw ConfigInvalid("--h-list does not apply to flow");
    else if (kind == ExperimentKind::quasimode_sweep && p.value("regime", "") == "compact_t2")
      throw ConfigInvalid("compact_t2 is indexed by k_list, not --h-list");
    else p["h_list"] = f.h_list;
  }
  if (!f.profile.empty()) {
    json prof = parse_profile_flag(f.profile);
    switch (kind) {
      case ExperimentKind::resolvent_sweep:
      case ExperimentKind::oned_family: p["profile"] = prof; break;
      case ExperimentKind::quasimode_sweep: {
        if (!p.contains("spec")) p["spec"] = json::object();
        p["spec"]["damping"] = prof;
        break;
      }
      case ExperimentKind::flow_classify: p["profiles"] = json::array({prof}); break;
      default: throw ConfigInvalid("--profile does not apply here");
    }
  }
  if (f.strict_grid) {
    if (kind != ExperimentKind::resolvent_sweep) throw ConfigInvalid("--strict-grid applies to resolvent only");
    p["strict_grid"] = true;
  }
  if (f.seed) j["seed"] = *f.seed;
  if (!f.out.empty()) j["out_dir"] = f.out;
  if (f.jobs > 0) j["jobs"] = f.jobs;
  else if (!j.contains("jobs")) j["jobs"] = std::max(1u, std::thread::hardware_concurrency());

  auto cfg = ExperimentConfig::from_json(j);
  if (f.nu) {
    // applied after validation so the profile defaults are already filled in
    json& q = cfg.params;
    switch (kind) {
      case ExperimentKind::resolvent_sweep:
      case ExperimentKind::oned_family: q["profile"] = with_nu(q["profile"], *f.nu); break;
      case ExperimentKind::quasimode_sweep:
        if (q["regime"] == "compact_t2") q["spec"]["nu"] = *f.nu;
        else q["spec"]["damping"] = with_nu(q["spec"]["damping"], *f.nu);
        break;
      case ExperimentKind::flow_classify:
        for (auto& pr : q["profiles"]) pr = with_nu(pr, *f.nu);
        break;
      default: throw ConfigInvalid("--nu does not apply here");
    }
    cfg.validate();
  }
  return cfg;
}

void print_summary(const RunRecord& r, const std::string& out_dir) {
  std::cout << r.kind << ": " << r.rows.size() << " samples, config " << r.config_hash.substr(0, 12)
            << ", cache " << r.cache_hits << " hit / " << r.cache_misses << " computed\n";
  for (const auto& f : r.fits) {
    std::cout << "  fit " << f.name << ": exponent " << f.exponent << " +- " << f.half_width << " (" << f.meaning
              << ")";
    if (f.target) std::cout << ", target " << f.target->describe() << (f.pass.value_or(false) ? " PASS" : " FAIL");
    std::cout << '\n';
  }
  for (const auto& c : r.checks)
    std::cout << "  check " << c.name << ": " << c.measured << " (" << c.target << ") " << (c.pass ? "PASS" : "FAIL")
              << '\n';
  for (const auto& e : r.errors) std::cout << "  error " << e << '\n';
  std::cout << "  wrote " << (fs::path(out_dir) / "report.json").string() << '\n';
}

SampleCache default_cache() {
  fs::path fallback;
  if (const char* home = std::getenv("HOME"); home && *home) fallback = fs::path(home) / ".cache" / "grushin";
  return SampleCache::from_env(fallback);
}

int run_experiment(ExperimentKind kind, const Flags& f) {
  auto cfg = build_config(kind, f);
  auto cache = default_cache();
  auto r = run(cfg, cache);
  write_outputs(r, cfg.out_dir);
  print_summary(r, cfg.out_dir);
  return r.pass.value_or(true) && r.errors.empty() ? 0 : 1;
}

int run_accept(const std::string& suite, const Flags& f) {
  std::vector<int> ids;
  if (!f.config.empty()) {
    auto cfg = build_config(ExperimentKind::acceptance_suite, f);
    ids = cfg.params["criteria"].get<std::vector<int>>();
  } else {
    ids = suite_criteria(suite.empty() ? "fast" : suite);
  }
  auto cache = default_cache();
  AcceptanceContext ctx;
  ctx.cache = &cache;
  ctx.jobs = f.jobs > 0 ? f.jobs : int(std::max(1u, std::thread::hardware_concurrency()));
  ctx.seed = f.seed.value_or(0);
  ctx.log = &std::cerr;
  std::vector<CriterionResult> rs;
  bool ok = true;
  for (int id : ids) {
    rs.push_back(run_criterion(id, ctx));
    ok = ok && rs.back().pass;
  }
  print_criteria_table(std::cout, rs);
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    json j = json::array();
    for (const auto& r : rs) j.push_back(r.to_json());
    std::ofstream out(fs::path(f.out) / "acceptance.json");
    if (!out) throw IOFailure("cannot write " + (fs::path(f.out) / "acceptance.json").string());
    out << j.dump(2) << '\n';
  }
  return ok ? 0 : 1;
}

int run_plot(const std::string& report, const std::string& out) {
  std::ifstream in(report);
  if (!in) throw IOFailure("cannot read " + report);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigInvalid("report is not valid JSON: " + std::string(e.what()));
  }
  auto r = RunRecord::from_json(j);
  std::string path = out.empty() ? (fs::path(report).parent_path() / "plot.svg").string() : out;
  if (!out.empty() && fs::is_directory(out)) path = (fs::path(out) / "plot.svg").string();
  emit_plot(r, path);
  std::cout << "wrote " << path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Damped Grushin-type operators: resolvent, quasimode and flow experiments"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s, bool sweep) {
    s->add_option("--config", f.config, "JSON experiment config");
    s->add_option("--out", f.out, "output directory");
    s->add_option("--jobs", f.jobs, "worker threads (default: logical cores)")->check(CLI::PositiveNumber);
    s->add_option("--seed", f.seed, "random seed");
    if (sweep) {
      s->add_option("--h-list", f.h_list, "comma-separated h values")->delimiter(',');
      s->add_option("--nu", f.nu, "vanishing order of the damping profile");
      s->add_option("--profile", f.profile, "damping profile name or JSON object");
    }
  };

  auto* res = app.add_subcommand("resolvent", "resolvent norm sweep over h");
  common(res, true);
  res->add_flag("--strict-grid", f.strict_grid, "fail on under-resolved grids instead of warning");
  auto* qm = app.add_subcommand("quasimode", "quasimode width sweep");
  common(qm, true);
  qm->add_option("--regime", f.regime, "outside_damping, within_damping_strip, within_damping_narrow, compact_t2");
  auto* od = app.add_subcommand("oned", "1D reduced resolvent family");
  common(od, true);
  auto* nf = app.add_subcommand("normalform", "normal-form residual order (--h-list sets the eps list)");
  common(nf, true);
  auto* fl = app.add_subcommand("flow", "EGCC/SGCC classification by flow averages");
  common(fl, true);
  std::string suite;
  auto* ac = app.add_subcommand("accept", "run an acceptance suite: fast, scaling or all");
  common(ac, false);
  ac->add_option("suite", suite, "builtin suite id");
  std::string report;
  std::string plot_out;
  auto* pl = app.add_subcommand("plot", "render plot.svg from a report.json");
  pl->add_option("report", report, "report.json")->required();
  pl->add_option("--out", plot_out, "SVG path or directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*res) return run_experiment(ExperimentKind::resolvent_sweep, f);
    if (*qm) return run_experiment(ExperimentKind::quasimode_sweep, f);
    if (*od) return run_experiment(ExperimentKind::oned_family, f);
    if (*nf) return run_experiment(ExperimentKind::normal_form_bench, f);
    if (*fl) return run_experiment(ExperimentKind::flow_classify, f);
    if (*ac) return run_accept(suite, f);
    if (*pl) return run_plot(report, plot_out);
  } catch (const ConfigInvalid& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
