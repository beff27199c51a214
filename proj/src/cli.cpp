#include "grushin/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "grushin/dynamics.hpp"
#include "grushin/normalform.hpp"
#include "grushin/quasimodes.hpp"
#include "grushin/resolvent.hpp"

namespace grushin {

namespace fs = std::filesystem;

// Bumped whenever a sample's computation changes meaning.
static const char* kCacheVersion = "1";

std::string canonical_json(const json& j) { return j.dump(); }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------- cache

SampleCache::SampleCache(fs::path dir) : dir_(std::move(dir)) {}

SampleCache SampleCache::from_env(const fs::path& fallback) {
  // set but empty disables the cache
  if (const char* e = std::getenv("GRUSHIN_CACHE_DIR")) return SampleCache(e);
  return SampleCache(fallback);
}

std::optional<json> SampleCache::get(const std::string& key) const {
  if (!enabled()) return std::nullopt;
  std::ifstream in(dir_ / key.substr(0, 2) / (key + ".json"));
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void SampleCache::put(const std::string& key, const json& value) {
  if (!enabled()) return;
  std::lock_guard<std::mutex> lk(write_mu_);
  fs::path d = dir_ / key.substr(0, 2);
  std::error_code ec;
  fs::create_directories(d, ec);
  fs::path tmp = d / (key + ".tmp"), dst = d / (key + ".json");
  {
    std::ofstream out(tmp);
    if (!out) throw IOFailure("cannot write cache entry " + tmp.string());
    out << value.dump();
    if (!out) throw IOFailure("cannot write cache entry " + tmp.string());
  }
  fs::rename(tmp, dst, ec);
  if (ec) throw IOFailure("cannot commit cache entry " + dst.string());
}

json SampleCache::get_or_compute(const json& sample_config, const std::function<json()>& compute) {
  const std::string key = sha256_hex(canonical_json({{"v", kCacheVersion}, {"sample", sample_config}}));
  if (auto hit = get(key)) {
    std::lock_guard<std::mutex> lk(count_mu_);
    ++hits_;
    return *hit;
  }
  json v = compute();
  put(key, v);
  std::lock_guard<std::mutex> lk(count_mu_);
  ++misses_;
  // the stored text round-trips, so a fresh value and a cached one compare equal
  return json::parse(v.dump());
}

// ---------------------------------------------------------------- config

std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::resolvent_sweep: return "resolvent_sweep";
    case ExperimentKind::quasimode_sweep: return "quasimode_sweep";
    case ExperimentKind::oned_family: return "oned_family";
    case ExperimentKind::normal_form_bench: return "normal_form_bench";
    case ExperimentKind::flow_classify: return "flow_classify";
    case ExperimentKind::acceptance_suite: return "acceptance_suite";
  }
  return "?";
}

ExperimentKind kind_from_name(const std::string& s) {
  for (auto k : {ExperimentKind::resolvent_sweep, ExperimentKind::quasimode_sweep, ExperimentKind::oned_family,
                 ExperimentKind::normal_form_bench, ExperimentKind::flow_classify, ExperimentKind::acceptance_suite})
    if (kind_name(k) == s) return k;
  throw ConfigInvalid("unknown experiment kind: " + s);
}

std::string SlopeTarget::describe() const {
  std::ostringstream o;
  if (min && max) o << "in [" << *min << ", " << *max << "]";
  else if (min) o << ">= " << *min;
  else if (max) o << "<= " << *max;
  else o << "any";
  return o.str();
}

json SlopeTarget::to_json() const {
  json j = json::object();
  if (min) j["min"] = *min;
  if (max) j["max"] = *max;
  return j;
}

std::optional<SlopeTarget> SlopeTarget::from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_object()) throw ConfigInvalid("target must be an object with min and/or max");
  SlopeTarget t;
  if (j.contains("min")) t.min = j.at("min").get<double>();
  if (j.contains("max")) t.max = j.at("max").get<double>();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "min" && it.key() != "max") throw ConfigInvalid("unknown target field: " + it.key());
  return t;
}

DampingProfile profile_from_spec(const json& j) {
  try {
    if (j.is_string()) {
      const std::string s = j.get<std::string>();
      if (s == "strip") return DampingProfile::strip(5, 1.0, 2.0);
      if (s == "finite_type") return DampingProfile::finite_type(6, 0.0, 2.5);
      if (s == "constant") return DampingProfile::constant(1.0);
      return DampingProfile::from_json({{"kind", s}});
    }
    if (!j.is_object()) throw ConfigInvalid("profile must be a name or an object");
    json k = j;
    const std::string kind = k.value("kind", "");
    if (kind == "strip") {
      if (!k.contains("nu")) k["nu"] = 5.0;
      if (!k.contains("y0")) k["y0"] = 1.0;
      if (!k.contains("rho")) k["rho"] = 2.0;
    } else if (kind == "finite_type") {
      if (!k.contains("nu")) k["nu"] = 6.0;
      if (!k.contains("rho")) k["rho"] = 2.5;
    }
    return DampingProfile::from_json(k);
  } catch (const ConfigError& e) {
    throw ConfigInvalid(e.what());
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("bad profile: ") + e.what());
  }
}

Potential potential_from_spec(const json& j) {
  try {
    if (j.is_string()) return Potential::from_json({{"kind", j.get<std::string>()}});
    return Potential::from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigInvalid(e.what());
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("bad potential: ") + e.what());
  }
}

namespace {

void check_keys(const json& p, std::initializer_list<const char*> allowed) {
  for (auto it = p.begin(); it != p.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigInvalid("unknown parameter: " + it.key());
  }
}

std::vector<double> positive_list(const json& p, const char* key) {
  std::vector<double> v;
  try {
    v = p.at(key).get<std::vector<double>>();
  } catch (const json::exception&) {
    throw ConfigInvalid(std::string(key) + " must be a list of numbers");
  }
  if (v.empty()) throw ConfigInvalid(std::string(key) + " is empty");
  for (double x : v)
    if (!(x > 0) || !std::isfinite(x)) throw ConfigInvalid(std::string(key) + " entries must be positive");
  return v;
}

template <class T>
T get_as(const json& p, const char* key) {
  try {
    return p.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid(std::string("bad value for ") + key);
  }
}

void set_default(json& p, const char* key, const json& v) {
  if (!p.contains(key)) p[key] = v;
}

}  // namespace

void ExperimentConfig::validate() {
  if (!params.is_object()) throw ConfigInvalid("params must be an object");
  if (jobs < 1) throw ConfigInvalid("jobs must be >= 1");
  json& p = params;
  switch (kind) {
    case ExperimentKind::resolvent_sweep: {
      check_keys(p, {"profile", "potential", "h_list", "beta_h", "c_x", "c_y", "strict_grid", "self_convergence"});
      set_default(p, "profile", "egcc_trig");
      set_default(p, "potential", "canonical");
      set_default(p, "h_list", {0.2, 0.14, 0.1, 0.07, 0.05});
      set_default(p, "beta_h", 0.0);
      set_default(p, "c_x", 8.0);
      set_default(p, "c_y", 4.0);
      set_default(p, "strict_grid", false);
      set_default(p, "self_convergence", false);
      p["profile"] = profile_from_spec(p["profile"]).to_json();
      p["potential"] = potential_from_spec(p["potential"]).to_json();
      positive_list(p, "h_list");
      get_as<double>(p, "beta_h");
      if (!(get_as<double>(p, "c_x") > 0) || !(get_as<double>(p, "c_y") > 0)) throw ConfigInvalid("c_x, c_y must be positive");
      get_as<bool>(p, "strict_grid");
      get_as<bool>(p, "self_convergence");
      break;
    }
    case ExperimentKind::quasimode_sweep: {
      check_keys(p, {"regime", "spec", "h_list", "k_list", "damped_mass_h4", "write_fields"});
      set_default(p, "regime", "outside_damping");
      const std::string reg = get_as<std::string>(p, "regime");
      set_default(p, "write_fields", false);
      get_as<bool>(p, "write_fields");
      if (reg == "compact_t2") {
        set_default(p, "spec", json::object());
        set_default(p, "k_list", {16, 23, 32, 45, 64, 90});
        set_default(p, "damped_mass_h4", false);
        try {
          p["spec"] = OneDQuasimodeSpec::from_json(p["spec"]).to_json();
          for (int k : p.at("k_list").get<std::vector<int>>())
            if (k < 1) throw ConfigInvalid("k_list entries must be >= 1");
        } catch (const json::exception& e) {
          throw ConfigInvalid(std::string("bad compact spec: ") + e.what());
        } catch (const ConfigError& e) {
          throw ConfigInvalid(e.what());
        }
        if (p.at("k_list").size() < 2) throw ConfigInvalid("k_list needs at least two entries");
      } else {
        QuasimodeRegime r;
        try {
          r = regime_from_name(reg);
        } catch (const std::exception&) {
          throw ConfigInvalid("unknown regime: " + reg);
        }
        if (!p.contains("spec")) {
          json s = json::object();
          s["regime"] = reg;
          if (r == QuasimodeRegime::outside_damping) {
            s["damping"] = DampingProfile::smooth_strip().to_json();
            s["y0"] = 0.0;
          } else if (r == QuasimodeRegime::within_damping_strip) {
            s["damping"] = DampingProfile::strip(5, 1.0, 2.0).to_json();
          } else {
            s["damping"] = DampingProfile::finite_type(6, 0.0, 2.5).to_json();
          }
          p["spec"] = s;
        }
        p["spec"]["regime"] = reg;
        if (p["spec"].contains("damping")) p["spec"]["damping"] = profile_from_spec(p["spec"]["damping"]).to_json();
        try {
          p["spec"] = SubellipticQuasimodeSpec::from_json(p["spec"]).to_json();
        } catch (const json::exception& e) {
          throw ConfigInvalid(std::string("bad quasimode spec: ") + e.what());
        } catch (const ConfigError& e) {
          throw ConfigInvalid(e.what());
        }
        if (r == QuasimodeRegime::within_damping_narrow) set_default(p, "h_list", {0.1, 0.07, 0.05, 0.04, 0.03});
        else set_default(p, "h_list", {0.1, 0.07, 0.05, 0.035, 0.025});
        set_default(p, "damped_mass_h4", r == QuasimodeRegime::outside_damping);
        positive_list(p, "h_list");
      }
      get_as<bool>(p, "damped_mass_h4");
      break;
    }
    case ExperimentKind::oned_family: {
      check_keys(p, {"profile", "a", "h_list", "count", "n"});
      set_default(p, "profile", "strip");
      set_default(p, "a", 0.0);
      set_default(p, "h_list", {0.05, 0.035, 0.025, 0.018, 0.013, 0.01});
      set_default(p, "count", 200);
      set_default(p, "n", 0);
      p["profile"] = profile_from_spec(p["profile"]).to_json();
      const auto d = profile_from_spec(p["profile"]);
      if (d.kind() != DampingProfile::Kind::strip && d.kind() != DampingProfile::Kind::finite_type)
        throw ConfigInvalid("1D family needs a strip or finite_type profile");
      positive_list(p, "h_list");
      get_as<double>(p, "a");
      if (get_as<int>(p, "count") < 2) throw ConfigInvalid("count must be >= 2");
      if (get_as<int>(p, "n") < 0) throw ConfigInvalid("n must be >= 0");
      break;
    }
    case ExperimentKind::normal_form_bench: {
      check_keys(p, {"N_list", "n", "seeds", "eps_list"});
      set_default(p, "N_list", {2, 3});
      set_default(p, "n", 10);
      set_default(p, "seeds", 20);
      set_default(p, "eps_list", {0.04, 0.02, 0.01, 0.005});
      for (int N : get_as<std::vector<int>>(p, "N_list"))
        if (N < 1) throw ConfigInvalid("N_list entries must be >= 1");
      if (get_as<int>(p, "n") < 2) throw ConfigInvalid("n must be >= 2");
      if (get_as<int>(p, "seeds") < 1) throw ConfigInvalid("seeds must be >= 1");
      if (positive_list(p, "eps_list").size() < 4) throw ConfigInvalid("eps_list needs at least four entries");
      break;
    }
    case ExperimentKind::flow_classify: {
      check_keys(p, {"profiles", "potential", "sample", "T", "eta_strata", "expect"});
      set_default(p, "profiles", {"egcc_bump", "smooth_strip"});
      set_default(p, "potential", "canonical");
      set_default(p, "sample", 100);
      set_default(p, "T", 100.0);
      set_default(p, "eta_strata", ControlOptions{}.eta_strata);
      set_default(p, "expect", json::array());
      json prof = json::array();
      for (const auto& q : p.at("profiles")) prof.push_back(profile_from_spec(q).to_json());
      if (prof.empty()) throw ConfigInvalid("profiles is empty");
      p["profiles"] = prof;
      p["potential"] = potential_from_spec(p["potential"]).to_json();
      if (get_as<int>(p, "sample") < 100) throw ConfigInvalid("sample must be >= 100");
      if (!(get_as<double>(p, "T") > 0)) throw ConfigInvalid("T must be positive");
      get_as<std::vector<double>>(p, "eta_strata");
      const auto& ex = p.at("expect");
      if (!ex.is_array() || (!ex.empty() && ex.size() != prof.size()))
        throw ConfigInvalid("expect must list one {egcc, sgcc} object per profile");
      for (const auto& e : ex)
        if (!e.is_object() || !e.contains("egcc") || !e.contains("sgcc")) throw ConfigInvalid("bad expect entry");
      break;
    }
    case ExperimentKind::acceptance_suite: {
      check_keys(p, {"suite", "criteria"});
      if (p.contains("criteria")) {
        for (int c : get_as<std::vector<int>>(p, "criteria"))
          if (c < 1 || c > 8) throw ConfigInvalid("criteria ids run from 1 to 8");
      } else {
        set_default(p, "suite", "fast");
        p["criteria"] = suite_criteria(get_as<std::string>(p, "suite"));
      }
      break;
    }
  }
}

json ExperimentConfig::to_json() const {
  json j{{"kind", kind_name(kind)}, {"params", params}, {"seed", seed}};
  if (target) j["target"] = target->to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigInvalid("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"kind", "params", "target", "seed", "out_dir", "jobs"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known))
      throw ConfigInvalid("unknown config field: " + it.key());
  }
  ExperimentConfig c;
  if (!j.contains("kind")) throw ConfigInvalid("config needs a kind");
  c.kind = kind_from_name(get_as<std::string>(j, "kind"));
  c.params = j.value("params", json::object());
  if (j.contains("target")) c.target = SlopeTarget::from_json(j.at("target"));
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("out_dir")) c.out_dir = get_as<std::string>(j, "out_dir");
  if (j.contains("jobs")) c.jobs = get_as<int>(j, "jobs");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigInvalid("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

// ---------------------------------------------------------------- records

json FitSummary::to_json() const {
  json j{{"name", name},         {"exponent", exponent}, {"half_width", half_width},
         {"intercept", intercept}, {"samples", samples},  {"meaning", meaning},
         {"h", h},               {"value", value}};
  if (target) j["target"] = target->to_json();
  if (pass) j["pass"] = *pass;
  return j;
}

json RunRecord::reproducible_json() const {
  json f = json::array(), c = json::array();
  for (const auto& x : fits) f.push_back(x.to_json());
  for (const auto& x : checks) c.push_back(x.to_json());
  json j{{"config_hash", config_hash}, {"kind", kind}, {"config", config}, {"columns", columns},
         {"rows", rows},               {"fits", f},    {"checks", c},       {"errors", errors}};
  if (pass) j["pass"] = *pass;
  return j;
}

json RunRecord::to_json() const {
  json j = reproducible_json();
  j["run"] = {{"started_at", started_at}, {"wall_ms", wall_ms}, {"cache_hits", cache_hits},
              {"cache_misses", cache_misses}};
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  try {
    r.config_hash = j.value("config_hash", "");
    r.kind = j.at("kind").get<std::string>();
    r.config = j.value("config", json::object());
    r.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& row : j.at("rows")) r.rows.push_back(row);
    for (const auto& f : j.value("fits", json::array())) {
      FitSummary s;
      s.name = f.at("name");
      s.exponent = f.at("exponent");
      s.half_width = f.value("half_width", 0.0);
      s.intercept = f.value("intercept", 0.0);
      s.samples = f.value("samples", 0);
      s.meaning = f.value("meaning", "");
      s.h = f.at("h").get<std::vector<double>>();
      s.value = f.at("value").get<std::vector<double>>();
      if (f.contains("target")) s.target = SlopeTarget::from_json(f.at("target"));
      if (f.contains("pass")) s.pass = f.at("pass").get<bool>();
      r.fits.push_back(s);
    }
    for (const auto& c : j.value("checks", json::array()))
      r.checks.push_back({c.at("name"), c.at("target"), c.at("measured"), c.at("pass")});
    r.errors = j.value("errors", std::vector<std::string>{});
    if (j.contains("pass")) r.pass = j.at("pass").get<bool>();
    if (j.contains("run")) {
      const auto& m = j.at("run");
      r.started_at = m.value("started_at", "");
      r.wall_ms = m.value("wall_ms", 0.0);
      r.cache_hits = m.value("cache_hits", 0);
      r.cache_misses = m.value("cache_misses", 0);
    }
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("not a run record: ") + e.what());
  }
  return r;
}

const std::vector<std::string>& csv_columns(ExperimentKind k) {
  static const std::vector<std::string> res = {"case_id", "h",       "beta_h", "n_x",     "n_y",
                                               "norm",    "sigma_min", "iters", "wall_ms", "converged"};
  static const std::vector<std::string> qm = {"case_id",      "regime",       "h",   "beta_h", "residual",
                                              "damped_mass",  "concentration", "upsilon_mass", "n_x",
                                              "n_y",          "wall_ms"};
  static const std::vector<std::string> od = {"case_id", "h", "sup_norm", "argmax_E", "n", "wall_ms"};
  static const std::vector<std::string> nf = {"case_id", "N", "seed", "eps", "residual", "wall_ms"};
  static const std::vector<std::string> fl = {"case_id",       "profile", "egcc_min_average", "sgcc_min_average",
                                              "samples",       "T",       "short_windows",    "near_critical",
                                              "wall_ms"};
  static const std::vector<std::string> ac = {"case_id", "criterion", "target", "measured", "pass", "wall_ms"};
  switch (k) {
    case ExperimentKind::resolvent_sweep: return res;
    case ExperimentKind::quasimode_sweep: return qm;
    case ExperimentKind::oned_family: return od;
    case ExperimentKind::normal_form_bench: return nf;
    case ExperimentKind::flow_classify: return fl;
    case ExperimentKind::acceptance_suite: return ac;
  }
  return res;
}

namespace {

std::string csv_cell(const json& v) {
  if (v.is_null()) return "nan";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return csv_cell(json(v.dump()));
}

double num(const json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end() || !it->is_number()) return std::numeric_limits<double>::quiet_NaN();
  return it->get<double>();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string now_iso() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Runs f(i) for i < n on `jobs` threads; f must only write its own slot.
void parallel_for(int n, int jobs, const std::function<void(int)>& f) {
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) f(i);
  };
  std::vector<std::thread> th;
  for (int t = 1; t < std::min(jobs, n); ++t) th.emplace_back(work);
  work();
  for (auto& t : th) t.join();
}

// Fit of value ~ h^{sign * exponent}; rows without finite positive values are skipped.
std::optional<FitSummary> fit_rows(const std::string& name, const std::vector<json>& rows, const char* hkey,
                                   const char* vkey, bool width, std::optional<SlopeTarget> target) {
  FitSummary s;
  s.name = name;
  for (const auto& r : rows) {
    double h = num(r, hkey), v = num(r, vkey);
    if (std::isfinite(h) && std::isfinite(v) && h > 0 && v > 0) {
      s.h.push_back(h);
      s.value.push_back(v);
    }
  }
  if (s.h.size() < 2) return std::nullopt;
  auto f = fit_exponent(s.h, s.value, 2);
  // log value = intercept + slope log(1/h)
  s.exponent = width ? -f.slope : f.slope;
  s.half_width = f.half_width;
  s.intercept = f.intercept;
  s.samples = int(s.h.size());
  s.meaning = width ? std::string(vkey) + " ~ C h^exponent" : std::string(vkey) + " ~ C h^-exponent";
  s.target = target;
  if (target) s.pass = target->contains(s.exponent);
  return s;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

// ---------------------------------------------------------------- sweeps

json resolvent_row(const json& p, double h, int idx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = profile_from_spec(p["profile"]);
  const auto pot = potential_from_spec(p["potential"]);
  const double beta = p["beta_h"].get<double>();
  AssembleOptions ao;
  ao.strict = p["strict_grid"].get<bool>();
  ao.quiet = true;
  const cplx zeta(1.0, h * beta);
  auto grid = default_grid(h, p["c_x"].get<double>(), p["c_y"].get<double>());
  auto op = SemiclassicalOperator::assemble(h, pot, d, grid, zeta, ao);
  auto s = resolvent_norm(op);
  json row{{"case_id", idx},        {"h", h},
           {"beta_h", beta},        {"n_x", s.n_x},
           {"n_y", s.n_y},          {"norm", finite_or_null(s.norm)},
           {"sigma_min", finite_or_null(s.sigma_min)},
           {"iters", s.iters},      {"converged", s.converged},
           {"method", s.method},    {"sector", s.sector},
           {"certificate_rel", s.certificate_rel}};
  if (!s.error.empty()) row["error"] = s.error;
  if (p["self_convergence"].get<bool>()) {
    auto g2 = default_grid(h, p["c_x"].get<double>(), 2 * p["c_y"].get<double>());
    auto op2 = SemiclassicalOperator::assemble(h, pot, d, g2, zeta, ao);
    auto s2 = resolvent_norm(op2);
    double rel = std::abs(s2.norm - s.norm) / s.norm;
    row["refined_norm"] = finite_or_null(s2.norm);
    row["refined_n_y"] = s2.n_y;
    row["self_convergence_rel"] = finite_or_null(rel);
    row["self_convergence_pass"] = s2.converged && rel < 0.02;
  }
  row["wall_ms"] = ms_since(t0);
  return row;
}

json quasimode_row(const json& p, double h, int idx, const std::string& field_path) {
  const auto t0 = std::chrono::steady_clock::now();
  auto spec = SubellipticQuasimodeSpec::from_json(p["spec"]);
  auto q = build_subelliptic_quasimode(spec, h);
  if (!field_path.empty()) write_field(q.psi, field_path, q.report.to_json());
  const auto& r = q.report;
  return {{"case_id", idx},
          {"regime", r.regime},
          {"h", h},
          {"beta_h", r.beta_h},
          {"residual", r.residual},
          {"damped_mass", r.damped_mass},
          {"concentration", r.concentration},
          {"upsilon_mass", r.upsilon_mass},
          {"n_x", r.n_x},
          {"n_y", r.n_y},
          {"norm_error", r.norm_error},
          {"wall_ms", ms_since(t0)}};
}

json compact_row(const json& p, int k, int idx, const std::string& field_path) {
  const auto t0 = std::chrono::steady_clock::now();
  auto spec = OneDQuasimodeSpec::from_json(p["spec"]);
  spec.k = k;
  auto q = build_t2_quasimode(spec);
  if (!field_path.empty()) write_field(q.u, field_path, q.report.to_json());
  const auto& r = q.report;
  return {{"case_id", idx},
          {"regime", "compact_t2"},
          {"h", r.h},
          {"beta_h", 0.0},
          {"residual", r.residual},
          {"damped_mass", nullptr},
          {"concentration", nullptr},
          {"upsilon_mass", nullptr},
          {"n_x", q.u.grid.n_x},
          {"n_y", q.u.grid.n_y},
          {"k", k},
          {"raw_norm", r.raw_norm},
          {"dy1", r.dy1},
          {"dy2", r.dy2},
          {"bprime_dy", r.bprime_dy},
          {"junction_defect", r.junction_defect},
          {"compat_distance", r.compat_distance},
          {"wall_ms", ms_since(t0)}};
}

json oned_row(const json& p, double h, int idx) {
  const auto t0 = std::chrono::steady_clock::now();
  auto d = profile_from_spec(p["profile"]);
  int n = p["n"].get<int>();
  auto s = oned_sup_norm(h, d, p["a"].get<double>(), p["count"].get<int>(), n);
  return {{"case_id", idx},
          {"h", h},
          {"sup_norm", s.sup_norm},
          {"argmax_E", s.argmax_E},
          {"n", n > 0 ? n : oned_grid_size(h)},
          {"wall_ms", ms_since(t0)}};
}

Eigen::MatrixXcd random_hermitian(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXcd A(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double re = nd(rng), im = nd(rng);
      A(a, b) = cplx(re, im);
    }
  return (A + A.adjoint()) / 2.0;
}

// Residuals over the eps list for one (N, seed); D = 1, 3, 5, ...
std::vector<json> normal_form_rows(int N, int n, std::uint64_t seed, const std::vector<double>& eps) {
  std::mt19937_64 rng(seed);
  VecR D(n);
  for (int k = 0; k < n; ++k) D(k) = 2 * k + 1;
  std::vector<Eigen::MatrixXcd> As;
  for (int j = 0; j < N; ++j) As.push_back(random_hermitian(n, rng));
  std::vector<json> rows;
  for (double e : eps) {
    const auto t0 = std::chrono::steady_clock::now();
    double r = finite_dim_average(D, As, e, N).residual;
    rows.push_back({{"N", N}, {"seed", seed}, {"eps", e}, {"residual", r}, {"wall_ms", ms_since(t0)}});
  }
  return rows;
}

json flow_row(const json& p, const json& prof, int idx) {
  const auto t0 = std::chrono::steady_clock::now();
  auto d = profile_from_spec(prof);
  auto pot = potential_from_spec(p["potential"]);
  ControlOptions o;
  o.sample = p["sample"].get<int>();
  o.T = p["T"].get<double>();
  o.eta_strata = p["eta_strata"].get<std::vector<double>>();
  auto r = classify_control(d, pot, o);
  return {{"case_id", idx},
          {"profile", d.kind_name()},
          {"egcc_min_average", r.egcc_min_average},
          {"sgcc_min_average", r.sgcc_min_average},
          {"samples", r.samples},
          {"T", r.T},
          {"short_windows", r.short_windows},
          {"near_critical", r.near_critical},
          {"report", r.to_json()},
          {"wall_ms", ms_since(t0)}};
}

void finalize_pass(RunRecord& r) {
  bool any = !r.checks.empty();
  bool ok = r.errors.empty();
  for (const auto& f : r.fits)
    if (f.pass) {
      any = true;
      ok = ok && *f.pass;
    }
  for (const auto& c : r.checks) ok = ok && c.pass;
  if (any) r.pass = ok;
}

}  // namespace

void write_csv(std::ostream& out, const RunRecord& r) {
  for (std::size_t c = 0; c < r.columns.size(); ++c) out << (c ? "," : "") << r.columns[c];
  out << '\n';
  for (const auto& row : r.rows) {
    for (std::size_t c = 0; c < r.columns.size(); ++c) {
      auto it = row.find(r.columns[c]);
      out << (c ? "," : "") << (it == row.end() ? std::string("nan") : csv_cell(*it));
    }
    out << '\n';
  }
}

RunRecord run(const ExperimentConfig& cfg_in, SampleCache& cache) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int hits0 = cache.hits(), miss0 = cache.misses();
  RunRecord r;
  r.started_at = now_iso();
  r.config = cfg.to_json();
  r.config_hash = cfg.hash();
  r.kind = kind_name(cfg.kind);
  r.columns = csv_columns(cfg.kind);
  const json& p = cfg.params;

  // Runs sample i through the cache; failures leave a row with an error field.
  auto sampled = [&](int n, const std::function<json(int)>& key, const std::function<json(int)>& compute) {
    std::vector<json> rows(n);
    std::vector<std::string> errs(n);
    parallel_for(n, cfg.jobs, [&](int i) {
      try {
        rows[i] = cache.get_or_compute(key(i), [&] { return compute(i); });
      } catch (const std::exception& e) {
        errs[i] = e.what();
        rows[i] = {{"case_id", i}, {"error", e.what()}};
      }
    });
    for (int i = 0; i < n; ++i)
      if (!errs[i].empty()) r.errors.push_back("case " + std::to_string(i) + ": " + errs[i]);
    return rows;
  };

  switch (cfg.kind) {
    case ExperimentKind::resolvent_sweep: {
      auto hs = p["h_list"].get<std::vector<double>>();
      json base = p;
      base.erase("h_list");
      r.rows = sampled(
          int(hs.size()), [&](int i) { return json{{"kind", "resolvent"}, {"params", base}, {"h", hs[i]}}; },
          [&](int i) { return resolvent_row(p, hs[i], i); });
      for (int i = 0; i < int(r.rows.size()); ++i) r.rows[i]["case_id"] = i;
      if (auto f = fit_rows("norm", r.rows, "h", "norm", false, cfg.target)) r.fits.push_back(*f);
      const auto d = profile_from_spec(p["profile"]);
      if (d.kind() == DampingProfile::Kind::constant && d.value() > 0) {
        bool ok = true;
        double worst = 0;
        for (const auto& row : r.rows) {
          double h = num(row, "h"), v = num(row, "norm");
          double ratio = v * h * d.value();
          worst = std::max(worst, std::isfinite(ratio) ? ratio : INFINITY);
          ok = ok && std::isfinite(ratio) && ratio <= 1.0 + 1e-8;
        }
        r.checks.push_back({"norm <= 1/(h c)", "max norm*h*c <= 1", fmt(worst, 10), ok});
      }
      if (p["self_convergence"].get<bool>()) {
        bool ok = true;
        double worst = 0;
        for (const auto& row : r.rows) {
          ok = ok && row.value("self_convergence_pass", false);
          worst = std::max(worst, num(row, "self_convergence_rel"));
        }
        r.checks.push_back({"self-convergence (n_y doubled)", "rel change < 0.02 at every h", fmt(worst), ok});
      }
      bool conv = true;
      for (const auto& row : r.rows) conv = conv && row.value("converged", false);
      r.checks.push_back({"sigma_min converged", "all samples", conv ? "all" : "some failed", conv});
      break;
    }
    case ExperimentKind::quasimode_sweep: {
      const std::string reg = p["regime"];
      const bool fields = p["write_fields"].get<bool>();
      auto field_path = [&](int i) {
        if (!fields) return std::string();
        fs::create_directories(fs::path(cfg.out_dir) / "fields");
        return (fs::path(cfg.out_dir) / "fields" / ("case" + std::to_string(i) + ".c64")).string();
      };
      // a requested field file forces a recomputation when it is missing
      auto with_fields = [&](int i, const json& key, const std::function<json()>& compute) {
        std::string fp = field_path(i);
        if (!fp.empty() && !fs::exists(fp)) {
          json v = compute();
          return json::parse(v.dump());
        }
        return cache.get_or_compute(key, compute);
      };
      json base = p;
      base.erase("h_list");
      base.erase("k_list");
      base.erase("write_fields");
      int n = 0;
      std::vector<json> rows;
      std::vector<std::string> errs;
      if (reg == "compact_t2") {
        auto ks = p["k_list"].get<std::vector<int>>();
        n = int(ks.size());
        rows.resize(n);
        errs.resize(n);
        parallel_for(n, cfg.jobs, [&](int i) {
          try {
            json key{{"kind", "quasimode"}, {"params", base}, {"k", ks[i]}};
            rows[i] = with_fields(i, key, [&] { return compact_row(p, ks[i], i, field_path(i)); });
          } catch (const std::exception& e) {
            errs[i] = e.what();
            rows[i] = {{"case_id", i}, {"error", e.what()}};
          }
        });
      } else {
        auto hs = p["h_list"].get<std::vector<double>>();
        n = int(hs.size());
        rows.resize(n);
        errs.resize(n);
        parallel_for(n, cfg.jobs, [&](int i) {
          try {
            json key{{"kind", "quasimode"}, {"params", base}, {"h", hs[i]}};
            rows[i] = with_fields(i, key, [&] { return quasimode_row(p, hs[i], i, field_path(i)); });
          } catch (const std::exception& e) {
            errs[i] = e.what();
            rows[i] = {{"case_id", i}, {"error", e.what()}};
          }
        });
      }
      for (int i = 0; i < n; ++i) {
        rows[i]["case_id"] = i;
        if (!errs[i].empty()) r.errors.push_back("case " + std::to_string(i) + ": " + errs[i]);
      }
      r.rows = std::move(rows);
      if (auto f = fit_rows("residual", r.rows, "h", "residual", true, cfg.target)) r.fits.push_back(*f);
      if (p["damped_mass_h4"].get<bool>()) {
        bool ok = true;
        double worst = 0;
        for (const auto& row : r.rows) {
          double h = num(row, "h"), m = num(row, "damped_mass");
          double ratio = m / std::pow(h, 4);
          worst = std::max(worst, std::isfinite(ratio) ? ratio : INFINITY);
          ok = ok && std::isfinite(ratio) && ratio <= 1.0;
        }
        r.checks.push_back({"damped mass <= h^4", "max mass/h^4 <= 1", fmt(worst), ok});
      }
      break;
    }
    case ExperimentKind::oned_family: {
      auto hs = p["h_list"].get<std::vector<double>>();
      json base = p;
      base.erase("h_list");
      r.rows = sampled(
          int(hs.size()), [&](int i) { return json{{"kind", "oned"}, {"params", base}, {"h", hs[i]}}; },
          [&](int i) { return oned_row(p, hs[i], i); });
      for (int i = 0; i < int(r.rows.size()); ++i) r.rows[i]["case_id"] = i;
      if (auto f = fit_rows("sup_norm", r.rows, "h", "sup_norm", false, cfg.target)) r.fits.push_back(*f);
      break;
    }
    case ExperimentKind::normal_form_bench: {
      auto Ns = p["N_list"].get<std::vector<int>>();
      const int n = p["n"].get<int>(), seeds = p["seeds"].get<int>();
      auto eps = p["eps_list"].get<std::vector<double>>();
      std::vector<std::pair<int, std::uint64_t>> cases;
      for (int N : Ns)
        for (int s = 0; s < seeds; ++s) cases.push_back({N, cfg.seed + std::uint64_t(s)});
      auto blocks = sampled(
          int(cases.size()),
          [&](int i) {
            return json{{"kind", "normalform"}, {"N", cases[i].first}, {"n", n}, {"seed", cases[i].second},
                        {"eps", eps}};
          },
          [&](int i) { return json(normal_form_rows(cases[i].first, n, cases[i].second, eps)); });
      int id = 0;
      for (std::size_t c = 0; c < cases.size(); ++c) {
        if (!blocks[c].is_array()) continue;
        std::vector<json> rows;
        for (auto row : blocks[c]) {
          row["case_id"] = id++;
          rows.push_back(row);
          r.rows.push_back(row);
        }
        const int N = cases[c].first;
        SlopeTarget t{N + 0.7, N + 1.3};
        if (cfg.target) t = *cfg.target;
        auto f = fit_rows("residual N=" + std::to_string(N) + " seed=" + std::to_string(cases[c].second), rows,
                          "eps", "residual", true, t);
        if (f) {
          f->meaning = "residual ~ C eps^exponent";
          r.fits.push_back(*f);
        }
      }
      break;
    }
    case ExperimentKind::flow_classify: {
      const auto& profs = p["profiles"];
      r.rows = sampled(
          int(profs.size()),
          [&](int i) {
            return json{{"kind", "flow"}, {"profile", profs[i]}, {"potential", p["potential"]},
                        {"sample", p["sample"]}, {"T", p["T"]}, {"eta_strata", p["eta_strata"]}};
          },
          [&](int i) { return flow_row(p, profs[i], i); });
      for (int i = 0; i < int(r.rows.size()); ++i) r.rows[i]["case_id"] = i;
      const auto& ex = p["expect"];
      for (std::size_t i = 0; i < ex.size() && i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        for (const char* cond : {"egcc", "sgcc"}) {
          const std::string col = std::string(cond) + "_min_average";
          double v = num(row, col.c_str());
          bool holds = std::isfinite(v) && v > 1e-8;
          bool want = ex[i][cond].get<bool>();
          r.checks.push_back({profile_from_spec(profs[i]).kind_name() + " " + cond,
                              want ? "min average > 1e-8" : "min average <= 1e-8", fmt(v), holds == want});
        }
      }
      break;
    }
    case ExperimentKind::acceptance_suite: {
      auto ids = p["criteria"].get<std::vector<int>>();
      AcceptanceContext ctx;
      ctx.cache = &cache;
      ctx.jobs = cfg.jobs;
      ctx.seed = cfg.seed;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto c = run_criterion(ids[i], ctx);
        r.rows.push_back({{"case_id", int(i)},     {"criterion", c.id},   {"target", c.target},
                          {"measured", c.measured}, {"pass", c.pass},     {"wall_ms", c.wall_ms},
                          {"name", c.name},         {"details", c.details}});
        r.checks.push_back({"criterion " + std::to_string(c.id) + ": " + c.name, c.target, c.measured, c.pass});
      }
      break;
    }
  }
  finalize_pass(r);
  r.wall_ms = ms_since(t0);
  r.cache_hits = cache.hits() - hits0;
  r.cache_misses = cache.misses() - miss0;
  return r;
}

void write_outputs(const RunRecord& r, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IOFailure("cannot create " + out_dir);
  {
    std::ofstream out(fs::path(out_dir) / (r.kind + ".csv"));
    if (!out) throw IOFailure("cannot write CSV in " + out_dir);
    write_csv(out, r);
  }
  {
    std::ofstream out(fs::path(out_dir) / "report.json");
    if (!out) throw IOFailure("cannot write report in " + out_dir);
    out << r.to_json().dump(2) << '\n';
  }
  if (!r.fits.empty() && r.fits.front().samples >= 2) emit_plot(r, (fs::path(out_dir) / "plot.svg").string());
  if (r.kind == kind_name(ExperimentKind::flow_classify)) {
    // trajectory through each EGCC minimizer, for inspection
    const auto pot = potential_from_spec(r.config["params"]["potential"]);
    for (const auto& row : r.rows) {
      if (!row.contains("report")) continue;
      const auto& a = row["report"]["egcc_argmin"];
      PhasePoint s{a["x"], a["y"], a["xi"], a["eta"]};
      if (!(s.energy(pot) > 0)) continue;
      const double T = row["T"].get<double>();
      const double dt = max_flow_step(s.eta);
      const int every = std::max(1, int(std::ceil(T / dt / 2000)));
      auto tr = flow_elliptic(s, pot, T, dt, {.sample_every = every});
      const auto d = profile_from_spec(r.config["params"]["profiles"][row["case_id"].get<int>()]);
      std::ofstream out(fs::path(out_dir) / ("argmin_" + std::to_string(row["case_id"].get<int>()) + "_" + row["profile"].get<std::string>() + ".csv"));
      if (!out) throw IOFailure("cannot write trajectory CSV in " + out_dir);
      write_trajectory_csv(out, tr, pot, d);
    }
  }
}

// ---------------------------------------------------------------- plot

std::string render_plot(const RunRecord& r) {
  if (r.fits.empty() || r.fits.front().h.size() < 2) throw std::invalid_argument("plot needs at least two samples");
  const FitSummary& f = r.fits.front();
  const int n = int(f.h.size());
  std::vector<double> X(n), Y(n);
  for (int i = 0; i < n; ++i) {
    X[i] = std::log(1.0 / f.h[i]);
    Y[i] = std::log(f.value[i]);
  }
  // slope in (log 1/h, log value) coordinates
  const bool width = f.meaning.find("h^exponent") != std::string::npos || f.meaning.find("eps^exponent") != std::string::npos;
  const double raw = width ? -f.exponent : f.exponent;
  double x0 = *std::min_element(X.begin(), X.end()), x1 = *std::max_element(X.begin(), X.end());
  double y0 = *std::min_element(Y.begin(), Y.end()), y1 = *std::max_element(Y.begin(), Y.end());
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double px = 0.08 * (x1 - x0), py = 0.12 * (y1 - y0);
  x0 -= px;
  x1 += px;
  y0 -= py;
  y1 += py;
  const double W = 640, H = 480, L = 70, R = 20, T = 40, B = 60;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto f2 = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  auto f3 = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", v);
    return std::string(b);
  };
  // clip a line y = a + s x to the box
  auto segment = [&](double a, double s, const std::string& style) {
    double xa = x0, xb = x1;
    auto clipx = [&](double yv) { return std::abs(s) < 1e-300 ? x0 : (yv - a) / s; };
    if (std::abs(s) > 1e-300) {
      double lo = std::min(clipx(y0), clipx(y1)), hi = std::max(clipx(y0), clipx(y1));
      xa = std::max(xa, lo);
      xb = std::min(xb, hi);
    }
    if (xb <= xa) return std::string();
    return "<line x1=\"" + f2(sx(xa)) + "\" y1=\"" + f2(sy(a + s * xa)) + "\" x2=\"" + f2(sx(xb)) + "\" y2=\"" +
           f2(sy(a + s * xb)) + "\" " + style + "/>\n";
  };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  o << "<rect x=\"" << f2(L) << "\" y=\"" << f2(T) << "\" width=\"" << f2(W - L - R) << "\" height=\""
    << f2(H - T - B) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double xv = x0 + k * (x1 - x0) / 4, yv = y0 + k * (y1 - y0) / 4;
    o << "<text x=\"" << f2(sx(xv)) << "\" y=\"" << f2(H - B + 18) << "\" font-size=\"11\" text-anchor=\"middle\">"
      << f3(xv) << "</text>\n";
    o << "<text x=\"" << f2(L - 6) << "\" y=\"" << f2(sy(yv) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
      << f3(yv) << "</text>\n";
  }
  o << "<text x=\"" << f2((L + W - R) / 2) << "\" y=\"" << f2(H - 15)
    << "\" font-size=\"13\" text-anchor=\"middle\">log(1/h)</text>\n";
  o << "<text x=\"15\" y=\"" << f2((T + H - B) / 2) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
    << f2((T + H - B) / 2) << ")\">log(" << f.name.substr(0, f.name.find(' ')) << ")</text>\n";
  o << "<text x=\"" << f2(L) << "\" y=\"25\" font-size=\"13\">" << r.kind << ": fitted exponent " << f3(f.exponent)
    << "</text>\n";
  o << segment(f.intercept, raw, "stroke=\"#1f5fbf\" stroke-width=\"1.5\"");
  if (f.target && (f.target->min || f.target->max)) {
    double t = f.target->min ? *f.target->min : *f.target->max;
    double ts = width ? -t : t;
    // guide through the first data point
    o << segment(Y[0] - ts * X[0], ts, "stroke=\"#999999\" stroke-dasharray=\"6 4\"");
  }
  for (int i = 0; i < n; ++i)
    o << "<circle cx=\"" << f2(sx(X[i])) << "\" cy=\"" << f2(sy(Y[i])) << "\" r=\"3.5\" fill=\"#bf3f1f\"/>\n";
  o << "</svg>\n";
  return o.str();
}

void emit_plot(const RunRecord& r, const std::string& path) {
  std::string svg = render_plot(r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write plot " + path);
  out << svg;
  if (!out) throw IOFailure("cannot write plot " + path);
}

}  // namespace grushin
