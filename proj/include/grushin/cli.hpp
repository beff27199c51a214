// Experiment harness: configs, sample cache, sweeps, CSV/JSON/SVG output, acceptance suites.
#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "grushin/core.hpp"

namespace grushin {

struct ConfigInvalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IOFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sorted keys, shortest round-trip numbers, no whitespace.
std::string canonical_json(const json& j);
std::string sha256_hex(const std::string& bytes);

// One JSON file per sample under dir/<k0k1>/<key>.json. Reads take no lock;
// writes go through a temp file and rename under a mutex.
class SampleCache {
 public:
  SampleCache() = default;  // disabled
  explicit SampleCache(std::filesystem::path dir);
  // GRUSHIN_CACHE_DIR if set (an empty value disables the cache), else `fallback`.
  static SampleCache from_env(const std::filesystem::path& fallback = {});

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }
  std::optional<json> get(const std::string& key) const;
  void put(const std::string& key, const json& value);
  // Looks key up, else computes, stores and returns.
  json get_or_compute(const json& sample_config, const std::function<json()>& compute);

  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::filesystem::path dir_;
  std::mutex write_mu_;
  mutable std::mutex count_mu_;
  mutable int hits_ = 0, misses_ = 0;
};

enum class ExperimentKind {
  resolvent_sweep,
  quasimode_sweep,
  oned_family,
  normal_form_bench,
  flow_classify,
  acceptance_suite
};
std::string kind_name(ExperimentKind k);
ExperimentKind kind_from_name(const std::string& s);

// Declared pass/fail target on a fitted exponent.
struct SlopeTarget {
  std::optional<double> min, max;
  bool contains(double s) const { return (!min || s >= *min) && (!max || s <= *max); }
  std::string describe() const;
  json to_json() const;
  static std::optional<SlopeTarget> from_json(const json& j);
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::resolvent_sweep;
  json params = json::object();  // kind-specific, defaults filled in by validate()
  std::optional<SlopeTarget> target;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int jobs = 1;

  // Fills defaults and checks types and ranges; throws ConfigInvalid.
  void validate();
  // Everything that affects results (not out_dir or jobs).
  json to_json() const;
  std::string hash() const { return sha256_hex(canonical_json(to_json())); }
  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::string& path);
};

// Profile and potential shorthands used by configs and flags.
DampingProfile profile_from_spec(const json& j);
Potential potential_from_spec(const json& j);

struct FitSummary {
  std::string name;
  double exponent = 0.0;    // sign convention stated in `meaning`
  double half_width = 0.0;
  double intercept = 0.0;
  int samples = 0;
  std::string meaning;
  std::vector<double> h, value;  // fitted points
  std::optional<SlopeTarget> target;
  std::optional<bool> pass;
  json to_json() const;
};

struct CheckResult {
  std::string name;
  std::string target;
  std::string measured;
  bool pass = false;
  json to_json() const { return {{"name", name}, {"target", target}, {"measured", measured}, {"pass", pass}}; }
};

struct RunRecord {
  std::string config_hash;
  std::string kind;
  json config;
  std::vector<std::string> columns;
  std::vector<json> rows;  // objects keyed by column
  std::vector<FitSummary> fits;
  std::vector<CheckResult> checks;
  std::vector<std::string> errors;  // per-sample failures; the run continues past them
  std::optional<bool> pass;         // set when targets or checks exist
  // Run metadata; excluded from reproducibility comparisons.
  std::string started_at;
  double wall_ms = 0.0;
  int cache_hits = 0, cache_misses = 0;

  json to_json() const;
  static RunRecord from_json(const json& j);
  // to_json() without the run metadata block.
  json reproducible_json() const;
};

// Fixed column set per experiment kind.
const std::vector<std::string>& csv_columns(ExperimentKind k);
// Header plus one line per row; numbers with 17 significant digits.
void write_csv(std::ostream& out, const RunRecord& r);

// Dispatches to the module sweep; per-sample errors are recorded, not thrown.
RunRecord run(const ExperimentConfig& cfg, SampleCache& cache);
// CSV, report.json and (with >= 2 samples) plot.svg under cfg.out_dir.
void write_outputs(const RunRecord& r, const std::string& out_dir);

// Deterministic log-log SVG of the first fit: points, fitted line, target-slope guide.
// Throws std::invalid_argument with fewer than two samples (no file is written).
std::string render_plot(const RunRecord& r);
void emit_plot(const RunRecord& r, const std::string& path);

// ---------------------------------------------------------------- acceptance

struct CriterionResult {
  int id = 0;
  std::string name;
  std::string target;
  std::string measured;
  bool pass = false;
  double wall_ms = 0.0;
  json details;
  json to_json() const;
};

struct AcceptanceContext {
  SampleCache* cache = nullptr;
  int jobs = 1;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;  // progress lines, optional
};

// Criteria 1..8 of the acceptance list.
CriterionResult run_criterion(int id, const AcceptanceContext& ctx);
// "fast": 7, 8. "scaling": 1..6. "all": 1..8. Throws ConfigInvalid for other ids.
std::vector<int> suite_criteria(const std::string& id);
void print_criteria_table(std::ostream& out, const std::vector<CriterionResult>& rs);

}  // namespace grushin
