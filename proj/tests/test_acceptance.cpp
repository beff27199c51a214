// Runs criteria 1..8 uncached and prints one line per criterion.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <iostream>

#include "grushin/cli.hpp"

using namespace grushin;

namespace {

std::vector<CriterionResult>& results() {
  static std::vector<CriterionResult> rs;
  return rs;
}

void criterion(int id) {
  AcceptanceContext ctx;  // no cache: every sample is computed
  auto r = run_criterion(id, ctx);
  std::cout << "criterion " << id << " " << (r.pass ? "PASS" : "FAIL") << ": " << r.name << " | target " << r.target
            << " | measured " << r.measured << std::endl;
  results().push_back(r);
  CHECK_MESSAGE(r.pass, r.details.dump());
}

}  // namespace

TEST_CASE("criterion 1") { criterion(1); }
TEST_CASE("criterion 2") { criterion(2); }
TEST_CASE("criterion 3") { criterion(3); }
TEST_CASE("criterion 4") { criterion(4); }
TEST_CASE("criterion 5") { criterion(5); }
TEST_CASE("criterion 6") { criterion(6); }
TEST_CASE("criterion 7") { criterion(7); }
TEST_CASE("criterion 8") { criterion(8); }

TEST_CASE("summary table") {
  print_criteria_table(std::cout, results());
  CHECK(results().size() == 8);
}
