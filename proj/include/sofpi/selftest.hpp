// The battery behind `sofpidr check`: adjoint, gradient and invariant checks
// on small problems, a few seconds in total.

#pragma once

#include <string>
#include <vector>

namespace sofpi {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_self_tests();

}  // namespace sofpi
