#ifndef JOINTDIFF_SELFCHECK_HPP
#define JOINTDIFF_SELFCHECK_HPP

#include <string>
#include <utility>
#include <vector>

namespace jointdiff {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Finite-difference gradient error per autograd primitive.
std::vector<std::pair<std::string, double>> primitive_gradient_errors();

// Fast oracle/property suite: schedule algebra, D3PM posterior vs exhaustive
// path enumeration, finite-difference gradient checks, sampler identities.
std::vector<CheckResult> run_self_check();

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace jointdiff

#endif
