#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gctnet {

struct GradcheckCase {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
    // Negative control: a deliberately wrong gradient that the check is
    // expected to flag. Counted as healthy when it FAILS.
    bool expected_fail = false;
};

struct GradcheckReport {
    std::vector<GradcheckCase> cases;
    double tolerance = 0.0;

    bool ok() const {
        for (const GradcheckCase& c : cases) {
            if (c.expected_fail ? c.pass : !c.pass) return false;
        }
        return !cases.empty();
    }
};

// Central finite differences in 64-bit against the analytic backward pass
// of every layer kind and the transform variant grid. `instances` controls
// how many random instances each case draws.
GradcheckReport gradcheck_suite(std::uint64_t seed, int instances);

inline constexpr double kGradcheckTolerance = 1e-6;
inline constexpr double kGradcheckStep = 1e-5;

}  // namespace gctnet
