#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pflow {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;  // worst error across instances, per tensor
    double worst = 0;
    int instances = 0;
    double tolerance = 1e-5;

    bool passed() const { return worst <= tolerance; }
};

/// Master gradient check: on random small instances, every parameter
/// gradient of the full two-step loss is compared against 64-bit central
/// finite differences (step 1e-5). Relative error uses a floor scaled by
/// the instance's largest gradient so exact zeros compare cleanly.
GradCheckReport run_gradient_check(std::uint64_t seed, int instances, int max_particles,
                                   int channels = 4, double tolerance = 1e-5);

}  // namespace pflow
