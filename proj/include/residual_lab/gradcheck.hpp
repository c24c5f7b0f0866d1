#pragma once

#include <string>
#include <vector>

#include "residual_lab/wiring.hpp"

namespace rlab {

struct GradCheckEntry {
    std::string name; // "block<k>.w<slot>" or "input"
    double analytic_norm = 0.0;
    double rel_error = 0.0; // max|analytic - numeric| / max(max|numeric|, 1e-8)
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;
    bool pass(double tol) const { return worst < tol; }
};

// Central differences of the analysis loss against backward() for every weight
// and input coordinate of a freshly built network. Meant for small instances.
GradCheckReport network_gradcheck(const NetworkConfig& config, double step = 1e-5);

} // namespace rlab
