#ifndef VOXLOC_GRADCHECK_HPP
#define VOXLOC_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "voxloc/network.hpp"

namespace voxloc::check {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// |a - b| relative to max(|a|, |b|) with a small floor so near-zero
// gradients compare absolutely.
double rel_err(double a, double b);

// Central finite differences over every entry of `storage`, compared
// against `analytic`; `f` re-evaluates the scalar probe under the current
// contents of `storage`. Returns the worst relative error.
double fd_max_rel_err(ad::MatrixXd& storage, const ad::MatrixXd& analytic,
                      const std::function<double()>& f, double h = 1e-6);

// Finite-difference suites: every sparse operator in isolation (parameters
// and inputs), the composed network over all parameters, and both loss
// gradients. Used by the unit tests, the acceptance suite and the CLI.
std::vector<CheckResult> operator_gradient_suite(std::uint64_t seed, double tolerance);
std::vector<CheckResult> network_gradient_suite(std::uint64_t seed, double tolerance,
                                                const net::NetworkConfig& cfg);
std::vector<CheckResult> loss_gradient_suite(std::uint64_t seed, double tolerance);

bool all_pass(const std::vector<CheckResult>& results);

} // namespace voxloc::check

#endif
