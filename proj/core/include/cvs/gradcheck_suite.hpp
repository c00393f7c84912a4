#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvs/grad_check.hpp"

namespace cvs {

// Finite-difference checks over every differentiable op, grouped by module:
// "tensor", "mvfs", "cvtr", "pipeline" or "all". Instances are tiny and
// seeded; epsilon 1e-5, tolerance 1e-4.
std::vector<GradCheckReport> run_gradcheck_suite(const std::string& module, std::uint64_t seed);

}  // namespace cvs
