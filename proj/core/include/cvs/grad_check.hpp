#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cvs/tensor.hpp"

namespace cvs {

// A function of several tensors with a hand-written backward. `backward`
// receives dL/d(output) and must accumulate dL/d(input_i) into
// inputs[i].grad().
struct DifferentiableOp {
  std::string name;
  std::function<Tensor(std::span<const Tensor>)> forward;
  std::function<void(std::span<Tensor>, const Tensor&)> backward;
};

struct GradCheckReport {
  std::string op_name;
  double max_relative_error = 0.0;
  std::vector<double> per_input_errors;
  std::size_t checked_entries = 0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // When nonzero, only this many seeded-random entries of each input are
  // perturbed. Zero checks every entry.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0x5eed;
};

// Compares central differences of L = sum(op(x) * P), P a fixed random
// projection, with the analytic gradient. Relative error per entry is
// |a - n| / max(|a|, |n|, 1e-8). Throws DeterminismError if two forward
// passes on the same inputs disagree bitwise.
GradCheckReport grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, const GradCheckOptions& options);
GradCheckReport grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, double epsilon, double tolerance);

std::string format_report(const GradCheckReport& report);

}  // namespace cvs
