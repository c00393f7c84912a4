#include "cvs/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "cvs/error.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace {

double projected(const Tensor& out, const Tensor& projection) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * projection[i];
  return s;
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  // Partial Fisher-Yates; sorted so perturbation order is stable.
  for (std::size_t i = 0; i < limit; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  for (const auto& t : inputs) {
    if (!t.all_finite()) throw ParameterError("grad_check(" + op.name + "): non-finite input");
  }
  const Tensor out = op.forward(inputs);
  const Tensor again = op.forward(inputs);
  if (!bit_equal(out, again)) {
    throw DeterminismError("grad_check(" + op.name + "): two forward passes on identical inputs disagree");
  }

  Rng rng(options.seed);
  const Tensor projection = Tensor::uniform(out.shape(), rng, -1.0, 1.0);

  for (auto& t : inputs) {
    t.drop_grad();
    t.grad();
  }
  op.backward(inputs, projection);

  GradCheckReport report;
  report.op_name = op.name;
  report.tolerance = options.tolerance;
  report.per_input_errors.assign(inputs.size(), 0.0);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = inputs[i].grad_tensor();
    for (std::size_t e : pick_entries(inputs[i].size(), options.max_entries_per_input, rng)) {
      const double saved = inputs[i][e];
      inputs[i][e] = saved + options.epsilon;
      const double plus = projected(op.forward(inputs), projection);
      inputs[i][e] = saved - options.epsilon;
      const double minus = projected(op.forward(inputs), projection);
      inputs[i][e] = saved;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      report.per_input_errors[i] = std::max(report.per_input_errors[i], err);
      ++report.checked_entries;
    }
    report.max_relative_error = std::max(report.max_relative_error, report.per_input_errors[i]);
  }
  report.pass = report.max_relative_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, double epsilon, double tolerance) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  options.tolerance = tolerance;
  return grad_check(op, std::move(inputs), options);
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  os << (report.pass ? "PASS " : "FAIL ") << std::left << std::setw(28) << report.op_name << std::right
     << " max_rel_err=" << std::scientific << std::setprecision(3) << report.max_relative_error
     << " tol=" << report.tolerance << " entries=" << report.checked_entries << " per_input=[";
  for (std::size_t i = 0; i < report.per_input_errors.size(); ++i) {
    os << (i ? ", " : "") << report.per_input_errors[i];
  }
  os << ']';
  return os.str();
}

}  // namespace cvs
