#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rpm/numkit/tensor.hpp"

namespace rpm::nk {

struct GradCheckInput {
  Shape shape;
  std::vector<double> values;
};

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
};

struct CoordinateError {
  int input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<CoordinateError> coordinates;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Compares tape gradients of a scalar function against central differences,
// all in 64-bit. Failures are reported, never thrown.
GradCheckReport grad_check(const ScalarFn& fn, const std::vector<GradCheckInput>& point,
                           const GradCheckOptions& options = {});

struct OpCheckResult {
  std::string op;
  int points = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Checks every forward op at `points` random points each.
std::vector<OpCheckResult> run_gradcheck_suite(std::uint64_t seed, int points = 10,
                                               const GradCheckOptions& options = {});

}  // namespace rpm::nk
