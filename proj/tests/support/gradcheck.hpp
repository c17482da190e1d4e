#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace imusic::testing {

struct GradCheckResult {
  std::string op;
  int trials = 0;
  double worst_rel_err = 0;
};

// Compares reverse-mode gradients of every differentiable numcore op with
// central finite differences (step h) over `trials` random inputs each. Runs
// against the double-precision numcore build.
std::vector<GradCheckResult> run_gradient_suite(int trials, double h, std::uint64_t seed);

// d/dx of sum(W * (A x B x C)) for random 4x4 matrices, checked the same way.
GradCheckResult run_matmul_chain_check(int trials, double h, std::uint64_t seed);

}  // namespace imusic::testing
