#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mi_oracle.hpp"

namespace csfda::verify {

struct VerifyOptions {
  int trials = 1000;
  int grad_samples = 50;
  std::uint64_t seed = mi::kDefaultSweepSeed;
  // Negative-control hook: flips the sign of the analytic VMI gradient
  // inside the suite, which must make verification fail.
  bool inject_vmi_grad_sign_flip = false;
  std::string dump_csv_path;  // per-trial lhs/rhs rows when non-empty
};

struct GradCheck {
  std::string loss;
  std::string argument;
  double max_rel_err = 0.0;
  int samples = 0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-4;

struct VerifyReport {
  mi::SweepReport lemma1;
  mi::SweepReport theorem1;
  std::vector<GradCheck> gradient_checks;

  bool all_passed() const;
};

// Runs the Lemma 1 / Theorem 1 oracle sweeps and the finite-difference
// gradient suite over every loss and differentiable model operation.
VerifyReport run_verification(const VerifyOptions& opts = {});

// Human-readable summary, one line per suite plus one per gradient check.
std::string render_report(const VerifyReport& report);

}  // namespace csfda::verify
