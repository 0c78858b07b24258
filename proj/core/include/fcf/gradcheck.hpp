#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fcf/tensor.hpp"

namespace fcf {

struct GradCheckFailure {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  int64_t elements_checked = 0;
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;

  bool ok() const { return failures.empty(); }
  std::string summary() const;
};

/// One independent instance of the computation under check: a deterministic
/// scalar forward plus the named leaf parameters it depends on.
struct GradCheckTask {
  std::function<Tensor()> loss;
  std::vector<std::pair<std::string, Tensor>> params;
};

/// Compares reverse-mode gradients against central finite differences with a
/// relative step of `h` (per element: h * max(1, |w|)). For parameters larger
/// than `max_per_param` elements a seeded random subsample is probed.
/// rel_err = |analytic - numeric| / max(1, |numeric|), flagged when > tol.
///
/// The factory must build independent, identically-valued task instances;
/// each worker thread perturbs its own copy, so probes parallelize cleanly.
GradCheckReport grad_check(const std::function<GradCheckTask()>& factory,
                           double h = 1e-3, double tol = 1e-2,
                           int64_t max_per_param = 64, uint64_t seed = 0,
                           int threads = 1);

/// Single-instance convenience overload; perturbs the given task in place
/// (values are restored after each probe).
GradCheckReport grad_check(const GradCheckTask& task, double h = 1e-3,
                           double tol = 1e-2, int64_t max_per_param = 64,
                           uint64_t seed = 0);

}  // namespace fcf
