#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fetilda/numcore/tape.hpp"

namespace fetilda {

struct GradCheckEntry {
  std::string name;
  /// max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|);
/// 0 when both sides stay below 1e-9 everywhere.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double worst() const;
  bool passed() const { return worst() < tolerance; }
};

/// Builds the scalar loss on the given tape from the current parameter values.
/// Must be deterministic (dropout off, fixed seeds).
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central finite differences for
/// every trainable parameter. Parameter values are restored afterwards and
/// their gradients cleared.
GradCheckReport grad_check(std::span<Parameter* const> params, const LossBuilder& build, double tolerance,
                           double step = 1e-5);

}  // namespace fetilda
