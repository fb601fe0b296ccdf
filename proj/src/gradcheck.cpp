#include "fetilda/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fetilda {

namespace {
constexpr double kVanishingGradient = 1e-9;
}  // namespace

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

GradCheckReport grad_check(std::span<Parameter* const> params, const LossBuilder& build, double tolerance,
                           double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    tape.backward(build(tape));
  }
  auto loss_at = [&build]() {
    Tape tape(false);
    return build(tape).value().item();
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor analytic = p->grad;
    auto w = p->value.data();
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + step;
      const double up = loss_at();
      w[i] = saved - step;
      const double down = loss_at();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff = std::max(diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    // Both sides at round-off level: the true gradient is zero (e.g. attention
    // key biases, which softmax cancels) and the ratio would be pure noise.
    const bool vanishing = scale < kVanishingGradient;
    report.entries.push_back({p->name, vanishing || scale == 0.0 ? 0.0 : diff / scale, diff});
  }
  for (Parameter* p : params) p->zero_grad();
  return report;
}

}  // namespace fetilda
