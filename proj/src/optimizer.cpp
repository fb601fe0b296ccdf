#include "fetilda/numcore/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace fetilda {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("optimizer: learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("optimizer: beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("optimizer: beta2 must be in (0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer: epsilon must be positive");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->trainable && !p->has_grad) {
      throw std::runtime_error("optimizer: no gradient for trainable parameter '" + p->name + "'");
    }
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("optimizer: gradient of '" + p->name + "' has shape " + shape_str(p->grad.shape()) +
                       ", value has " + shape_str(p->value.shape()));
    }
  }
  ++step_;
  const double lr = config_.learning_rate;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto w = p->value.data();
    auto g = p->grad.data();
    if (config_.method == OptimizerMethod::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    } else {
      auto [it, inserted] = moments_.try_emplace(p->name);
      if (inserted) {
        it->second.m = Tensor(p->value.shape(), 0.0);
        it->second.v = Tensor(p->value.shape(), 0.0);
      }
      auto m = it->second.m.data();
      auto v = it->second.v.data();
      const double b1 = config_.beta1, b2 = config_.beta2;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
    p->zero_grad();
  }
}

}  // namespace fetilda
