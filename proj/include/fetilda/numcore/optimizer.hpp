#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>

#include "fetilda/numcore/tape.hpp"

namespace fetilda {

enum class OptimizerMethod { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// SGD or Adam over named parameters. Moments are keyed by parameter name,
/// so the same optimizer may be applied to a copied model.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Updates every trainable parameter, then clears its gradient.
  /// Throws if a trainable parameter received no gradient since the last step.
  void step(std::span<Parameter* const> params);

  std::uint64_t steps() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  OptimizerConfig config_;
  std::unordered_map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace fetilda
