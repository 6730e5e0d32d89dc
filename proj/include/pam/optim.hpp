#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pam/tensor.hpp"

namespace pam::ag {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, scaled by the learning rate
};

/// Adam with bias-corrected moments, keyed by parameter name.
///
/// Only the tensors passed to step() are touched. A parameter that received
/// no gradient in a step (e.g. an unselected routed expert) is simply left out
/// by the caller, so its value and moments stay frozen for that step.
class Adam {
 public:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  explicit Adam(AdamConfig config);

  /// Applies one update. Every tensor must be named and carry a gradient.
  void step(std::span<Tensor> params);

  std::uint64_t step_count() const noexcept { return step_count_; }
  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr);

  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }
  void restore(std::uint64_t step_count, std::map<std::string, Moments> moments);

 private:
  AdamConfig config_;
  std::uint64_t step_count_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace pam::ag
