#include "pam/optim.hpp"

#include <cmath>

#include "pam/errors.hpp"

namespace pam::ag {

Adam::Adam(AdamConfig config) : config_(config) { set_learning_rate(config.learning_rate); }

void Adam::set_learning_rate(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  config_.learning_rate = lr;
}

void Adam::step(std::span<Tensor> params) {
  for (auto& p : params) {
    if (p.name().empty()) throw ContractError("optimizer parameters must be named");
    if (!p.has_grad()) throw ContractError("parameter '" + p.name() + "' has no gradient");
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& p : params) {
    auto& mom = moments_[p.name()];
    const std::size_t n = p.numel();
    if (mom.first.size() != n) {
      mom.first.assign(n, 0.0);
      mom.second.assign(n, 0.0);
    }
    auto value = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      mom.first[i] = config_.beta1 * mom.first[i] + (1.0 - config_.beta1) * g;
      mom.second[i] = config_.beta2 * mom.second[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = mom.first[i] / c1;
      const double v_hat = mom.second[i] / c2;
      value[i] -= config_.learning_rate * (m_hat / (std::sqrt(v_hat) + config_.epsilon) + config_.weight_decay * value[i]);
    }
  }
}

void Adam::restore(std::uint64_t step_count, std::map<std::string, Moments> moments) {
  step_count_ = step_count;
  moments_ = std::move(moments);
}

}  // namespace pam::ag
