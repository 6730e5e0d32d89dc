#include "pam/init.hpp"

#include <cmath>

namespace pam::init {

ag::Tensor zeros(ag::Shape shape, std::string name) { return constant(std::move(shape), 0.0, std::move(name)); }

ag::Tensor constant(ag::Shape shape, double value, std::string name) {
  auto t = ag::Tensor::full(std::move(shape), value, true);
  t.set_name(std::move(name));
  return t;
}

ag::Tensor normal(ag::Shape shape, double stddev, std::mt19937_64& rng, std::string name) {
  auto t = ag::Tensor::zeros(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.mutable_data()) v = dist(rng);
  t.set_name(std::move(name));
  return t;
}

ag::Tensor fan_in_normal(ag::Shape shape, std::mt19937_64& rng, std::string name) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(shape.front()));
  return normal(std::move(shape), stddev, rng, std::move(name));
}

}  // namespace pam::init
