#pragma once

#include <random>
#include <string>

#include "pam/tensor.hpp"

// Parameter initialisers. Every tensor they return is a named trainable leaf.
namespace pam::init {

ag::Tensor zeros(ag::Shape shape, std::string name);
ag::Tensor constant(ag::Shape shape, double value, std::string name);
/// N(0, 1 / rows) for a [rows x cols] weight.
ag::Tensor fan_in_normal(ag::Shape shape, std::mt19937_64& rng, std::string name);
ag::Tensor normal(ag::Shape shape, double stddev, std::mt19937_64& rng, std::string name);

}  // namespace pam::init
