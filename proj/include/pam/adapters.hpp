#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pam/encoders.hpp"
#include "pam/tensor.hpp"

namespace pam {

enum class Activation { kGelu, kIdentity };

/// Pre-fusion feed-forward projection for one encoder: D_E -> hidden -> D_LLM.
/// The same adapter is applied to every layer state of its encoder.
struct AdapterParams {
  std::size_t encoder_id = 0;
  Activation activation = Activation::kGelu;
  ag::Tensor w1;  // [D_E x hidden]
  ag::Tensor b1;  // [hidden]
  ag::Tensor w2;  // [hidden x D_LLM]
  ag::Tensor b2;  // [D_LLM]

  std::vector<ag::Tensor> parameters() const { return {w1, b1, w2, b2}; }
  std::size_t input_dim() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.cols(); }
};

AdapterParams make_adapter(std::size_t encoder_id, std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t output_dim, std::mt19937_64& rng, const std::string& prefix,
                           Activation activation = Activation::kGelu);

ag::Tensor adapt_state(const AdapterParams& params, const ag::Tensor& state);

/// Applies the adapter independently to all L + 1 states of `stack`.
HiddenStack adapt(const AdapterParams& params, const HiddenStack& stack);

}  // namespace pam
