#include "pam/adapters.hpp"

#include "pam/errors.hpp"
#include "pam/init.hpp"
#include "pam/ops.hpp"

namespace pam {

AdapterParams make_adapter(std::size_t encoder_id, std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t output_dim, std::mt19937_64& rng, const std::string& prefix,
                           Activation activation) {
  AdapterParams p;
  p.encoder_id = encoder_id;
  p.activation = activation;
  p.w1 = init::fan_in_normal({input_dim, hidden_dim}, rng, prefix + ".w1");
  p.b1 = init::zeros({hidden_dim}, prefix + ".b1");
  p.w2 = init::fan_in_normal({hidden_dim, output_dim}, rng, prefix + ".w2");
  p.b2 = init::zeros({output_dim}, prefix + ".b2");
  return p;
}

ag::Tensor adapt_state(const AdapterParams& params, const ag::Tensor& state) {
  auto h = ag::add_bias(ag::matmul(state, params.w1), params.b1);
  if (params.activation == Activation::kGelu) h = ag::gelu(h);
  return ag::add_bias(ag::matmul(h, params.w2), params.b2);
}

HiddenStack adapt(const AdapterParams& params, const HiddenStack& stack) {
  if (stack.encoder_id != params.encoder_id) {
    throw ConfigError("adapter for encoder " + std::to_string(params.encoder_id) + " applied to encoder " +
                      std::to_string(stack.encoder_id));
  }
  if (stack.dim() != params.input_dim()) {
    throw ConfigError("adapter expects " + std::to_string(params.input_dim()) + " features, stack has " +
                      std::to_string(stack.dim()));
  }
  HiddenStack out;
  out.encoder_id = stack.encoder_id;
  out.states.reserve(stack.states.size());
  for (const auto& s : stack.states) out.states.push_back(adapt_state(params, s));
  return out;
}

}  // namespace pam
