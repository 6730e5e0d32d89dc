#pragma once
// PaM expert block and the multi-encoder baseline fusers.
//
// All functions take adapted stacks whose states may hold the frames of
// several examples stacked along rows (B * T rows). Every op is row-local,
// so a batch behaves exactly like B separate calls.
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pam/encoders.hpp"
#include "pam/gate.hpp"
#include "pam/tensor.hpp"

namespace pam {

enum class BaselineMode { kPam, kConcatLinear, kAverage };

const char* to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(const std::string& text);

struct FusionConfig {
  std::size_t num_fused = 3;           // K
  std::size_t num_routed_experts = 4;  // N
  bool use_shared_expert = true;
  BaselineMode baseline_mode = BaselineMode::kPam;
};

void validate(const FusionConfig& config);

struct ExpertParams {
  ag::Tensor fusion_weights;  // W [K x P]
  ag::Tensor proj_w;          // [(E + K) * D_LLM x D_LLM]
  ag::Tensor proj_b;          // [D_LLM]

  std::vector<ag::Tensor> parameters() const { return {fusion_weights, proj_w, proj_b}; }
  std::size_t num_fused() const { return fusion_weights.rows(); }
  std::size_t pool_size() const { return fusion_weights.cols(); }
  std::size_t parameter_count() const;
};

/// W starts at 1/P everywhere; the projection is fan-in normal.
ExpertParams make_expert(std::size_t num_encoders, std::size_t pool_per_encoder, std::size_t num_fused,
                         std::size_t model_dim, std::mt19937_64& rng, const std::string& prefix);

struct FusedAudioFeature {
  ag::Tensor values;  // [T x D_LLM], or [B * T x D_LLM] for a batch
};

/// States 0..L-1 of every stack, encoder-major. Pool index p = i * L + l.
std::vector<ag::Tensor> fusion_pool(const std::vector<HiddenStack>& stacks);

/// The final state of every stack, in encoder order.
std::vector<ag::Tensor> last_states(const std::vector<HiddenStack>& stacks);

std::vector<ag::Tensor> fuse_layers(const ExpertParams& expert, const std::vector<HiddenStack>& stacks);

ag::Tensor expert_forward(const ExpertParams& expert, const std::vector<HiddenStack>& stacks);

/// Shared expert plus the gated routed experts. With a hard gate each row
/// group runs only its selected expert; with a soft gate every expert runs
/// and is weighted per example. `shared` is ignored when the config disables it.
FusedAudioFeature pam_forward(const FusionConfig& config, const ExpertParams& shared,
                              const std::vector<ExpertParams>& routed, const GateDecision& gate,
                              const std::vector<HiddenStack>& stacks);

struct BaselineParams {
  ag::Tensor proj_w;  // [E * D_LLM x D_LLM], concat_linear only
  ag::Tensor proj_b;  // [D_LLM]

  std::vector<ag::Tensor> parameters() const;
};

BaselineParams make_baseline(BaselineMode mode, std::size_t num_encoders, std::size_t model_dim,
                             std::mt19937_64& rng, const std::string& prefix);

FusedAudioFeature baseline_forward(BaselineMode mode, const BaselineParams& params,
                                   const std::vector<HiddenStack>& stacks);

}  // namespace pam
