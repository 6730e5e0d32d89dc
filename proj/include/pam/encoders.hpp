#pragma once

// Frozen toy audio encoders with analytically known per-layer content.
//
// Layer l of encoder e reads the input through its own planted subspace
// U(e,l) (orthonormal columns) and maps the r-dimensional projection into the
// encoder's hidden space. All layers of one encoder share the same range in
// hidden space, so their contents overlap there and can only be told apart by
// which layer they come from. Consecutive layers are linked by a small
// residual mixing term:
//
//   h^0 = A(e,0) U(e,0)^T x
//   h^l = A(e,l) U(e,l)^T x + mixing * h^(l-1)
//
// A conv-like frontend block-averages `frontend_hop` input frames before the
// layers, and `frame_stride` block-averages the outputs afterwards so every
// encoder in a bank lands on the same frame rate.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pam/tensor.hpp"

namespace pam {

struct EncoderSpec {
  std::size_t encoder_id = 0;
  std::size_t num_layers = 4;  // L; the stack holds L + 1 states
  std::size_t hidden_dim = 16;
  std::size_t input_dim = 32;
  std::size_t frontend_hop = 1;
  std::size_t frame_stride = 1;
  double mixing = 0.1;
  /// L + 1 matrices of shape [input_dim x r] with orthonormal columns.
  std::vector<ag::Tensor> planted_subspaces;
  /// L + 1 matrices of shape [hidden_dim x r].
  std::vector<ag::Tensor> layer_maps;

  std::size_t subspace_rank() const;
  /// Input frames consumed per aligned output frame.
  std::size_t frames_per_output() const { return frontend_hop * frame_stride; }
};

struct HiddenStack {
  std::size_t encoder_id = 0;
  /// L + 1 matrices [T x D]; index 0 is the post-frontend state.
  std::vector<ag::Tensor> states;

  std::size_t frames() const;
  std::size_t dim() const;
  std::size_t num_layers() const { return states.empty() ? 0 : states.size() - 1; }
};

struct SyntheticAudio {
  ag::Tensor frames;  // [T0 x D_in]
  std::uint64_t seed = 0;
};

struct BankConfig {
  std::size_t num_encoders = 3;
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 16;
  std::size_t input_dim = 32;
  double mixing = 0.1;
  std::uint64_t seed = 7;
};

/// Rank of each planted subspace: input_dim split evenly over every
/// (encoder, layer) pair. Throws ConfigError when it would be zero.
std::size_t planted_rank(const BankConfig& config);

/// Builds a bank whose planted subspaces are mutually orthogonal across all
/// (encoder, layer) pairs. Encoder 0 runs at twice the frame rate and is
/// aligned with frame_stride = 2; the others subsample in their frontend.
std::vector<EncoderSpec> make_bank(const BankConfig& config);
std::vector<EncoderSpec> default_bank();

/// Mean of each consecutive block of `factor` rows.
ag::Tensor downsample(const ag::Tensor& x, std::size_t factor);

HiddenStack encode(const EncoderSpec& spec, const SyntheticAudio& audio);
std::vector<HiddenStack> encode_all(const std::vector<EncoderSpec>& bank, const SyntheticAudio& audio);

}  // namespace pam
