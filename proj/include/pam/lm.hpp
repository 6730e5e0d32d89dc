#pragma once
// Tiny decoder-only LM over packed [prompt][audio][target] sequences.
//
// Prompt and target tokens go through the embedding table; audio frames are
// used as continuous input embeddings. Learned positional embeddings are
// added to every row. Each sequence attends only to itself.
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pam/tensor.hpp"

namespace pam {

struct LmConfig {
  std::size_t vocab_size = 64;
  std::size_t model_dim = 32;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_positions = 32;
};

void validate(const LmConfig& config);

struct DecoderBlock {
  ag::Tensor ln1_g, ln1_b;
  ag::Tensor qkv_w, qkv_b;  // [D x 3D], [3D]
  ag::Tensor out_w, out_b;  // [D x D], [D]
  ag::Tensor ln2_g, ln2_b;
  ag::Tensor ff1_w, ff1_b;  // [D x ffn_mult * D]
  ag::Tensor ff2_w, ff2_b;  // [ffn_mult * D x D]
};

struct TinyLM {
  LmConfig config;
  ag::Tensor tok_emb;  // [V x D]
  ag::Tensor pos_emb;  // [max_positions x D]
  std::vector<DecoderBlock> blocks;
  ag::Tensor lnf_g, lnf_b;
  ag::Tensor head_w, head_b;  // untied output projection [D x V], [V]

  std::vector<ag::Tensor> parameters() const;
};

TinyLM make_lm(const LmConfig& config, std::mt19937_64& rng, const std::string& prefix = "lm");

/// Segment lengths of one packed sequence. The model input holds
/// prompt + audio + max(target - 1, 0) rows: the last target token is never fed.
struct SequenceLayout {
  std::size_t prompt = 0;
  std::size_t audio = 0;
  std::size_t target = 0;

  std::size_t input_rows() const { return prompt + audio + (target > 0 ? target - 1 : 0); }
  /// Row whose output predicts target[0].
  std::size_t first_prediction_row() const { return prompt + audio - 1; }
};

struct LmBatch {
  std::vector<std::vector<int>> prompts;
  /// Concatenated audio frames of all sequences, in batch order; may be undefined when every audio span is 0.
  ag::Tensor audio;
  std::vector<std::size_t> audio_frames;  // per sequence
  std::vector<std::vector<int>> targets;  // may be empty vectors

  std::size_t size() const { return prompts.size(); }
  std::vector<SequenceLayout> layouts() const;
};

struct LmOutput {
  ag::Tensor hidden;  // final-norm hidden states of every packed row
  ag::Tensor logits;  // [sum of target lengths x V], target positions only
  std::vector<SequenceLayout> layouts;
  std::vector<std::size_t> offsets;  // first packed row of each sequence
};

LmOutput lm_forward(const TinyLM& lm, const LmBatch& batch);

/// Mean next-token cross-entropy over the target span only.
ag::Tensor lm_loss(const ag::Tensor& logits, const std::vector<std::vector<int>>& targets);

/// Argmax decoding until `eos` or `max_len` tokens, one full forward per step,
/// all sequences in lockstep. Audio and prompts as in LmBatch (targets ignored).
std::vector<std::vector<int>> greedy_decode(const TinyLM& lm, const LmBatch& batch, std::size_t max_len, int eos);

}  // namespace pam
