#pragma once

#include <cstddef>
#include <vector>

#include "pam/tensor.hpp"

namespace pam {

enum class GateMode { kHard, kSoft };

/// Task posteriors and the mixing indicator for a batch of B examples.
struct GateDecision {
  ag::Tensor logits;      // [B x N]; undefined for fixed gates
  ag::Tensor posteriors;  // [B x N]
  ag::Tensor indicator;   // [B x N]; one-hot (hard) or the posteriors (soft)
  GateMode mode = GateMode::kHard;
  std::vector<std::size_t> selected;  // argmax per row

  std::size_t batch() const { return posteriors.rows(); }
  std::size_t experts() const { return posteriors.cols(); }
};

/// Gate from raw head logits: softmax posteriors, Top-1 ties to the lowest index.
GateDecision make_gate(const ag::Tensor& logits, GateMode mode);

/// Fixed hard gate selecting `choice[b]` for each row.
GateDecision one_hot_gate(const std::vector<std::size_t>& choice, std::size_t num_experts);

}  // namespace pam
