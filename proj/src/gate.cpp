#include "pam/gate.hpp"

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

namespace {

ag::Tensor one_hot(const std::vector<std::size_t>& choice, std::size_t n) {
  std::vector<double> data(choice.size() * n, 0.0);
  for (std::size_t b = 0; b < choice.size(); ++b) data[b * n + choice[b]] = 1.0;
  return ag::Tensor::from({choice.size(), n}, std::move(data));
}

}  // namespace

GateDecision make_gate(const ag::Tensor& logits, GateMode mode) {
  if (logits.rank() != 2) throw DimensionError("gate logits must be [B x N], got " + ag::to_string(logits.shape()));
  GateDecision g;
  g.logits = logits;
  g.mode = mode;
  g.posteriors = ag::softmax(logits, 1);
  g.selected = ag::argmax_rows(logits);
  g.indicator = mode == GateMode::kHard ? one_hot(g.selected, logits.cols()) : g.posteriors;
  return g;
}

GateDecision one_hot_gate(const std::vector<std::size_t>& choice, std::size_t num_experts) {
  if (choice.empty() || num_experts == 0) throw DimensionError("one_hot_gate: empty batch or zero experts");
  for (auto c : choice) {
    if (c >= num_experts) {
      throw IndexError("expert " + std::to_string(c) + " out of range for " + std::to_string(num_experts));
    }
  }
  GateDecision g;
  g.mode = GateMode::kHard;
  g.selected = choice;
  g.indicator = one_hot(choice, num_experts);
  g.posteriors = g.indicator;
  return g;
}

}  // namespace pam
