#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/config.hpp"
#include "pam/data.hpp"
#include "pam/model.hpp"
#include "pam/optim.hpp"

namespace pam {

struct StepMetrics {
  std::uint64_t step = 0;
  double learning_rate = 0.0;
  double loss_llm = 0.0;
  std::optional<double> loss_routing;
  double loss_total = 0.0;
  std::optional<double> routing_accuracy;
  double token_accuracy = 0.0;  // teacher-forced argmax on the batch
};

nlohmann::json to_json(const StepMetrics& m);

struct TrainState {
  RunConfig config;
  PamModel model;
  ag::Adam optimizer;
  std::mt19937_64 rng;
  std::uint64_t step = 0;
};

TrainState init_state(const RunConfig& config);

using StepCallback = std::function<void(const StepMetrics&)>;

/// Uniform draws with replacement from [0, population); the training sampler.
std::vector<std::size_t> sample_indices(std::mt19937_64& rng, std::size_t population, std::size_t count);

/// Runs `steps` optimisation steps of L_llm (+ weight * L_G for prompt-aware
/// routing). Encoders are never touched. Throws NumericError naming the first
/// non-finite tensor if the loss diverges.
std::vector<StepMetrics> train(TrainState& state, const Dataset& data, std::uint64_t steps,
                               const StepCallback& on_step = {});

struct TaskMetrics {
  int task = 0;
  std::size_t count = 0;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double loss_llm = 0.0;
  std::optional<double> routing_accuracy;
};

struct EvalMetrics {
  std::string split;
  std::size_t count = 0;
  std::vector<TaskMetrics> per_task;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double loss_llm = 0.0;        // mean over examples
  double mean_task_loss = 0.0;  // mean of the per-task losses
  std::optional<double> loss_routing;
  std::optional<double> routing_accuracy;          // expert index == task label
  std::optional<double> routing_accuracy_matched;  // best one-to-one expert/task relabelling
  std::vector<std::vector<std::size_t>> confusion;  // [task][expert]
  std::vector<std::vector<double>> forced_gate_loss;  // [task][expert] mean L_llm with the gate forced
};

nlohmann::json to_json(const EvalMetrics& m);
std::string to_text(const EvalMetrics& m);

EvalMetrics evaluate(const PamModel& model, const Dataset& data, const std::string& split, std::size_t batch_size,
                     bool forced_gate_probe = true);

}  // namespace pam
