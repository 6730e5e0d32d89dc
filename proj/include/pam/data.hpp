#pragma once
// Synthetic multitask corpus with planted (encoder, layer) dependencies.
//
// Every example carries a random class symbol in the planted subspace of
// every task's dependency pairs, so the audio distribution is the same for all
// tasks and only the prompt says which pairs matter. The target of task t is
// the symbol tokens of t's pairs, in order, followed by EOS.
//
// Token layout: 0 PAD, 1 EOS, 2 AUDIO (ends every prompt), then one symbol
// token per class, five keywords per task, and filler words for the rest.
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/config.hpp"
#include "pam/encoders.hpp"

namespace pam {

inline constexpr int kPadToken = 0;
inline constexpr int kEosToken = 1;
inline constexpr int kAudioToken = 2;
inline constexpr int kFirstSymbolToken = 3;
inline constexpr std::size_t kKeywordsPerTask = 5;

struct PlantedPair {
  std::size_t encoder = 0;
  std::size_t layer = 0;

  bool operator==(const PlantedPair&) const = default;
};

struct TaskSpec {
  std::size_t task_id = 0;
  std::vector<PlantedPair> planted;
  std::vector<std::vector<int>> templates;
  std::size_t train_templates = 0;  // templates [0, train_templates) are for training
};

struct Vocabulary {
  std::size_t num_classes = 4;
  std::size_t num_tasks = 4;
  std::size_t size = 64;

  int symbol(std::size_t cls) const { return kFirstSymbolToken + static_cast<int>(cls); }
  int keyword(std::size_t task, std::size_t k) const;
  int first_filler() const;
  std::size_t num_fillers() const;
};

struct Example {
  SyntheticAudio audio;
  std::vector<int> prompt;
  std::size_t cluster_id = 0;  // template index within the task
  int task = 0;
  std::vector<int> target;
  /// Cached frozen encoder outputs for `audio`.
  std::vector<HiddenStack> stacks;
};

struct Dataset {
  std::vector<TaskSpec> tasks;
  std::vector<PlantedPair> common;  // pairs every target also reports (data.common_dependency)
  Vocabulary vocab;
  std::vector<Example> train, dev, test;

  const std::vector<Example>& split(const std::string& name) const;
};

/// The default four-task layout for a 3-encoder, 4-layer bank:
///   task 0 deep:    (1,3) (2,3)
///   task 1 deep:    (0,3) (1,2)
///   task 2 middle:  (1,1) (2,1)
///   task 3 shallow: (0,0) (2,0)
/// Other shapes get two pairs per task, assigned deepest first.
std::vector<std::vector<PlantedPair>> default_dependencies(std::size_t num_tasks, std::size_t num_encoders,
                                                           std::size_t pool_layers);
PlantedPair default_common_pair(std::size_t num_encoders, std::size_t pool_layers);

std::vector<TaskSpec> make_tasks(const RunConfig& config);

/// Throws ConfigError if any pair is used twice or lies outside the fusion pool.
void check_dependencies(const std::vector<TaskSpec>& tasks, const std::vector<PlantedPair>& common,
                        const BankConfig& bank);

Dataset generate_dataset(const std::vector<TaskSpec>& tasks, const std::vector<EncoderSpec>& bank,
                         const RunConfig& config);
Dataset generate_dataset(const RunConfig& config);

/// Recovers the target from the audio alone by decoding each planted pair's
/// subspace to the nearest class code.
std::vector<int> derive_target(const TaskSpec& task, const std::vector<PlantedPair>& common,
                               const std::vector<EncoderSpec>& bank, const Vocabulary& vocab,
                               const SyntheticAudio& audio);

/// Unit code of class c in the first two coordinates of an r-dimensional subspace.
std::vector<double> class_code(std::size_t cls, std::size_t num_classes, std::size_t rank);

nlohmann::json to_json(const Example& example);
nlohmann::json to_json(const TaskSpec& task);

}  // namespace pam
