#include "pam/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

namespace {

constexpr std::uint64_t kTemplateStream = 0x7e3a1c5bULL;
constexpr std::size_t kMinFillers = 10;
constexpr std::size_t kMinPromptFillers = 2;
constexpr std::size_t kPromptFillerSpan = 4;

std::vector<PlantedPair> deepest_first(std::size_t num_encoders, std::size_t pool_layers) {
  std::vector<PlantedPair> out;
  for (std::size_t l = pool_layers; l-- > 0;)
    for (std::size_t e = 0; e < num_encoders; ++e) out.push_back({e, l});
  return out;
}

std::vector<std::vector<int>> make_templates(std::size_t task, const Vocabulary& vocab, const DataConfig& d,
                                             std::mt19937_64& rng, std::set<std::vector<int>>& seen) {
  std::vector<std::vector<int>> out;
  // Fillers come from a reshuffled deck so every filler is used equally often by every task.
  std::vector<int> deck;
  auto draw_filler = [&]() {
    if (deck.empty()) {
      for (std::size_t f = 0; f < d.filler_pool; ++f) deck.push_back(vocab.first_filler() + static_cast<int>(f));
      std::shuffle(deck.begin(), deck.end(), rng);
    }
    const int f = deck.back();
    deck.pop_back();
    return f;
  };
  std::size_t attempts = 0;
  while (out.size() < d.templates_per_task) {
    if (++attempts > 1000 * d.templates_per_task) throw ConfigError("cannot generate enough distinct prompt templates");
    const std::size_t i = out.size();
    // Leading keyword and filler count cycle so no task owns a keyword gap or a prompt length.
    std::vector<std::size_t> order(kKeywordsPerTask);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin() + 1, order.end(), rng);
    std::vector<int> words;
    for (std::size_t k = 0; k < d.prompt_keywords; ++k)
      words.push_back(vocab.keyword(task, (i + order[k]) % kKeywordsPerTask));
    std::set<int> fillers;
    const std::size_t nf = std::min(kMinPromptFillers + i % kPromptFillerSpan, d.filler_pool);
    while (fillers.size() < nf) fillers.insert(draw_filler());
    words.insert(words.end(), fillers.begin(), fillers.end());
    std::shuffle(words.begin(), words.end(), rng);
    words.push_back(kAudioToken);
    if (seen.insert(words).second) out.push_back(std::move(words));
  }
  return out;
}

std::vector<PlantedPair> all_planted(const std::vector<TaskSpec>& tasks, const std::vector<PlantedPair>& common) {
  std::vector<PlantedPair> out;
  for (const auto& t : tasks) out.insert(out.end(), t.planted.begin(), t.planted.end());
  out.insert(out.end(), common.begin(), common.end());
  return out;
}

std::size_t decode_class(const EncoderSpec& spec, const PlantedPair& p, const ag::Tensor& mean_frame,
                         std::size_t num_classes) {
  ag::NoGradGuard guard;
  const auto proj = ag::matmul(mean_frame, spec.planted_subspaces[p.layer]);  // [1 x r]
  const auto v = proj.data();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto code = class_code(c, num_classes, v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - code[i]) * (v[i] - code[i]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

int Vocabulary::keyword(std::size_t task, std::size_t k) const {
  return kFirstSymbolToken + static_cast<int>(num_classes + task * kKeywordsPerTask + k);
}

int Vocabulary::first_filler() const { return keyword(num_tasks, 0); }

std::size_t Vocabulary::num_fillers() const {
  const auto first = static_cast<std::size_t>(first_filler());
  return size > first ? size - first : 0;
}

const std::vector<Example>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train, dev or test)");
}

std::vector<std::vector<PlantedPair>> default_dependencies(std::size_t num_tasks, std::size_t num_encoders,
                                                           std::size_t pool_layers) {
  if (num_tasks == 4 && num_encoders == 3 && pool_layers == 4) {
    return {{{1, 3}, {2, 3}}, {{0, 3}, {1, 2}}, {{1, 1}, {2, 1}}, {{0, 0}, {2, 0}}};
  }
  const auto order = deepest_first(num_encoders, pool_layers);
  if (order.size() < 2 * num_tasks + 1) {
    throw ConfigError(std::to_string(num_tasks) + " tasks need " + std::to_string(2 * num_tasks + 1) +
                      " pool states, the bank has " + std::to_string(order.size()));
  }
  std::vector<std::vector<PlantedPair>> deps(num_tasks);
  for (std::size_t t = 0; t < num_tasks; ++t) deps[t] = {order[2 * t], order[2 * t + 1]};
  return deps;
}

PlantedPair default_common_pair(std::size_t num_encoders, std::size_t pool_layers) {
  if (num_encoders == 3 && pool_layers == 4) return {0, 2};
  return deepest_first(num_encoders, pool_layers).back();
}

std::vector<TaskSpec> make_tasks(const RunConfig& config) {
  const auto& d = config.data;
  Vocabulary vocab{d.num_classes, d.num_tasks, config.model.lm.vocab_size};
  if (d.filler_pool > vocab.num_fillers()) {
    throw ConfigError("filler_pool " + std::to_string(d.filler_pool) + " exceeds the " +
                      std::to_string(vocab.num_fillers()) + " filler tokens in the vocabulary");
  }
  if (vocab.num_fillers() < kMinFillers) {
    throw ConfigError("vocab_size " + std::to_string(vocab.size) + " leaves fewer than " +
                      std::to_string(kMinFillers) + " filler tokens");
  }
  const auto deps = default_dependencies(d.num_tasks, config.model.bank.num_encoders, config.model.bank.num_layers);
  std::mt19937_64 rng(d.seed ^ kTemplateStream);
  std::set<std::vector<int>> seen;
  std::vector<TaskSpec> tasks;
  for (std::size_t t = 0; t < d.num_tasks; ++t) {
    TaskSpec spec;
    spec.task_id = t;
    spec.planted = deps[t];
    spec.templates = make_templates(t, vocab, d, rng, seen);
    spec.train_templates = d.train_templates;
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

void check_dependencies(const std::vector<TaskSpec>& tasks, const std::vector<PlantedPair>& common,
                        const BankConfig& bank) {
  std::set<std::pair<std::size_t, std::size_t>> used;
  for (const auto& p : all_planted(tasks, common)) {
    if (p.encoder >= bank.num_encoders || p.layer >= bank.num_layers) {
      throw ConfigError("planted pair (" + std::to_string(p.encoder) + "," + std::to_string(p.layer) +
                        ") lies outside the fusion pool");
    }
    if (!used.insert({p.encoder, p.layer}).second) {
      throw ConfigError("planted pair (" + std::to_string(p.encoder) + "," + std::to_string(p.layer) +
                        ") is used more than once");
    }
  }
  for (const auto& t : tasks) {
    if (t.planted.empty()) throw ConfigError("task " + std::to_string(t.task_id) + " has no planted dependency");
  }
}

std::vector<double> class_code(std::size_t cls, std::size_t num_classes, std::size_t rank) {
  if (rank < 2) throw ConfigError("class codes need a planted rank of at least 2");
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(num_classes) +
                       std::numbers::pi / 4.0;
  std::vector<double> code(rank, 0.0);
  code[0] = std::cos(angle);
  code[1] = std::sin(angle);
  return code;
}

Dataset generate_dataset(const std::vector<TaskSpec>& tasks, const std::vector<EncoderSpec>& bank,
                         const RunConfig& config) {
  const auto& d = config.data;
  Dataset ds;
  ds.tasks = tasks;
  ds.vocab = {d.num_classes, d.num_tasks, config.model.lm.vocab_size};
  if (d.common_dependency) ds.common = {default_common_pair(config.model.bank.num_encoders, config.model.bank.num_layers)};
  check_dependencies(tasks, ds.common, config.model.bank);
  if (bank.empty()) throw ConfigError("empty encoder bank");

  const std::size_t rank = bank.front().subspace_rank();
  const std::size_t din = bank.front().input_dim;
  const auto planted = all_planted(tasks, ds.common);
  std::set<std::pair<std::size_t, std::size_t>> planted_set;
  for (const auto& p : planted) planted_set.insert({p.encoder, p.layer});

  std::mt19937_64 rng(d.seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, d.num_classes - 1);

  auto make_example = [&](const TaskSpec& task, bool held_out) {
    Example ex;
    ex.task = static_cast<int>(task.task_id);
    const std::size_t lo = held_out ? task.train_templates : 0;
    const std::size_t hi = held_out ? task.templates.size() : task.train_templates;
    ex.cluster_id = std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng);
    ex.prompt = task.templates[ex.cluster_id];
    ex.audio.seed = rng();

    std::vector<double> frames(d.frames * din, 0.0);
    std::mt19937_64 arng(ex.audio.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& spec : bank) {
      for (std::size_t l = 0; l < spec.planted_subspaces.size(); ++l) {
        const auto u = spec.planted_subspaces[l].data();  // [din x r]
        const bool is_planted = planted_set.count({spec.encoder_id, l}) > 0;
        std::vector<double> code(rank, 0.0);
        if (is_planted) code = class_code(pick_class(arng), d.num_classes, rank);
        const double noise = is_planted ? d.signal_noise : d.background_noise;
        for (std::size_t t = 0; t < d.frames; ++t) {
          for (std::size_t j = 0; j < rank; ++j) {
            const double c = code[j] + noise * normal(arng);
            for (std::size_t i = 0; i < din; ++i) frames[t * din + i] += u[i * rank + j] * c;
          }
        }
      }
    }
    ex.audio.frames = ag::Tensor::from({d.frames, din}, std::move(frames));
    ex.target = derive_target(task, ds.common, bank, ds.vocab, ex.audio);
    ex.stacks = encode_all(bank, ex.audio);
    return ex;
  };

  const auto n_train = static_cast<std::size_t>(std::lround(d.train_fraction * static_cast<double>(d.n_per_task)));
  const auto n_dev = static_cast<std::size_t>(std::lround(d.dev_fraction * static_cast<double>(d.n_per_task)));
  if (n_train == 0 || n_train + n_dev >= d.n_per_task) {
    throw ConfigError("n_per_task " + std::to_string(d.n_per_task) + " leaves an empty train or test split");
  }
  for (const auto& task : tasks) {
    for (std::size_t i = 0; i < d.n_per_task; ++i) {
      if (i < n_train) {
        ds.train.push_back(make_example(task, false));
      } else if (i < n_train + n_dev) {
        ds.dev.push_back(make_example(task, true));
      } else {
        ds.test.push_back(make_example(task, true));
      }
    }
  }
  return ds;
}

Dataset generate_dataset(const RunConfig& config) {
  validate(config);
  return generate_dataset(make_tasks(config), make_bank(config.model.bank), config);
}

std::vector<int> derive_target(const TaskSpec& task, const std::vector<PlantedPair>& common,
                               const std::vector<EncoderSpec>& bank, const Vocabulary& vocab,
                               const SyntheticAudio& audio) {
  ag::NoGradGuard guard;
  const auto mean_frame = ag::mean_pool_rows(audio.frames, audio.frames.rows());
  std::vector<int> target;
  for (const auto& p : task.planted) {
    target.push_back(vocab.symbol(decode_class(bank.at(p.encoder), p, mean_frame, vocab.num_classes)));
  }
  for (const auto& p : common) {
    target.push_back(vocab.symbol(decode_class(bank.at(p.encoder), p, mean_frame, vocab.num_classes)));
  }
  target.push_back(kEosToken);
  return target;
}

nlohmann::json to_json(const Example& ex) {
  const auto v = ex.audio.frames.data();
  return {{"task", ex.task},
          {"cluster", ex.cluster_id},
          {"prompt", ex.prompt},
          {"target", ex.target},
          {"audio_seed", ex.audio.seed},
          {"frames", ex.audio.frames.rows()},
          {"features", ex.audio.frames.cols()},
          {"audio", std::vector<double>(v.begin(), v.end())}};
}

nlohmann::json to_json(const TaskSpec& task) {
  nlohmann::json planted = nlohmann::json::array();
  for (const auto& p : task.planted) planted.push_back({p.encoder, p.layer});
  return {{"task", task.task_id},
          {"planted", planted},
          {"train_templates", task.train_templates},
          {"templates", task.templates}};
}

}  // namespace pam
