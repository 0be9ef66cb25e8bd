#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rxlora/corpus.hpp"
#include "rxlora/model.hpp"
#include "rxlora/tokenizer.hpp"

namespace rxlora {

struct TrainConfig {
  std::size_t epochs = 10;
  double base_lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t grad_accum_steps = 8;
  std::uint64_t seed = 0;
  bool prompt_masked = true;
  double weight_decay = 0.0;

  void validate() const;
};

// One training sequence: BOS + prompt + target + EOS (+ optional PAD).
// loss_mask[j] marks whether predicting tokens[j + 1] from tokens[0..j]
// contributes to the loss.
struct TrainingExample {
  TokenSequence tokens;
  std::vector<bool> loss_mask;

  std::size_t loss_positions() const;
};

TrainingExample build_example(const TokenSequence& prompt, const TokenSequence& target, bool prompt_masked = true,
                              std::size_t pad_to = 0);
TrainingExample build_example(const Vocabulary& vocab, const ClinicalRecord& record, bool prompt_masked = true);

// Mean token negative log-likelihood over the masked positions.
double example_loss(const ModelParams& params, const TrainingExample& example);
double sequence_loss(const ModelParams& params, const TokenSequence& prompt_tokens, const TokenSequence& target_tokens);

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

// Adds d/d(adapters) of sum_i mean_nll(example_i) / normalizer into the
// adapter gradient buffers; returns sum_i mean_nll(example_i).
double accumulate_gradients(ModelParams& params, std::span<const TrainingExample> examples, double normalizer);

// Adaptive moments with decoupled weight decay over the adapter tensors.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  AdamW(const ModelParams& params, double weight_decay = 0.0);

  // Applies one update from the current gradients, then zeroes them.
  void step(ModelParams& params, double lr);

  std::size_t steps() const noexcept { return step_; }
  const std::vector<ad::FloatBuffer>& first_moments() const noexcept { return m_; }
  const std::vector<ad::FloatBuffer>& second_moments() const noexcept { return v_; }

 private:
  double weight_decay_;
  std::size_t step_ = 0;
  std::vector<ad::FloatBuffer> m_;
  std::vector<ad::FloatBuffer> v_;
};

struct TrainLogEntry {
  std::size_t step;
  std::size_t epoch;
  double lr;
  double loss;
};

struct TrainHooks {
  // Called after every optimizer update.
  std::function<void(const TrainLogEntry&)> on_step;
  // Called after every epoch with the 1-based epoch number.
  std::function<void(std::size_t, const ModelParams&)> on_epoch_end;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::size_t total_steps = 0;
};

// Trains the adapters of params in place; the base stays bit-identical.
// Throws EmptyCorpus, SequenceTooLong, NonFiniteLoss.
TrainResult train(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

std::string format_log_csv(const std::vector<TrainLogEntry>& log);

}  // namespace rxlora
