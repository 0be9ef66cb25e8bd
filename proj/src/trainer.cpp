#include "rxlora/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

struct PackedBatch {
  std::vector<TokenSequence> inputs;
  std::vector<std::int32_t> targets;
  std::vector<float> weights;
};

// Each example contributes weight / (its loss positions) per masked row.
PackedBatch pack(std::span<const TrainingExample> examples, double weight) {
  PackedBatch b;
  for (const auto& ex : examples) {
    const std::size_t n = ex.tokens.size();
    if (n < 2) throw Error(ErrorKind::kShapeMismatch, "training example needs at least two tokens");
    const std::size_t positions = ex.loss_positions();
    if (positions == 0) throw Error(ErrorKind::kShapeMismatch, "training example has no loss positions");
    b.inputs.emplace_back(ex.tokens.begin(), ex.tokens.end() - 1);
    const auto w = static_cast<float>(weight / static_cast<double>(positions));
    for (std::size_t j = 0; j + 1 < n; ++j) {
      b.targets.push_back(ex.tokens[j + 1]);
      b.weights.push_back(ex.loss_mask[j] ? w : 0.0f);
    }
  }
  return b;
}

}  // namespace

void TrainConfig::validate() const {
  const auto bad = [](const std::string& why) { throw Error(ErrorKind::kUsage, "train config: " + why); };
  if (epochs < 1) bad("epochs must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) bad("base_lr must be positive");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (grad_accum_steps < 1) bad("grad_accum_steps must be >= 1");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
}

std::size_t TrainingExample::loss_positions() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
}

TrainingExample build_example(const TokenSequence& prompt, const TokenSequence& target, bool prompt_masked,
                              std::size_t pad_to) {
  TrainingExample ex;
  ex.tokens.reserve(prompt.size() + target.size() + 2);
  ex.tokens.push_back(kBos);
  ex.tokens.insert(ex.tokens.end(), prompt.begin(), prompt.end());
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  ex.tokens.push_back(kEos);
  const std::size_t eos_index = ex.tokens.size() - 1;
  while (ex.tokens.size() < pad_to) ex.tokens.push_back(kPad);
  ex.loss_mask.assign(ex.tokens.size() - 1, false);
  const std::size_t first_target = prompt_masked ? 1 + prompt.size() : 1;
  // Position j predicts tokens[j + 1].
  for (std::size_t j = first_target - 1; j < eos_index; ++j) ex.loss_mask[j] = true;
  return ex;
}

TrainingExample build_example(const Vocabulary& vocab, const ClinicalRecord& record, bool prompt_masked) {
  return build_example(encode(vocab, render_prompt(record)), encode(vocab, serialize(record.prescription)),
                       prompt_masked);
}

double example_loss(const ModelParams& params, const TrainingExample& example) {
  const PackedBatch b = pack(std::span<const TrainingExample>(&example, 1), 1.0);
  ad::Tape tape;
  const ad::Var logits = forward_packed(params, tape, b.inputs);
  return ad::cross_entropy_from_logits(logits, b.targets, b.weights).value().item();
}

double sequence_loss(const ModelParams& params, const TokenSequence& prompt_tokens,
                     const TokenSequence& target_tokens) {
  return example_loss(params, build_example(prompt_tokens, target_tokens, true));
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw Error(ErrorKind::kUsage, "cosine_lr: total_steps must be >= 1");
  step = std::min(step, total_steps);
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double accumulate_gradients(ModelParams& params, std::span<const TrainingExample> examples, double normalizer) {
  const PackedBatch b = pack(examples, 1.0 / normalizer);
  ad::Tape tape;
  const ad::Var logits = forward_packed(params, tape, b.inputs);
  const ad::Var loss = ad::cross_entropy_from_logits(logits, b.targets, b.weights);
  const double value = static_cast<double>(loss.value().item()) * normalizer;
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::kNonFiniteLoss, "non-finite loss over a micro-batch of " +
                                               std::to_string(examples.size()) + " examples");
  }
  tape.backward(loss);
  return value;
}

AdamW::AdamW(const ModelParams& params, double weight_decay) : weight_decay_(weight_decay) {
  for_each_tensor(params, [&](const std::string&, const ad::Tensor& t, TensorRole role) {
    if (role != TensorRole::kAdapter) return;
    m_.emplace_back(t.size(), 0.0f);
    v_.emplace_back(t.size(), 0.0f);
  });
}

void AdamW::step(ModelParams& params, double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
  std::size_t slot = 0;
  for_each_tensor(params, [&](const std::string& name, ad::Tensor& t, TensorRole role) {
    if (role != TensorRole::kAdapter) return;
    if (slot >= m_.size() || m_[slot].size() != t.size()) {
      throw Error(ErrorKind::kShapeMismatch, "optimizer state does not match adapter '" + name + "'");
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    ++slot;
    if (!t.has_grad()) return;
    const auto g = t.grad();
    auto w = t.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * g[i]);
      v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * static_cast<double>(g[i]) * g[i]);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] = static_cast<float>(w[i] - lr * (m_hat / (std::sqrt(v_hat) + kEpsilon) + weight_decay_ * w[i]));
    }
    t.zero_grad();
  });
}

TrainResult train(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (corpus.empty()) throw Error(ErrorKind::kEmptyCorpus, "training corpus is empty");
  if (!params.has_adapters()) throw Error(ErrorKind::kInvariantViolation, "model has no adapters to train");
  if (params.config.vocab_size != vocab.size()) {
    throw Error(ErrorKind::kCheckpointMismatch, "model vocab_size " + std::to_string(params.config.vocab_size) +
                                                    " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  set_trainable_adapters(params, true);

  std::vector<TrainingExample> examples;
  examples.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    examples.push_back(build_example(vocab, corpus.records()[i], cfg.prompt_masked));
    if (examples.back().tokens.size() - 1 > params.config.max_seq_len) {
      throw Error(ErrorKind::kSequenceTooLong, "record " + std::to_string(i) + " needs " +
                                                   std::to_string(examples.back().tokens.size() - 1) +
                                                   " positions, max_seq_len is " +
                                                   std::to_string(params.config.max_seq_len));
    }
  }

  const std::size_t n = examples.size();
  const std::size_t per_update = cfg.batch_size * cfg.grad_accum_steps;
  const std::size_t updates_per_epoch = (n + per_update - 1) / per_update;
  TrainResult result;
  result.total_steps = updates_per_epoch * cfg.epochs;

  for_each_tensor(params, [](const std::string&, ad::Tensor& t, TensorRole role) {
    if (role == TensorRole::kAdapter) t.zero_grad();
  });
  AdamW optimizer(params, cfg.weight_decay);
  std::vector<std::size_t> order(n);
  std::vector<TrainingExample> micro;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < n; start += per_update) {
      const std::size_t stop = std::min(n, start + per_update);
      const auto group = static_cast<double>(stop - start);
      double loss_sum = 0.0;
      for (std::size_t mb = start; mb < stop; mb += cfg.batch_size) {
        micro.clear();
        for (std::size_t i = mb; i < std::min(stop, mb + cfg.batch_size); ++i) micro.push_back(examples[order[i]]);
        try {
          loss_sum += accumulate_gradients(params, micro, group);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNonFiniteLoss) throw;
          throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ", step " +
                                                     std::to_string(step) + ": " + e.what());
        }
      }
      const double lr = cosine_lr(step, result.total_steps, cfg.base_lr);
      optimizer.step(params, lr);
      TrainLogEntry entry{step, epoch, lr, loss_sum / group};
      result.log.push_back(entry);
      if (hooks.on_step) hooks.on_step(entry);
      ++step;
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, params);
  }
  return result;
}

std::string format_log_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "step,epoch,lr,loss\n";
  for (const auto& e : log) os << e.step << ',' << e.epoch << ',' << e.lr << ',' << e.loss << '\n';
  return os.str();
}

}  // namespace rxlora
