#include "rxlora/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

std::size_t argmax_lowest_id(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

template <class Pick>
TokenSequence decode_loop(const ModelParams& params, const TokenSequence& prompt, std::size_t max_new_tokens,
                          Pick&& pick) {
  const std::size_t limit = params.config.max_seq_len;
  if (prompt.empty()) throw Error(ErrorKind::kPromptTooLong, "prompt is empty");
  if (prompt.size() > limit) {
    throw Error(ErrorKind::kPromptTooLong, std::to_string(prompt.size()) + " prompt tokens exceed max_seq_len " +
                                               std::to_string(limit));
  }
  TokenSequence seq = prompt;
  TokenSequence out;
  while (out.size() < max_new_tokens && seq.size() < limit) {
    const ad::Tensor logits = forward_adapted(params, seq);
    const std::size_t v = logits.cols();
    const std::span<const float> last = logits.data().subspan((logits.rows() - 1) * v, v);
    const auto next = static_cast<TokenId>(pick(last));
    if (next == kEos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  const auto bad = [](const std::string& why) { throw Error(ErrorKind::kUsage, "sampler config: " + why); };
  if (top_k < 1) bad("top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) bad("top_p must lie in (0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) bad("temperature must be positive");
}

std::vector<double> filter_logits(std::span<const float> logits, const SamplerConfig& cfg) {
  cfg.validate();
  const std::size_t n = logits.size();
  std::vector<double> probs(n, 0.0);
  if (n == 0) return probs;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Descending logit equals descending probability; stable sort keeps lower ids first on ties.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  const std::size_t k = std::min(cfg.top_k, n);

  const double top = static_cast<double>(logits[order[0]]) / cfg.temperature;
  std::vector<double> mass(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mass[i] = std::exp(static_cast<double>(logits[order[i]]) / cfg.temperature - top);
    total += mass[i];
  }
  std::size_t keep = k;
  if (cfg.top_p < 1.0) {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      cumulative += mass[i] / total;
      if (cumulative >= cfg.top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double kept = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept += mass[i];
  for (std::size_t i = 0; i < keep; ++i) probs[order[i]] = mass[i] / kept;
  return probs;
}

TokenSequence generate(const ModelParams& params, const TokenSequence& prompt, const SamplerConfig& cfg) {
  cfg.validate();
  if (cfg.top_k == 1) return generate_greedy(params, prompt, cfg.max_new_tokens);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return decode_loop(params, prompt, cfg.max_new_tokens, [&](std::span<const float> row) {
    const auto probs = filter_logits(row, cfg);
    const double u = unit(rng);
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = i;
      cumulative += probs[i];
      if (u < cumulative) return i;
    }
    return last_positive;
  });
}

TokenSequence generate_greedy(const ModelParams& params, const TokenSequence& prompt, std::size_t max_new_tokens) {
  return decode_loop(params, prompt, max_new_tokens, argmax_lowest_id);
}

TokenSequence prompt_tokens(const Vocabulary& vocab, const ClinicalRecord& record) {
  TokenSequence seq{kBos};
  const TokenSequence body = encode(vocab, render_prompt(record));
  seq.insert(seq.end(), body.begin(), body.end());
  return seq;
}

Prediction predict_prescription(const ModelParams& params, const Vocabulary& vocab, const ClinicalRecord& record,
                                const SamplerConfig& cfg) {
  const TokenSequence generated = generate(params, prompt_tokens(vocab, record), cfg);
  Prediction p;
  p.text = decode(vocab, generated);
  auto parsed = parse_lenient(p.text);
  p.prescription = std::move(parsed.prescription);
  p.warnings = std::move(parsed.warnings);
  return p;
}

}  // namespace rxlora
