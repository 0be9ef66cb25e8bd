#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rxlora/model.hpp"
#include "rxlora/prescription.hpp"
#include "rxlora/tokenizer.hpp"

namespace rxlora {

struct SamplerConfig {
  std::size_t top_k = 50;
  double top_p = 0.7;
  double temperature = 0.95;
  std::size_t max_new_tokens = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

// Temperature, then top-k, then the smallest descending-probability prefix of
// the top-k whose renormalised mass reaches top_p. Equal probabilities are
// ordered by lower token id. Returns a full-vocabulary distribution with
// zeros outside the survivors.
std::vector<double> filter_logits(std::span<const float> logits, const SamplerConfig& cfg);

// Samples until EOS or max_new_tokens; the result excludes the prompt and EOS.
// Throws PromptTooLong when the prompt does not fit the context window.
TokenSequence generate(const ModelParams& params, const TokenSequence& prompt, const SamplerConfig& cfg);

// Greedy decoding (argmax, lowest id on ties).
TokenSequence generate_greedy(const ModelParams& params, const TokenSequence& prompt, std::size_t max_new_tokens);

struct Prediction {
  std::string text;
  std::optional<Prescription> prescription;
  std::vector<ParseWarning> warnings;
};

// render_prompt -> encode -> generate -> decode -> parse_lenient.
Prediction predict_prescription(const ModelParams& params, const Vocabulary& vocab, const ClinicalRecord& record,
                                const SamplerConfig& cfg);

// Prompt tokens as fed to the model (BOS + encoded prompt).
TokenSequence prompt_tokens(const Vocabulary& vocab, const ClinicalRecord& record);

}  // namespace rxlora
