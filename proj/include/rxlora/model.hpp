#pragma once

// Pre-norm causal transformer whose linear maps and token embedding carry
// low-rank adapters on top of frozen base weights.
//
// Weights are stored input-major: a linear map with in_dim inputs and
// out_dim outputs keeps weight as (in_dim x out_dim) and computes x * weight
// for row activations x. The adapter keeps down (in_dim x r) and up
// (r x out_dim), so the adapted map is x * weight + (alpha / r) * (x * down) * up.
// down plays the role of B and up the role of A in W + A*B, transposed.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rxlora/autodiff.hpp"
#include "rxlora/tokenizer.hpp"

namespace rxlora {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 512;
  std::size_t lora_rank = 16;
  float lora_alpha = 32.0f;

  float lora_scale() const { return lora_alpha / static_cast<float>(lora_rank); }
  // Throws InvariantViolation.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LoraAdapter {
  ad::Tensor down;  // (in x r), Gaussian at init
  ad::Tensor up;    // (r x out), zero at init
};

struct Linear {
  ad::Tensor weight;  // (in x out), frozen
  std::optional<LoraAdapter> adapter;
};

// Token embedding: the adapter's down is an (vocab x r) lookup table and up
// maps it to d_model.
struct Embedding {
  ad::Tensor table;  // (vocab x d_model), frozen
  std::optional<LoraAdapter> adapter;
};

struct LayerNormParams {
  ad::Tensor gain;
  ad::Tensor bias;
};

struct Block {
  LayerNormParams ln_attn;
  Linear query;
  Linear key;
  Linear value;
  Linear attn_out;
  LayerNormParams ln_mlp;
  Linear mlp_in;
  Linear mlp_out;
};

struct ModelParams {
  ModelConfig config;
  Embedding token_embedding;
  ad::Tensor position_embedding;  // (max_seq_len x d_model), frozen, never adapted
  std::vector<Block> blocks;
  LayerNormParams ln_final;
  Linear unembed;  // d_model -> vocab

  bool has_adapters() const { return token_embedding.adapter.has_value(); }
};

enum class TensorRole { kBase, kAdapter };

// Visits every tensor with a stable dotted name, in a fixed order.
void for_each_tensor(ModelParams& params, const std::function<void(const std::string&, ad::Tensor&, TensorRole)>& fn);
void for_each_tensor(const ModelParams& params,
                     const std::function<void(const std::string&, const ad::Tensor&, TensorRole)>& fn);

std::size_t count_parameters(const ModelParams& params, TensorRole role);

// Random base (std 0.02, unit layer-norm gains, zero biases) plus adapters.
ModelParams init(const ModelConfig& config, std::uint64_t seed);
// Adds fresh adapters (down Gaussian std 0.02, up zero) to every linear map
// and the token embedding, replacing any existing ones.
void attach_adapters(ModelParams& params, std::uint64_t seed);
// Marks adapters trainable and the base frozen.
void set_trainable_adapters(ModelParams& params, bool trainable);

// Adapter-free copy with every adapter folded into its base weight.
ModelParams merge_adapters(const ModelParams& params);

struct ForwardOptions {
  bool use_adapters = true;
};

// Packed forward over several sequences: returns logits with one row per
// input token, sequences stacked in order. Attention never crosses a
// sequence boundary. Throws SequenceTooLong.
ad::Var forward_packed(ModelParams& params, ad::Tape& tape, std::span<const TokenSequence> sequences,
                       ForwardOptions options = {});
ad::Var forward_packed(const ModelParams& params, ad::Tape& tape, std::span<const TokenSequence> sequences,
                       ForwardOptions options = {});

// Logits (tokens.size() x vocab) for one sequence, no gradient tracking.
ad::Tensor forward_adapted(const ModelParams& params, const TokenSequence& tokens, ForwardOptions options = {});

}  // namespace rxlora
