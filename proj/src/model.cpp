#include "rxlora/model.hpp"

#include <cmath>
#include <random>
#include <type_traits>

#include <Eigen/Core>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

using ad::Tensor;
using ad::Var;

constexpr float kInitStd = 0.02f;

template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
  const auto linear = [&](const std::string& name, auto& lin) {
    fn(name + ".weight", lin.weight, TensorRole::kBase);
    if (lin.adapter) {
      fn(name + ".lora_down", lin.adapter->down, TensorRole::kAdapter);
      fn(name + ".lora_up", lin.adapter->up, TensorRole::kAdapter);
    }
  };
  const auto norm = [&](const std::string& name, auto& ln) {
    fn(name + ".gain", ln.gain, TensorRole::kBase);
    fn(name + ".bias", ln.bias, TensorRole::kBase);
  };
  fn("token_embedding.table", p.token_embedding.table, TensorRole::kBase);
  if (p.token_embedding.adapter) {
    fn("token_embedding.lora_down", p.token_embedding.adapter->down, TensorRole::kAdapter);
    fn("token_embedding.lora_up", p.token_embedding.adapter->up, TensorRole::kAdapter);
  }
  fn("position_embedding", p.position_embedding, TensorRole::kBase);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    norm(prefix + "ln_attn", b.ln_attn);
    linear(prefix + "query", b.query);
    linear(prefix + "key", b.key);
    linear(prefix + "value", b.value);
    linear(prefix + "attn_out", b.attn_out);
    norm(prefix + "ln_mlp", b.ln_mlp);
    linear(prefix + "mlp_in", b.mlp_in);
    linear(prefix + "mlp_out", b.mlp_out);
  }
  norm("ln_final", p.ln_final);
  linear("unembed", p.unembed);
}

template <class Fn>
void visit_adapted(ModelParams& p, Fn&& fn) {
  fn(p.token_embedding.adapter, p.token_embedding.table.rows(), p.config.d_model);
  for (auto& b : p.blocks) {
    for (Linear* lin : {&b.query, &b.key, &b.value, &b.attn_out, &b.mlp_in, &b.mlp_out}) {
      fn(lin->adapter, lin->weight.rows(), lin->weight.cols());
    }
  }
  fn(p.unembed.adapter, p.unembed.weight.rows(), p.unembed.weight.cols());
}

template <class Params>
struct Forward {
  using T = std::conditional_t<std::is_const_v<Params>, const Tensor, Tensor>;

  Params& p;
  ad::Tape& tape;
  bool adapters;

  Var param(T& t) { return tape.parameter(t); }

  template <class Lin>
  Var linear(Lin& lin, Var x) {
    Var y = ad::matmul(x, param(lin.weight));
    if (adapters && lin.adapter) {
      Var low = ad::scale(ad::matmul(x, param(lin.adapter->down)), p.config.lora_scale());
      y = ad::add(y, ad::matmul(low, param(lin.adapter->up)));
    }
    return y;
  }

  template <class Ln>
  Var norm(Ln& ln, Var x) {
    return ad::layer_norm(x, param(ln.gain), param(ln.bias));
  }

  Var run(std::span<const TokenSequence> sequences) {
    const auto& cfg = p.config;
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> positions;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& seq : sequences) {
      if (seq.empty()) throw Error(ErrorKind::kShapeMismatch, "empty sequence in forward pass");
      if (seq.size() > cfg.max_seq_len) {
        throw Error(ErrorKind::kSequenceTooLong, std::to_string(seq.size()) + " tokens exceed max_seq_len " +
                                                     std::to_string(cfg.max_seq_len));
      }
      spans.emplace_back(ids.size(), ids.size() + seq.size());
      for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq[t] < 0 || static_cast<std::size_t>(seq[t]) >= cfg.vocab_size) {
          throw Error(ErrorKind::kInvalidTokenId, "token id " + std::to_string(seq[t]) + " outside vocabulary");
        }
        ids.push_back(seq[t]);
        positions.push_back(static_cast<std::int32_t>(t));
      }
    }
    if (ids.empty()) throw Error(ErrorKind::kShapeMismatch, "forward pass over no tokens");

    Var x = ad::row_lookup(param(p.token_embedding.table), ids);
    if (adapters && p.token_embedding.adapter) {
      Var low = ad::scale(ad::row_lookup(param(p.token_embedding.adapter->down), ids), cfg.lora_scale());
      x = ad::add(x, ad::matmul(low, param(p.token_embedding.adapter->up)));
    }
    x = ad::add(x, ad::row_lookup(param(p.position_embedding), positions));

    const std::size_t head_dim = cfg.d_model / cfg.n_heads;
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
    for (auto& block : p.blocks) {
      Var h = norm(block.ln_attn, x);
      Var q = linear(block.query, h);
      Var k = linear(block.key, h);
      Var v = linear(block.value, h);
      std::vector<Var> per_sequence;
      per_sequence.reserve(spans.size());
      for (const auto& [begin, end] : spans) {
        Var qs = spans.size() == 1 ? q : ad::slice_rows(q, begin, end);
        Var ks = spans.size() == 1 ? k : ad::slice_rows(k, begin, end);
        Var vs = spans.size() == 1 ? v : ad::slice_rows(v, begin, end);
        std::vector<Var> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
          const std::size_t c0 = hd * head_dim;
          Var qh = ad::slice_cols(qs, c0, c0 + head_dim);
          Var kh = ad::slice_cols(ks, c0, c0 + head_dim);
          Var vh = ad::slice_cols(vs, c0, c0 + head_dim);
          Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), attn_scale);
          Var weights = ad::softmax(ad::causal_mask_fill(scores));
          heads.push_back(ad::matmul(weights, vh));
        }
        per_sequence.push_back(ad::concat_cols(heads));
      }
      Var attn = per_sequence.size() == 1 ? per_sequence.front() : ad::concat_rows(per_sequence);
      x = ad::add(x, linear(block.attn_out, attn));
      Var m = linear(block.mlp_out, ad::gelu(linear(block.mlp_in, norm(block.ln_mlp, x))));
      x = ad::add(x, m);
    }
    return linear(p.unembed, norm(p.ln_final, x));
  }
};

LoraAdapter make_adapter(std::size_t in, std::size_t out, std::size_t rank, std::mt19937_64& rng) {
  return LoraAdapter{Tensor::randn({in, rank}, kInitStd, rng), Tensor({rank, out}, 0.0f)};
}

void fold(Tensor& weight, const LoraAdapter& a, float scale) {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(weight.rows());
  const auto cols = static_cast<Eigen::Index>(weight.cols());
  const auto rank = static_cast<Eigen::Index>(a.down.cols());
  Eigen::Map<RowMajor> w(weight.data().data(), rows, cols);
  Eigen::Map<const RowMajor> down(a.down.data().data(), rows, rank);
  Eigen::Map<const RowMajor> up(a.up.data().data(), rank, cols);
  RowMajor delta = down * up;
  w += scale * delta;
}

}  // namespace

void ModelConfig::validate() const {
  const auto bad = [](const std::string& why) { throw Error(ErrorKind::kInvariantViolation, "model config: " + why); };
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) bad("dimensions must be >= 1");
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (lora_rank < 1) bad("lora_rank must be >= 1");
  if (max_seq_len < 2) bad("max_seq_len must be >= 2");
  if (!std::isfinite(lora_alpha) || lora_alpha <= 0.0f) bad("lora_alpha must be positive");
}

void for_each_tensor(ModelParams& params,
                     const std::function<void(const std::string&, ad::Tensor&, TensorRole)>& fn) {
  visit_tensors(params, fn);
}

void for_each_tensor(const ModelParams& params,
                     const std::function<void(const std::string&, const ad::Tensor&, TensorRole)>& fn) {
  visit_tensors(params, fn);
}

std::size_t count_parameters(const ModelParams& params, TensorRole role) {
  std::size_t total = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor& t, TensorRole r) {
    if (r == role) total += t.size();
  });
  return total;
}

ModelParams init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  ModelParams p;
  p.config = config;
  p.token_embedding.table = Tensor::randn({config.vocab_size, d}, kInitStd, rng);
  p.position_embedding = Tensor::randn({config.max_seq_len, d}, kInitStd, rng);
  const auto norm = [&] { return LayerNormParams{Tensor({d}, 1.0f), Tensor({d}, 0.0f)}; };
  const auto linear = [&](std::size_t in, std::size_t out) { return Linear{Tensor::randn({in, out}, kInitStd, rng), {}}; };
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    Block b;
    b.ln_attn = norm();
    b.query = linear(d, d);
    b.key = linear(d, d);
    b.value = linear(d, d);
    b.attn_out = linear(d, d);
    b.ln_mlp = norm();
    b.mlp_in = linear(d, config.d_ff);
    b.mlp_out = linear(config.d_ff, d);
    p.blocks.push_back(std::move(b));
  }
  p.ln_final = norm();
  p.unembed = linear(d, config.vocab_size);
  attach_adapters(p, seed ^ 0x9e3779b97f4a7c15ULL);
  set_trainable_adapters(p, true);
  return p;
}

void attach_adapters(ModelParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t r = params.config.lora_rank;
  visit_adapted(params, [&](std::optional<LoraAdapter>& slot, std::size_t in, std::size_t out) {
    slot = make_adapter(in, out, r, rng);
  });
}

void set_trainable_adapters(ModelParams& params, bool trainable) {
  for_each_tensor(params, [&](const std::string&, Tensor& t, TensorRole role) {
    t.set_requires_grad(role == TensorRole::kAdapter && trainable);
  });
}

ModelParams merge_adapters(const ModelParams& params) {
  ModelParams merged = params;
  const float s = params.config.lora_scale();
  if (merged.token_embedding.adapter) {
    fold(merged.token_embedding.table, *merged.token_embedding.adapter, s);
    merged.token_embedding.adapter.reset();
  }
  const auto merge_linear = [&](Linear& lin) {
    if (!lin.adapter) return;
    fold(lin.weight, *lin.adapter, s);
    lin.adapter.reset();
  };
  for (auto& b : merged.blocks) {
    for (Linear* lin : {&b.query, &b.key, &b.value, &b.attn_out, &b.mlp_in, &b.mlp_out}) merge_linear(*lin);
  }
  merge_linear(merged.unembed);
  for_each_tensor(merged, [](const std::string&, Tensor& t, TensorRole) {
    t.set_requires_grad(false);
    t.clear_grad();
  });
  return merged;
}

ad::Var forward_packed(ModelParams& params, ad::Tape& tape, std::span<const TokenSequence> sequences,
                       ForwardOptions options) {
  return Forward<ModelParams>{params, tape, options.use_adapters}.run(sequences);
}

ad::Var forward_packed(const ModelParams& params, ad::Tape& tape, std::span<const TokenSequence> sequences,
                       ForwardOptions options) {
  return Forward<const ModelParams>{params, tape, options.use_adapters}.run(sequences);
}

ad::Tensor forward_adapted(const ModelParams& params, const TokenSequence& tokens, ForwardOptions options) {
  ad::Tape tape;
  const ad::Var logits = forward_packed(params, tape, std::span<const TokenSequence>(&tokens, 1), options);
  return logits.value();
}

}  // namespace rxlora
