#include <doctest.h>

#include <cmath>
#include <fstream>

#include "rxlora/checkpoint.hpp"
#include "rxlora/model.hpp"
#include "test_util.hpp"

using namespace rxlora;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 64;
  c.max_seq_len = 24;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  return c;
}

TokenSequence random_tokens(std::mt19937_64& rng, std::size_t vocab, std::size_t len) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSequence t(len);
  for (auto& x : t) x = tok(rng);
  return t;
}

void randomize_adapters(ModelParams& p, std::uint64_t seed, float stddev = 0.05f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, stddev);
  for_each_tensor(p, [&](const std::string&, ad::Tensor& t, TensorRole role) {
    if (role == TensorRole::kAdapter) {
      for (auto& x : t.data()) x = d(rng);
    }
  });
}

float max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_tensors(const ModelParams& a, const ModelParams& b) {
  std::vector<std::pair<std::string, ad::Tensor>> ta;
  std::vector<std::pair<std::string, ad::Tensor>> tb;
  for_each_tensor(a, [&](const std::string& n, const ad::Tensor& t, TensorRole) { ta.emplace_back(n, t); });
  for_each_tensor(b, [&](const std::string& n, const ad::Tensor& t, TensorRole) { tb.emplace_back(n, t); });
  return ta == tb;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation") {
    ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    CHECK(ModelConfig{}.lora_scale() == 2.0f);
    c.n_heads = 5;
    CHECK_THROWS_KIND(c.validate(), ErrorKind::kInvariantViolation);
    c = small_config();
    c.lora_rank = 0;
    CHECK_THROWS_KIND(c.validate(), ErrorKind::kInvariantViolation);
    c = small_config();
    c.max_seq_len = 1;
    CHECK_THROWS_KIND(c.validate(), ErrorKind::kInvariantViolation);
  }

  TEST_CASE("init is deterministic, adapters zero-composite, base frozen") {
    const ModelParams a = init(small_config(), 1);
    const ModelParams b = init(small_config(), 1);
    CHECK(same_tensors(a, b));
    CHECK_FALSE(same_tensors(a, init(small_config(), 2)));
    std::size_t adapters = 0;
    for_each_tensor(a, [&](const std::string& name, const ad::Tensor& t, TensorRole role) {
      if (role == TensorRole::kBase) {
        CHECK_MESSAGE(!t.requires_grad(), name);
      } else {
        CHECK_MESSAGE(t.requires_grad(), name);
        ++adapters;
        if (name.ends_with("lora_up")) {
          for (float x : t.data()) CHECK(x == 0.0f);
        }
      }
      if (name.ends_with(".gain")) {
        for (float x : t.data()) CHECK(x == 1.0f);
      }
      if (name.ends_with(".bias")) {
        for (float x : t.data()) CHECK(x == 0.0f);
      }
    });
    // Token embedding, six linears per block and the unembedding, two factors each.
    CHECK(adapters == 2 * (1 + 6 * small_config().n_layers + 1));
  }

  TEST_CASE("adapter parameter arithmetic") {
    ModelConfig c = small_config();
    c.n_layers = 1;
    const ModelParams p = init(c, 0);
    const std::size_t d = c.d_model;
    const std::size_t r = c.lora_rank;
    const std::size_t v = c.vocab_size;
    const std::size_t expected = r * (v + d)          // embedding
                                 + 4 * r * (d + d)      // attention projections
                                 + 2 * r * (d + c.d_ff)  // MLP
                                 + r * (d + v);          // unembedding
    CHECK(count_parameters(p, TensorRole::kAdapter) == expected);
    CHECK(r * (d + d) < d * d);
  }

  TEST_CASE("logits shape and sequence length limits") {
    ModelConfig c = small_config();
    c.vocab_size = 64;
    const ModelParams p = init(c, 3);
    std::mt19937_64 rng(1);
    const ad::Tensor logits = forward_adapted(p, random_tokens(rng, 64, 7));
    CHECK(logits.shape() == ad::Shape{7, 64});
    CHECK_THROWS_KIND(forward_adapted(p, random_tokens(rng, 64, c.max_seq_len + 1)), ErrorKind::kSequenceTooLong);
    CHECK_NOTHROW(forward_adapted(p, random_tokens(rng, 64, c.max_seq_len)));
    CHECK_THROWS_KIND(forward_adapted(p, TokenSequence{1, 64}), ErrorKind::kInvalidTokenId);
  }

  TEST_CASE("zero-init adapters are transparent") {
    const ModelParams p = init(small_config(), 4);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
      const auto toks = random_tokens(rng, 30, 1 + rng() % 20);
      const ad::Tensor adapted = forward_adapted(p, toks);
      const ad::Tensor base = forward_adapted(p, toks, {.use_adapters = false});
      CHECK(max_abs_diff(adapted, base) <= 1e-6f);
    }
  }

  TEST_CASE("causality") {
    ModelParams p = init(small_config(), 5);
    randomize_adapters(p, 5);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      auto toks = random_tokens(rng, 30, 12);
      const ad::Tensor before = forward_adapted(p, toks);
      const std::size_t t = 1 + rng() % 11;
      for (std::size_t j = t; j < toks.size(); ++j) toks[j] = static_cast<TokenId>((toks[j] + 7) % 30);
      const ad::Tensor after = forward_adapted(p, toks);
      for (std::size_t row = 0; row < t; ++row) {
        for (std::size_t col = 0; col < 30; ++col) CHECK(before.at(row, col) == after.at(row, col));
      }
      bool changed = false;
      for (std::size_t col = 0; col < 30; ++col) changed = changed || before.at(t, col) != after.at(t, col);
      CHECK(changed);
    }
  }

  TEST_CASE("packed sequences do not attend across boundaries") {
    ModelParams p = init(small_config(), 6);
    randomize_adapters(p, 6);
    std::mt19937_64 rng(4);
    const std::vector<TokenSequence> seqs = {random_tokens(rng, 30, 5), random_tokens(rng, 30, 9),
                                             random_tokens(rng, 30, 3)};
    ad::Tape tape;
    const ad::Tensor packed = forward_packed(static_cast<const ModelParams&>(p), tape, seqs).value();
    std::size_t row = 0;
    for (const auto& s : seqs) {
      const ad::Tensor alone = forward_adapted(p, s);
      for (std::size_t r = 0; r < s.size(); ++r, ++row) {
        for (std::size_t col = 0; col < 30; ++col) CHECK(std::abs(packed.at(row, col) - alone.at(r, col)) <= 1e-5f);
      }
    }
  }

  TEST_CASE("merged weights reproduce the adapted forward") {
    ModelParams p = init(small_config(), 7);
    randomize_adapters(p, 7);
    const ModelParams merged = merge_adapters(p);
    CHECK_FALSE(merged.has_adapters());
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
      const auto toks = random_tokens(rng, 30, 2 + rng() % 20);
      CHECK(max_abs_diff(forward_adapted(p, toks), forward_adapted(merged, toks)) <= 1e-4f);
    }
  }

  TEST_CASE("merging zero adapters leaves weights unchanged, re-merging changes nothing") {
    const ModelParams p = init(small_config(), 8);
    ModelParams merged = merge_adapters(p);
    ModelParams base = p;
    for_each_tensor(merged, [&](const std::string& name, const ad::Tensor& t, TensorRole) {
      for_each_tensor(base, [&](const std::string& other, const ad::Tensor& u, TensorRole role) {
        if (other == name && role == TensorRole::kBase) CHECK(t == u);
      });
    });
    attach_adapters(merged, 99);
    CHECK(same_tensors(merge_adapters(merged), merge_adapters(p)));
  }

  TEST_CASE("checkpoint round trip, split files and mismatches") {
    test::TempDir dir("ckpt");
    ModelParams p = init(small_config(), 9);
    randomize_adapters(p, 9);
    save_checkpoint(p, dir / "all.ckpt");
    CHECK(same_tensors(load_checkpoint(dir / "all.ckpt"), p));

    save_checkpoint(p, dir / "base.ckpt", CheckpointContent::kBase);
    save_checkpoint(p, dir / "adapters.ckpt", CheckpointContent::kAdapters);
    ModelParams q = load_checkpoint(dir / "base.ckpt");
    CHECK_FALSE(same_tensors(q, p));
    load_adapters(q, dir / "adapters.ckpt");
    CHECK(same_tensors(q, p));
    CHECK(read_checkpoint_config(dir / "base.ckpt").d_model == small_config().d_model);

    ModelConfig other = small_config();
    other.lora_rank = 2;
    ModelParams r = init(other, 9);
    CHECK_THROWS_KIND(load_adapters(r, dir / "adapters.ckpt"), ErrorKind::kCheckpointMismatch);
    CHECK_THROWS_KIND(load_checkpoint(dir / "adapters.ckpt"), ErrorKind::kCheckpointMismatch);
    CHECK_THROWS_KIND(load_checkpoint(dir / "missing.ckpt"), ErrorKind::kIo);

    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_KIND(load_checkpoint(dir / "junk.ckpt"), ErrorKind::kCheckpointMismatch);
  }
}
