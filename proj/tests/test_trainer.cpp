#include <doctest.h>

#include <cmath>
#include <set>

#include "rxlora/trainer.hpp"
#include "test_util.hpp"

using namespace rxlora;

namespace {

ModelConfig tiny(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 64;
  c.max_seq_len = 64;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  return c;
}

struct Fixture {
  Corpus corpus = generate_synthetic({.n_records = 40, .n_herbs = 12, .herbs_per_rx_mean = 3, .n_symptom_tokens = 8,
                                      .symptoms_per_record = 2, .rng_seed = 3})
                      .corpus;
  Vocabulary vocab = build_vocab(corpus);
};

std::vector<std::pair<std::string, ad::Tensor>> snapshot(const ModelParams& p, TensorRole wanted) {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for_each_tensor(p, [&](const std::string& name, const ad::Tensor& t, TensorRole role) {
    if (role == wanted) out.emplace_back(name, t);
  });
  return out;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    CHECK_THROWS_KIND((TrainConfig{.epochs = 0}.validate()), ErrorKind::kUsage);
    CHECK_THROWS_KIND((TrainConfig{.base_lr = 0}.validate()), ErrorKind::kUsage);
    CHECK_THROWS_KIND((TrainConfig{.batch_size = 0}.validate()), ErrorKind::kUsage);
    CHECK_THROWS_KIND((TrainConfig{.grad_accum_steps = 0}.validate()), ErrorKind::kUsage);
    const TrainConfig d;
    CHECK(d.epochs == 10);
    CHECK(d.base_lr == 1e-3);
    CHECK(d.batch_size == 16);
    CHECK(d.grad_accum_steps == 8);
  }

  TEST_CASE("training examples mask the prompt") {
    const TrainingExample ex = build_example(TokenSequence{10, 11, 12}, TokenSequence{20, 21});
    CHECK(ex.tokens == TokenSequence{kBos, 10, 11, 12, 20, 21, kEos});
    CHECK(ex.loss_mask == std::vector<bool>{false, false, false, true, true, true});
    CHECK(ex.loss_positions() == 3);
    const TrainingExample unmasked = build_example(TokenSequence{10, 11, 12}, TokenSequence{20, 21}, false);
    CHECK(unmasked.loss_positions() == 6);
    const TrainingExample padded = build_example(TokenSequence{10}, TokenSequence{20}, true, 7);
    CHECK(padded.tokens == TokenSequence{kBos, 10, 20, kEos, kPad, kPad, kPad});
    CHECK(padded.loss_positions() == 2);
  }

  TEST_CASE("untrained loss is close to log vocabulary size") {
    Fixture f;
    const ModelParams p = init(tiny(f.vocab.size()), 1);
    const double ln_v = std::log(static_cast<double>(f.vocab.size()));
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& r = f.corpus.records()[i];
      const double loss =
          sequence_loss(p, encode(f.vocab, render_prompt(r)), encode(f.vocab, serialize(r.prescription)));
      CHECK(std::abs(loss - ln_v) / ln_v < 0.15);
    }
  }

  TEST_CASE("loss masking contract") {
    Fixture f;
    ModelParams p = init(tiny(f.vocab.size()), 2);
    std::mt19937_64 rng(2);
    for_each_tensor(p, [&](const std::string&, ad::Tensor& t, TensorRole role) {
      std::normal_distribution<float> d(0.0f, 0.05f);
      if (role == TensorRole::kAdapter) {
        for (auto& x : t.data()) x = d(rng);
      }
    });
    TokenSequence prompt = encode(f.vocab, render_prompt(f.corpus.records()[0]));
    const TokenSequence target = encode(f.vocab, serialize(f.corpus.records()[0].prescription));
    const double base = sequence_loss(p, prompt, target);
    prompt[1] = prompt[1] == 5 ? 6 : 5;
    CHECK(sequence_loss(p, prompt, target) != base);
    prompt[1] = encode(f.vocab, render_prompt(f.corpus.records()[0]))[1];
    const TrainingExample padded = build_example(prompt, target, true, prompt.size() + target.size() + 4);
    CHECK(example_loss(p, padded) == doctest::Approx(base).epsilon(1e-6));
  }

  TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 100, 1e-3) == 1e-3);
    CHECK(std::abs(cosine_lr(100, 100, 1e-3)) <= 1e-12);
    CHECK(cosine_lr(50, 100, 1e-3) == doctest::Approx(5e-4).epsilon(1e-12));
    double prev = cosine_lr(0, 1000, 2e-3);
    for (std::size_t s = 1; s <= 1000; ++s) {
      const double lr = cosine_lr(s, 1000, 2e-3);
      CHECK(lr <= prev);
      prev = lr;
    }
    CHECK_THROWS_KIND(cosine_lr(0, 0, 1e-3), ErrorKind::kUsage);
  }

  TEST_CASE("accumulated micro-batches equal one concatenated batch") {
    Fixture f;
    ModelParams a = init(tiny(f.vocab.size()), 3);
    std::mt19937_64 rng(3);
    for_each_tensor(a, [&](const std::string&, ad::Tensor& t, TensorRole role) {
      std::normal_distribution<float> d(0.0f, 0.05f);
      if (role == TensorRole::kAdapter) {
        for (auto& x : t.data()) x = d(rng);
      }
    });
    ModelParams b = a;
    std::vector<TrainingExample> examples;
    for (std::size_t i = 0; i < 12; ++i) examples.push_back(build_example(f.vocab, f.corpus.records()[i]));

    const double whole = accumulate_gradients(a, examples, 12.0);
    double parts = 0.0;
    for (std::size_t start = 0; start < 12; start += 4) {
      parts += accumulate_gradients(b, std::span<const TrainingExample>(examples).subspan(start, 4), 12.0);
    }
    CHECK(parts == doctest::Approx(whole).epsilon(1e-5));
    const auto ga = snapshot(a, TensorRole::kAdapter);
    const auto gb = snapshot(b, TensorRole::kAdapter);
    double worst = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const auto x = ga[i].second.grad();
      const auto y = gb[i].second.grad();
      REQUIRE(x.size() == y.size());
      for (std::size_t j = 0; j < x.size(); ++j) worst = std::max(worst, static_cast<double>(std::abs(x[j] - y[j])));
    }
    CHECK(worst <= 1e-5);

    // One optimizer update on each side lands on the same adapters.
    AdamW oa(a);
    AdamW ob(b);
    oa.step(a, 1e-3);
    ob.step(b, 1e-3);
    const auto wa = snapshot(a, TensorRole::kAdapter);
    const auto wb = snapshot(b, TensorRole::kAdapter);
    double wdiff = 0.0;
    for (std::size_t i = 0; i < wa.size(); ++i) {
      for (std::size_t j = 0; j < wa[i].second.size(); ++j) {
        wdiff = std::max(wdiff, static_cast<double>(std::abs(wa[i].second[j] - wb[i].second[j])));
      }
    }
    CHECK(wdiff <= 1e-5);
  }

  TEST_CASE("optimizer moments mirror the adapters") {
    Fixture f;
    const ModelParams p = init(tiny(f.vocab.size()), 4);
    const AdamW opt(p);
    const auto adapters = snapshot(p, TensorRole::kAdapter);
    REQUIRE(opt.first_moments().size() == adapters.size());
    for (std::size_t i = 0; i < adapters.size(); ++i) {
      CHECK(opt.first_moments()[i].size() == adapters[i].second.size());
      CHECK(opt.second_moments()[i].size() == adapters[i].second.size());
    }
  }

  TEST_CASE("training keeps the base bit-identical and is deterministic") {
    Fixture f;
    const ModelParams start = init(tiny(f.vocab.size()), 5);
    ModelParams a = start;
    ModelParams b = start;
    const TrainConfig cfg{.epochs = 2, .batch_size = 4, .grad_accum_steps = 2, .seed = 9};
    const TrainResult ra = train(a, f.corpus, f.vocab, cfg);
    train(b, f.corpus, f.vocab, cfg);
    CHECK(ra.total_steps == 2 * 5);
    CHECK(ra.log.size() == ra.total_steps);
    CHECK(ra.log.front().lr == 1e-3);
    CHECK(snapshot(a, TensorRole::kBase) == snapshot(start, TensorRole::kBase));
    for (const auto& [name, t] : snapshot(a, TensorRole::kBase)) CHECK_MESSAGE(!t.has_grad(), name);
    CHECK(snapshot(a, TensorRole::kAdapter) == snapshot(b, TensorRole::kAdapter));
    CHECK(snapshot(a, TensorRole::kAdapter) != snapshot(start, TensorRole::kAdapter));

    ModelParams c = start;
    train(c, f.corpus, f.vocab, TrainConfig{.epochs = 2, .batch_size = 4, .grad_accum_steps = 2, .seed = 10});
    CHECK(snapshot(c, TensorRole::kAdapter) != snapshot(a, TensorRole::kAdapter));
  }

  TEST_CASE("every adapter tensor receives gradient") {
    Fixture f;
    ModelParams p = init(tiny(f.vocab.size()), 6);
    std::vector<TrainingExample> examples;
    for (std::size_t i = 0; i < 8; ++i) examples.push_back(build_example(f.vocab, f.corpus.records()[i]));
    AdamW opt(p);
    std::set<std::string> nonzero;
    for (int step = 0; step < 2; ++step) {
      accumulate_gradients(p, examples, 8.0);
      for_each_tensor(p, [&](const std::string& name, const ad::Tensor& t, TensorRole role) {
        if (role != TensorRole::kAdapter) return;
        for (float g : t.grad()) {
          if (g != 0.0f) nonzero.insert(name);
        }
      });
      opt.step(p, 1e-3);
    }
    CHECK(nonzero.size() == snapshot(p, TensorRole::kAdapter).size());
  }

  TEST_CASE("a single record can be overfit") {
    Fixture f;
    const Corpus one({f.corpus.records()[0]});
    ModelParams p = init(tiny(f.vocab.size()), 7);
    const TrainingExample ex = build_example(f.vocab, one.records()[0]);
    const double before = example_loss(p, ex);
    const TrainResult r = train(p, one, f.vocab, TrainConfig{.epochs = 200, .base_lr = 1e-2});
    CHECK(r.total_steps == 200);
    CHECK(example_loss(p, ex) < 0.1 * before);
  }

  TEST_CASE("training errors") {
    Fixture f;
    ModelParams p = init(tiny(f.vocab.size()), 8);
    CHECK_THROWS_KIND(train(p, Corpus{}, f.vocab, TrainConfig{}), ErrorKind::kEmptyCorpus);
    ModelParams wrong = init(tiny(f.vocab.size() + 1), 8);
    CHECK_THROWS_KIND(train(wrong, f.corpus, f.vocab, TrainConfig{}), ErrorKind::kCheckpointMismatch);
    ModelConfig short_cfg = tiny(f.vocab.size());
    short_cfg.max_seq_len = 8;
    ModelParams cramped = init(short_cfg, 8);
    CHECK_THROWS_KIND(train(cramped, f.corpus, f.vocab, TrainConfig{}), ErrorKind::kSequenceTooLong);

    for_each_tensor(p, [](const std::string& name, ad::Tensor& t, TensorRole) {
      if (name == "unembed.lora_up") t[0] = NAN;
    });
    CHECK_THROWS_KIND(train(p, f.corpus, f.vocab, TrainConfig{.epochs = 1}), ErrorKind::kNonFiniteLoss);
  }

  TEST_CASE("training log CSV") {
    const std::string csv = format_log_csv({{0, 1, 1e-3, 2.5}, {1, 1, 5e-4, 2.25}});
    CHECK(csv == "step,epoch,lr,loss\n0,1,0.001,2.5\n1,1,0.0005,2.25\n");
  }
}
