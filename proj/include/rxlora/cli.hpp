#pragma once

// Batch commands over files: gen-data, split, augment, stats, train,
// predict, eval. Each command writes a run manifest next to its outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "rxlora/corpus.hpp"
#include "rxlora/metrics.hpp"
#include "rxlora/model.hpp"
#include "rxlora/sampler.hpp"
#include "rxlora/trainer.hpp"

namespace rxlora {

inline constexpr const char* kToolVersion = "0.1.0";

struct GenDataOptions {
  SyntheticSpec spec;
  std::filesystem::path out;  // corpus JSONL; ground truth goes to <out>.truth.json
};

struct SplitOptions {
  std::filesystem::path in;
  std::filesystem::path train_out;
  std::filesystem::path test_out;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct AugmentOptions {
  std::filesystem::path in;
  std::filesystem::path out;
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::filesystem::path corpus;
  std::filesystem::path vocab_from;  // empty: build the vocabulary from corpus
  std::filesystem::path out_dir;
  ModelConfig model;                 // vocab_size is filled in from the vocabulary
  TrainConfig train;
  std::uint64_t init_seed = 0;
};

struct PredictOptions {
  std::filesystem::path model_dir;
  std::filesystem::path records;
  std::filesystem::path out;
  SamplerConfig sampler;
  std::size_t threads = 1;
};

struct EvalOptions {
  std::filesystem::path truth;
  std::filesystem::path predictions;
  std::filesystem::path train;
  std::filesystem::path out;  // empty: no JSON report
  std::string label = "model";
};

// Per-record sampling seed; independent of thread scheduling.
std::uint64_t record_seed(std::uint64_t seed, std::size_t index);

void cmd_gen_data(const GenDataOptions& opts);
void cmd_split(const SplitOptions& opts);
void cmd_augment(const AugmentOptions& opts);
void cmd_stats(const std::filesystem::path& in, const std::string& label, std::ostream& out);
void cmd_train(const TrainOptions& opts, std::ostream& log);
void cmd_predict(const PredictOptions& opts);
EvalReport cmd_eval(const EvalOptions& opts, std::ostream& out);

// Parses argv and dispatches. Returns the process exit code: 0 success,
// 1 usage error, 2 data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rxlora
