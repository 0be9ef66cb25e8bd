#include "rxlora/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "rxlora/checkpoint.hpp"
#include "rxlora/error.hpp"
#include "rxlora/tokenizer.hpp"

namespace rxlora {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failure on " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path manifest_path_for(const fs::path& output) {
  return fs::path(output.string() + ".manifest.json");
}

// Timings are the only field that varies between otherwise identical runs.
void write_manifest(const fs::path& path, const std::string& command, json config, json inputs, json outputs,
                    json timings) {
  json m = {{"tool", "rxlora"},
            {"version", kToolVersion},
            {"command", command},
            {"config", std::move(config)},
            {"inputs", std::move(inputs)},
            {"outputs", std::move(outputs)},
            {"timings_seconds", std::move(timings)}};
  write_text(path, m.dump(2) + "\n");
}

json model_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
          {"lora_rank", c.lora_rank},   {"lora_alpha", c.lora_alpha}};
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"batch_size", c.batch_size},
          {"grad_accum_steps", c.grad_accum_steps},
          {"seed", c.seed},
          {"prompt_masked", c.prompt_masked},
          {"weight_decay", c.weight_decay}};
}

json sampler_json(const SamplerConfig& c) {
  return {{"top_k", c.top_k},
          {"top_p", c.top_p},
          {"temperature", c.temperature},
          {"max_new_tokens", c.max_new_tokens},
          {"seed", c.seed}};
}

json items_json(const Prescription& p) {
  json items = json::array();
  for (const auto& item : p.items()) {
    json grams = item.dosage.tenths() % 10 == 0 ? json(item.dosage.tenths() / 10) : json(item.dosage.grams());
    items.push_back({{"herb", item.herb.str()}, {"grams", std::move(grams)}});
  }
  return items;
}

std::string prediction_line(std::size_t index, const Prediction& p) {
  json warnings = json::array();
  for (const auto& w : p.warnings) {
    warnings.push_back({{"item_index", w.item_index}, {"item", w.item}, {"reason", w.reason}});
  }
  json j = {{"index", index},
            {"text", p.text},
            {"prescription", p.prescription ? items_json(*p.prescription) : json(nullptr)},
            {"warnings", std::move(warnings)}};
  return j.dump();
}

std::optional<Prescription> prediction_from_json_text(const std::string& line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kSchema, where + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("prescription")) {
    throw Error(ErrorKind::kSchema, where + ": prediction needs a 'prescription' field");
  }
  const json& p = j["prescription"];
  if (p.is_null()) return std::nullopt;
  if (!p.is_array()) throw Error(ErrorKind::kSchema, where + ": 'prescription' must be an array or null");
  std::vector<PrescriptionItem> items;
  try {
    for (const auto& entry : p) {
      if (!entry.is_object() || !entry.contains("herb") || !entry["herb"].is_string() || !entry.contains("grams") ||
          !entry["grams"].is_number()) {
        throw Error(ErrorKind::kSchema, where + ": prescription items need string 'herb' and numeric 'grams'");
      }
      items.push_back({HerbName(entry["herb"].get<std::string>()), Dosage::from_grams(entry["grams"].get<double>())});
    }
    if (items.empty()) return std::nullopt;
    return Prescription(std::move(items));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kSchema) throw;
    throw Error(ErrorKind::kInvariantViolation, where + ": " + e.what());
  }
}

std::vector<std::optional<Prescription>> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::optional<Prescription>> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(prediction_from_json_text(line, line_number));
  }
  return out;
}

// Empty input files are allowed here, unlike training corpora.
std::vector<ClinicalRecord> load_records(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return load_jsonl(path).records();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.starts_with(flag + "=")) return true;
  }
  return false;
}

// Rewrites "<sub> --config FILE ..." into "<sub> --key value ... <remaining
// args>", skipping keys also given on the command line.
std::vector<std::string> expand_config(int argc, const char* const* argv, const CLI::App& app) {
  std::vector<std::string> args(argv, argv + argc);
  std::optional<std::string> file;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[++i];
    } else if (args[i].starts_with("--config=")) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!file) return args;
  std::size_t sub_index = 1;
  while (sub_index < rest.size() && rest[sub_index].starts_with("-")) ++sub_index;
  if (sub_index >= rest.size()) throw Error(ErrorKind::kUsage, "--config needs a subcommand");
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(rest[sub_index]);
  } catch (const CLI::OptionNotFound&) {
    throw Error(ErrorKind::kUsage, "unknown subcommand " + rest[sub_index]);
  }

  std::ifstream in(*file);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file " + *file);
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kUsage, *file + " line " + std::to_string(line_number) + ": expected key=value");
    }
    const std::string flag = "--" + trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option(flag);
    } catch (const CLI::OptionNotFound&) {
      throw Error(ErrorKind::kUsage, *file + " line " + std::to_string(line_number) + ": unknown key " + flag.substr(2));
    }
    if (has_flag(rest, flag)) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") injected.push_back(flag);
      continue;
    }
    injected.push_back(flag);
    injected.push_back(value);
  }
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(sub_index) + 1, injected.begin(), injected.end());
  return rest;
}

}  // namespace

std::uint64_t record_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t{index} >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

void cmd_gen_data(const GenDataOptions& opts) {
  const auto t0 = Clock::now();
  const SyntheticCorpus syn = generate_synthetic(opts.spec);
  ensure_parent(opts.out);
  save_jsonl(syn.corpus, opts.out);
  json truth = json::object();
  for (const auto& [symptom, items] : syn.ground_truth) {
    truth[symptom] = items_json(Prescription(items));
  }
  const fs::path truth_path = opts.out.string() + ".truth.json";
  write_text(truth_path, truth.dump(2) + "\n");
  const auto& s = opts.spec;
  write_manifest(manifest_path_for(opts.out), "gen-data",
                 {{"n_records", s.n_records},
                  {"n_herbs", s.n_herbs},
                  {"herbs_per_rx_mean", s.herbs_per_rx_mean},
                  {"herbs_per_rx_std", s.herbs_per_rx_std},
                  {"n_symptom_tokens", s.n_symptom_tokens},
                  {"symptoms_per_record", s.symptoms_per_record},
                  {"seed", s.rng_seed}},
                 json::array(), {opts.out.string(), truth_path.string()}, {{"total", seconds_since(t0)}});
}

void cmd_split(const SplitOptions& opts) {
  const auto t0 = Clock::now();
  const auto [train, test] = split(load_jsonl(opts.in), opts.test_fraction, opts.seed);
  ensure_parent(opts.train_out);
  ensure_parent(opts.test_out);
  save_jsonl(train, opts.train_out);
  save_jsonl(test, opts.test_out);
  write_manifest(manifest_path_for(opts.train_out), "split",
                 {{"test_fraction", opts.test_fraction}, {"seed", opts.seed}}, {opts.in.string()},
                 {opts.train_out.string(), opts.test_out.string()}, {{"total", seconds_since(t0)}});
}

void cmd_augment(const AugmentOptions& opts) {
  const auto t0 = Clock::now();
  const Corpus out = augment_permute(load_jsonl(opts.in), opts.k, opts.seed);
  ensure_parent(opts.out);
  save_jsonl(out, opts.out);
  write_manifest(manifest_path_for(opts.out), "augment", {{"k", opts.k}, {"seed", opts.seed}}, {opts.in.string()},
                 {opts.out.string()}, {{"total", seconds_since(t0)}});
}

void cmd_stats(const fs::path& in, const std::string& label, std::ostream& out) {
  out << format_stats_table(label, stats(load_jsonl(in)));
}

void cmd_train(const TrainOptions& opts, std::ostream& log) {
  const auto t0 = Clock::now();
  opts.train.validate();
  const Corpus corpus = load_jsonl(opts.corpus);
  const Vocabulary vocab = opts.vocab_from.empty() ? build_vocab(corpus) : build_vocab(load_jsonl(opts.vocab_from));
  ModelConfig mc = opts.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  ModelParams params = init(mc, opts.init_seed);

  fs::create_directories(opts.out_dir);
  vocab.save(opts.out_dir / "vocab.json");
  save_checkpoint(params, opts.out_dir / "base.ckpt", CheckpointContent::kBase);

  json outputs = {(opts.out_dir / "vocab.json").string(), (opts.out_dir / "base.ckpt").string()};
  json epoch_seconds = json::array();
  auto epoch_start = Clock::now();
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogEntry& e) {
    epoch_loss += e.loss;
    ++epoch_steps;
  };
  hooks.on_epoch_end = [&](std::size_t epoch, const ModelParams& p) {
    epoch_seconds.push_back(seconds_since(epoch_start));
    log << "epoch " << epoch << " mean loss " << (epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0)
        << '\n';
    const fs::path path = opts.out_dir / ("adapters.epoch" + std::to_string(epoch) + ".ckpt");
    save_checkpoint(p, path, CheckpointContent::kAdapters);
    outputs.push_back(path.string());
    epoch_loss = 0.0;
    epoch_steps = 0;
    epoch_start = Clock::now();
  };
  const TrainResult result = train(params, corpus, vocab, opts.train, hooks);

  save_checkpoint(params, opts.out_dir / "adapters.ckpt", CheckpointContent::kAdapters);
  write_text(opts.out_dir / "train_log.csv", format_log_csv(result.log));
  outputs.push_back((opts.out_dir / "adapters.ckpt").string());
  outputs.push_back((opts.out_dir / "train_log.csv").string());
  json inputs = {opts.corpus.string()};
  if (!opts.vocab_from.empty()) inputs.push_back(opts.vocab_from.string());
  write_manifest(opts.out_dir / "manifest.json", "train",
                 {{"model", model_json(mc)},
                  {"train", train_json(opts.train)},
                  {"init_seed", opts.init_seed},
                  {"total_steps", result.total_steps}},
                 std::move(inputs), std::move(outputs),
                 {{"total", seconds_since(t0)}, {"epochs", std::move(epoch_seconds)}});
}

void cmd_predict(const PredictOptions& opts) {
  const auto t0 = Clock::now();
  opts.sampler.validate();
  if (opts.threads < 1) throw Error(ErrorKind::kUsage, "threads must be >= 1");
  const Vocabulary vocab = Vocabulary::load(opts.model_dir / "vocab.json");
  ModelParams params = load_checkpoint(opts.model_dir / "base.ckpt");
  if (fs::exists(opts.model_dir / "adapters.ckpt")) load_adapters(params, opts.model_dir / "adapters.ckpt");
  if (params.config.vocab_size != vocab.size()) {
    throw Error(ErrorKind::kCheckpointMismatch, "checkpoint vocab_size " + std::to_string(params.config.vocab_size) +
                                                    " does not match vocabulary size " + std::to_string(vocab.size()));
  }
  const std::vector<ClinicalRecord> records = load_records(opts.records);

  std::vector<std::string> lines(records.size());
  std::vector<std::exception_ptr> failures(opts.threads);
  const auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = worker; i < records.size(); i += opts.threads) {
        SamplerConfig sc = opts.sampler;
        sc.seed = record_seed(opts.sampler.seed, i);
        lines[i] = prediction_line(i, predict_prescription(params, vocab, records[i], sc));
      }
    } catch (...) {
      failures[worker] = std::current_exception();
    }
  };
  if (opts.threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < opts.threads; ++w) pool.emplace_back(work, w);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::string text;
  for (const auto& line : lines) text += line + '\n';
  ensure_parent(opts.out);
  write_text(opts.out, text);
  write_manifest(manifest_path_for(opts.out), "predict",
                 {{"sampler", sampler_json(opts.sampler)}, {"threads", opts.threads}},
                 {opts.model_dir.string(), opts.records.string()}, {opts.out.string()},
                 {{"total", seconds_since(t0)}});
}

EvalReport cmd_eval(const EvalOptions& opts, std::ostream& out) {
  const auto t0 = Clock::now();
  const std::vector<ClinicalRecord> truth = load_records(opts.truth);
  const auto predictions = load_predictions(opts.predictions);
  if (truth.size() != predictions.size()) {
    throw Error(ErrorKind::kPairCountMismatch, std::to_string(truth.size()) + " reference records vs " +
                                                   std::to_string(predictions.size()) + " predictions");
  }
  std::vector<EvalPair> pairs;
  pairs.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) pairs.emplace_back(truth[i].prescription, predictions[i]);
  const EvalReport report = corpus_eval(pairs, build_baseline(load_jsonl(opts.train)));
  out << report.to_table_row(opts.label);
  if (!opts.out.empty()) {
    ensure_parent(opts.out);
    write_text(opts.out, report.to_json() + "\n");
    write_manifest(manifest_path_for(opts.out), "eval", {{"label", opts.label}},
                   {opts.truth.string(), opts.predictions.string(), opts.train.string()}, {opts.out.string()},
                   {{"total", seconds_since(t0)}});
  }
  return report;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"LoRA fine-tuning toolkit for herbal prescription generation", "rxlora"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus with a known symptom-to-herb map");
  gen_cmd->add_option("--out", gen.out, "Output corpus JSONL")->required();
  gen_cmd->add_option("--n", gen.spec.n_records, "Number of records")->capture_default_str();
  gen_cmd->add_option("--herbs", gen.spec.n_herbs, "Herb vocabulary size")->capture_default_str();
  gen_cmd->add_option("--herbs-mean", gen.spec.herbs_per_rx_mean, "Mean herbs per prescription")
      ->capture_default_str();
  gen_cmd->add_option("--herbs-std", gen.spec.herbs_per_rx_std, "Std of herbs per prescription")
      ->capture_default_str();
  gen_cmd->add_option("--symptoms", gen.spec.n_symptom_tokens, "Distinct symptom words")->capture_default_str();
  gen_cmd->add_option("--symptoms-per-record", gen.spec.symptoms_per_record, "Symptom words per record")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.rng_seed, "Random seed")->capture_default_str();

  SplitOptions sp;
  auto* split_cmd = app.add_subcommand("split", "Split a corpus into train and test parts");
  split_cmd->add_option("--in", sp.in, "Input corpus JSONL")->required();
  split_cmd->add_option("--train-out", sp.train_out, "Training part JSONL")->required();
  split_cmd->add_option("--test-out", sp.test_out, "Test part JSONL")->required();
  split_cmd->add_option("--test-fraction", sp.test_fraction, "Fraction held out")->capture_default_str();
  split_cmd->add_option("--seed", sp.seed, "Random seed")->capture_default_str();

  AugmentOptions aug;
  auto* aug_cmd = app.add_subcommand("augment", "Write K herb-order permutations of every record");
  aug_cmd->add_option("--in", aug.in, "Input corpus JSONL")->required();
  aug_cmd->add_option("--out", aug.out, "Output corpus JSONL")->required();
  aug_cmd->add_option("--k", aug.k, "Permutations per record")->capture_default_str();
  aug_cmd->add_option("--seed", aug.seed, "Random seed")->capture_default_str();

  fs::path stats_in;
  std::string stats_label = "corpus";
  auto* stats_cmd = app.add_subcommand("stats", "Print corpus statistics");
  stats_cmd->add_option("--in", stats_in, "Corpus JSONL")->required();
  stats_cmd->add_option("--label", stats_label, "Row label")->capture_default_str();

  TrainOptions tr;
  bool no_prompt_mask = false;
  auto* train_cmd = app.add_subcommand("train", "Fine-tune low-rank adapters on a frozen base model");
  train_cmd->add_option("--corpus", tr.corpus, "Training corpus JSONL")->required();
  train_cmd->add_option("--out-dir", tr.out_dir, "Model directory to write")->required();
  train_cmd->add_option("--vocab-from", tr.vocab_from, "Build the vocabulary from this corpus instead");
  train_cmd->add_option("--epochs", tr.train.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--lr", tr.train.base_lr, "Peak learning rate")->capture_default_str();
  train_cmd->add_option("--batch", tr.train.batch_size, "Sequences per micro-batch")->capture_default_str();
  train_cmd->add_option("--accum", tr.train.grad_accum_steps, "Micro-batches per update")->capture_default_str();
  train_cmd->add_option("--weight-decay", tr.train.weight_decay, "Decoupled weight decay")->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed, "Shuffle seed")->capture_default_str();
  train_cmd->add_option("--init-seed", tr.init_seed, "Base and adapter initialisation seed")->capture_default_str();
  train_cmd->add_flag("--no-prompt-mask", no_prompt_mask, "Also train on prompt tokens");
  train_cmd->add_option("--rank", tr.model.lora_rank, "Adapter rank")->capture_default_str();
  train_cmd->add_option("--alpha", tr.model.lora_alpha, "Adapter alpha")->capture_default_str();
  train_cmd->add_option("--d-model", tr.model.d_model, "Model width")->capture_default_str();
  train_cmd->add_option("--layers", tr.model.n_layers, "Transformer blocks")->capture_default_str();
  train_cmd->add_option("--heads", tr.model.n_heads, "Attention heads")->capture_default_str();
  train_cmd->add_option("--d-ff", tr.model.d_ff, "Feed-forward width")->capture_default_str();
  train_cmd->add_option("--max-seq-len", tr.model.max_seq_len, "Context window")->capture_default_str();

  PredictOptions pr;
  bool greedy = false;
  auto* predict_cmd = app.add_subcommand("predict", "Generate prescriptions for clinical records");
  predict_cmd->add_option("--model", pr.model_dir, "Model directory written by train")->required();
  predict_cmd->add_option("--records", pr.records, "Records JSONL")->required();
  predict_cmd->add_option("--out", pr.out, "Predictions JSONL")->required();
  predict_cmd->add_option("--top-k", pr.sampler.top_k, "Top-k cutoff")->capture_default_str();
  predict_cmd->add_option("--top-p", pr.sampler.top_p, "Nucleus mass")->capture_default_str();
  predict_cmd->add_option("--temperature", pr.sampler.temperature, "Softmax temperature")->capture_default_str();
  predict_cmd->add_option("--max-new-tokens", pr.sampler.max_new_tokens, "Generation budget")
      ->capture_default_str();
  predict_cmd->add_option("--seed", pr.sampler.seed, "Sampling seed")->capture_default_str();
  predict_cmd->add_flag("--greedy", greedy, "Argmax decoding (same as --top-k 1)");
  predict_cmd->add_option("--threads", pr.threads, "Worker threads")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against reference prescriptions");
  eval_cmd->add_option("--truth", ev.truth, "Reference records JSONL")->required();
  eval_cmd->add_option("--pred", ev.predictions, "Predictions JSONL")->required();
  eval_cmd->add_option("--train", ev.train, "Training corpus for the dosage baseline")->required();
  eval_cmd->add_option("--out", ev.out, "JSON report");
  eval_cmd->add_option("--label", ev.label, "Row label")->capture_default_str();

  std::string config_file_unused;
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_file_unused, "Plain key=value file; command-line flags take precedence");
  }

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv, app);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
  std::vector<const char*> expanded;
  for (const auto& a : args) expanded.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) {
      cmd_gen_data(gen);
      out << "wrote " << gen.out.string() << '\n';
    } else if (split_cmd->parsed()) {
      cmd_split(sp);
    } else if (aug_cmd->parsed()) {
      cmd_augment(aug);
    } else if (stats_cmd->parsed()) {
      cmd_stats(stats_in, stats_label, out);
    } else if (train_cmd->parsed()) {
      tr.train.prompt_masked = !no_prompt_mask;
      cmd_train(tr, out);
    } else if (predict_cmd->parsed()) {
      if (greedy) pr.sampler.top_k = 1;
      cmd_predict(pr);
    } else if (eval_cmd->parsed()) {
      cmd_eval(ev, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace rxlora
