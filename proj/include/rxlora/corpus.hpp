#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rxlora/prescription.hpp"

namespace rxlora {

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<ClinicalRecord> records);

  const std::vector<ClinicalRecord>& records() const noexcept { return records_; }
  // Union of herbs across all records.
  const std::set<HerbName>& herb_vocabulary() const noexcept { return herbs_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

 private:
  std::vector<ClinicalRecord> records_;
  std::set<HerbName> herbs_;
};

struct CorpusStats {
  std::size_t size = 0;
  std::size_t category = 0;  // distinct herbs
  double median = 0.0;       // herbs per prescription
  double mean = 0.0;
  double std = 0.0;          // population standard deviation
};

struct SyntheticSpec {
  std::size_t n_records = 2000;
  std::size_t n_herbs = 50;
  double herbs_per_rx_mean = 6.0;
  double herbs_per_rx_std = 1.0;
  std::size_t n_symptom_tokens = 40;
  std::size_t symptoms_per_record = 3;
  std::uint64_t rng_seed = 1;
};

// Fixed herb set (with per-symptom dosages) assigned to each symptom word.
using SymptomHerbMap = std::map<std::string, std::vector<PrescriptionItem>>;

struct SyntheticCorpus {
  Corpus corpus;
  SymptomHerbMap ground_truth;
};

ClinicalRecord record_from_json_text(std::string_view line, std::size_t line_number);
std::string record_to_json_text(const ClinicalRecord& record);

Corpus load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);

// Returns (train, test). Test size is round(n * test_fraction); record order
// inside each part follows the input order.
std::pair<Corpus, Corpus> split(const Corpus& c, double test_fraction, std::uint64_t seed);

CorpusStats stats(const Corpus& c);
// One header line plus one row, columns as in the data-statistics table.
std::string format_stats_table(const std::string& label, const CorpusStats& s);

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// K copies of every record with independently shuffled prescriptions.
// Output is record-major: copies of record 0 first.
Corpus augment_permute(const Corpus& c, std::size_t k, std::uint64_t seed);

}  // namespace rxlora
