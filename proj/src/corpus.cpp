#include "rxlora/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

using nlohmann::json;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

constexpr std::string_view kConsonants = "bdfhklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string syllables(std::mt19937_64& rng, int count) {
  std::uniform_int_distribution<std::size_t> pick_c(0, kConsonants.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_v(0, kVowels.size() - 1);
  std::string out;
  for (int i = 0; i < count; ++i) {
    out += kConsonants[pick_c(rng)];
    out += kVowels[pick_v(rng)];
  }
  return out;
}

std::vector<std::string> unique_names(std::mt19937_64& rng, std::size_t n, int n_syllables,
                                      std::string_view suffix, std::set<std::string>& taken) {
  std::vector<std::string> names;
  names.reserve(n);
  while (names.size() < n) {
    std::string name = syllables(rng, n_syllables);
    name += suffix;
    if (taken.insert(name).second) names.push_back(std::move(name));
  }
  return names;
}

// Dosage palette in tenths of a gram.
constexpr std::int64_t kDosePalette[] = {30, 45, 60, 90, 100, 120, 150, 200, 300};

Dosage random_dose(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kDosePalette) - 1);
  return Dosage::from_tenths(kDosePalette[pick(rng)]);
}

const std::vector<std::string> kHistoryWords = {"", "chronic", "recurrent", "acute", "postprandial", "nocturnal"};
const std::vector<std::string> kTongueWords = {"pale", "red", "thin-white", "yellow-greasy", "purple"};

}  // namespace

Corpus::Corpus(std::vector<ClinicalRecord> records) : records_(std::move(records)) {
  for (const auto& r : records_) {
    for (const auto& item : r.prescription.items()) herbs_.insert(item.herb);
  }
}

ClinicalRecord record_from_json_text(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kSchema, where + ": " + e.what());
  }
  const auto require_string = [&](const char* key) -> std::string {
    if (!j.is_object() || !j.contains(key) || !j[key].is_string()) {
      throw Error(ErrorKind::kSchema, where + ": field '" + key + "' must be a string");
    }
    return j[key].get<std::string>();
  };
  std::string cc = require_string("chief_complaint");
  std::string history = require_string("history");
  std::string tongue = require_string("tongue");
  if (!j.contains("prescription") || !j["prescription"].is_array()) {
    throw Error(ErrorKind::kSchema, where + ": field 'prescription' must be an array");
  }
  std::vector<PrescriptionItem> items;
  for (const auto& entry : j["prescription"]) {
    if (!entry.is_object() || !entry.contains("herb") || !entry["herb"].is_string() ||
        !entry.contains("grams") || !entry["grams"].is_number()) {
      throw Error(ErrorKind::kSchema, where + ": prescription items need string 'herb' and numeric 'grams'");
    }
    try {
      items.push_back({HerbName(entry["herb"].get<std::string>()),
                       Dosage::from_grams(entry["grams"].get<double>())});
    } catch (const Error& e) {
      throw Error(ErrorKind::kInvariantViolation, where + ": " + e.what());
    }
  }
  try {
    ClinicalRecord record{std::move(cc), std::move(history), std::move(tongue), Prescription(std::move(items))};
    record.validate();
    return record;
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvariantViolation, where + ": " + e.what());
  }
}

std::string record_to_json_text(const ClinicalRecord& record) {
  json items = json::array();
  for (const auto& item : record.prescription.items()) {
    json grams = item.dosage.tenths() % 10 == 0 ? json(item.dosage.tenths() / 10) : json(item.dosage.grams());
    items.push_back({{"herb", item.herb.str()}, {"grams", grams}});
  }
  json j = {{"chief_complaint", record.chief_complaint},
            {"history", record.history},
            {"tongue", record.tongue},
            {"prescription", std::move(items)}};
  return j.dump();
}

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<ClinicalRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(record_from_json_text(line, line_number));
  }
  if (in.bad()) throw Error(ErrorKind::kIo, "read failure on " + path.string());
  return Corpus(std::move(records));
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : corpus.records()) out << record_to_json_text(r) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "write failure on " + path.string());
}

std::pair<Corpus, Corpus> split(const Corpus& c, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::kUsage, "test_fraction must lie in (0, 1)");
  }
  if (c.empty()) throw Error(ErrorKind::kEmptyCorpus, "cannot split an empty corpus");
  const std::size_t n = c.size();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derived_rng(seed, 0x5f11);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  std::vector<ClinicalRecord> train;
  std::vector<ClinicalRecord> test;
  train.reserve(n - n_test);
  test.reserve(n_test);
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).push_back(c.records()[i]);
  return {Corpus(std::move(train)), Corpus(std::move(test))};
}

CorpusStats stats(const Corpus& c) {
  if (c.empty()) throw Error(ErrorKind::kEmptyCorpus, "stats of an empty corpus");
  std::vector<double> counts;
  counts.reserve(c.size());
  for (const auto& r : c.records()) counts.push_back(static_cast<double>(r.prescription.size()));
  CorpusStats s;
  s.size = c.size();
  s.category = c.herb_vocabulary().size();
  s.mean = std::accumulate(counts.begin(), counts.end(), 0.0) / static_cast<double>(counts.size());
  double sq = 0.0;
  for (double x : counts) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(counts.size()));
  std::sort(counts.begin(), counts.end());
  const std::size_t mid = counts.size() / 2;
  s.median = counts.size() % 2 == 1 ? counts[mid] : 0.5 * (counts[mid - 1] + counts[mid]);
  return s;
}

std::string format_stats_table(const std::string& label, const CorpusStats& s) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "Dataset" << std::right << std::setw(10) << "Size" << std::setw(10)
     << "Category" << std::setw(10) << "Median" << std::setw(10) << "Mean" << std::setw(10) << "Std" << '\n';
  os << std::left << std::setw(10) << label << std::right << std::setw(10) << s.size << std::setw(10)
     << s.category << std::fixed << std::setprecision(2) << std::setw(10) << s.median << std::setw(10) << s.mean
     << std::setw(10) << s.std << '\n';
  return os.str();
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  const auto infeasible = [](const std::string& why) { throw Error(ErrorKind::kSpecInfeasible, why); };
  if (spec.n_records == 0) infeasible("n_records must be >= 1");
  if (spec.n_herbs == 0) infeasible("n_herbs must be >= 1");
  if (spec.n_symptom_tokens == 0) infeasible("n_symptom_tokens must be >= 1");
  if (spec.symptoms_per_record == 0) infeasible("symptoms_per_record must be >= 1");
  if (!std::isfinite(spec.herbs_per_rx_mean) || spec.herbs_per_rx_mean < 1.0) {
    infeasible("herbs_per_rx_mean must be >= 1");
  }
  if (!std::isfinite(spec.herbs_per_rx_std) || spec.herbs_per_rx_std < 0.0) {
    infeasible("herbs_per_rx_std must be >= 0");
  }
  if (spec.herbs_per_rx_mean > static_cast<double>(spec.n_herbs)) {
    infeasible("herbs_per_rx_mean exceeds n_herbs; symptoms cannot cover the requested herb counts");
  }
  if (spec.symptoms_per_record > spec.n_symptom_tokens) {
    infeasible("symptoms_per_record exceeds n_symptom_tokens");
  }
  const auto herbs_per_symptom = static_cast<std::size_t>(
      std::ceil(spec.herbs_per_rx_mean / static_cast<double>(spec.symptoms_per_record)));
  if (herbs_per_symptom > spec.n_herbs) {
    infeasible("herbs per symptom exceeds n_herbs");
  }
  // Name space: 70^3 herb names, 70^2 symptom names; keep well below capacity.
  if (spec.n_herbs > 100000) infeasible("n_herbs exceeds the name generator capacity (100000)");
  if (spec.n_symptom_tokens > 2000) infeasible("n_symptom_tokens exceeds the name generator capacity (2000)");

  auto map_rng = derived_rng(spec.rng_seed, 0x6d6170);
  std::set<std::string> taken(kHistoryWords.begin(), kHistoryWords.end());
  taken.insert(kTongueWords.begin(), kTongueWords.end());
  const auto herb_names = unique_names(map_rng, spec.n_herbs, 3, "", taken);
  const auto symptom_names = unique_names(map_rng, spec.n_symptom_tokens, 2, "n", taken);

  std::vector<Dosage> herb_base_dose;
  herb_base_dose.reserve(spec.n_herbs);
  for (std::size_t h = 0; h < spec.n_herbs; ++h) herb_base_dose.push_back(random_dose(map_rng));

  // symptom index -> list of (herb index, dose)
  std::vector<std::vector<std::pair<std::size_t, Dosage>>> symptom_herbs(spec.n_symptom_tokens);
  std::vector<std::size_t> herb_order(spec.n_herbs);
  std::iota(herb_order.begin(), herb_order.end(), 0);
  SyntheticCorpus out;
  for (std::size_t s = 0; s < spec.n_symptom_tokens; ++s) {
    std::shuffle(herb_order.begin(), herb_order.end(), map_rng);
    std::vector<PrescriptionItem> items;
    for (std::size_t j = 0; j < herbs_per_symptom; ++j) {
      const Dosage d = random_dose(map_rng);
      symptom_herbs[s].emplace_back(herb_order[j], d);
      items.push_back({HerbName(herb_names[herb_order[j]]), d});
    }
    out.ground_truth.emplace(symptom_names[s], std::move(items));
  }

  std::vector<ClinicalRecord> records;
  records.reserve(spec.n_records);
  std::vector<std::size_t> symptom_order(spec.n_symptom_tokens);
  for (std::size_t i = 0; i < spec.n_records; ++i) {
    auto rng = derived_rng(spec.rng_seed, 0x726563, i);
    std::iota(symptom_order.begin(), symptom_order.end(), 0);
    std::shuffle(symptom_order.begin(), symptom_order.end(), rng);
    std::vector<std::size_t> chosen(symptom_order.begin(),
                                    symptom_order.begin() + static_cast<std::ptrdiff_t>(spec.symptoms_per_record));

    std::string cc;
    for (std::size_t s : chosen) {
      if (!cc.empty()) cc += ' ';
      cc += symptom_names[s];
    }

    // Union in ascending symptom order; the lowest-index symptom fixes the dose.
    std::vector<std::size_t> by_index = chosen;
    std::sort(by_index.begin(), by_index.end());
    std::vector<std::pair<std::size_t, Dosage>> rx;
    std::vector<bool> used(spec.n_herbs, false);
    for (std::size_t s : by_index) {
      for (const auto& [h, d] : symptom_herbs[s]) {
        if (!used[h]) {
          used[h] = true;
          rx.emplace_back(h, d);
        }
      }
    }

    std::normal_distribution<double> count_dist(spec.herbs_per_rx_mean, spec.herbs_per_rx_std);
    const double drawn = spec.herbs_per_rx_std > 0.0 ? count_dist(rng) : spec.herbs_per_rx_mean;
    const auto target = static_cast<std::size_t>(
        std::clamp<long long>(std::llround(drawn), 1, static_cast<long long>(spec.n_herbs)));

    if (rx.size() > target) {
      std::vector<std::size_t> keep(rx.size());
      std::iota(keep.begin(), keep.end(), 0);
      std::shuffle(keep.begin(), keep.end(), rng);
      keep.resize(target);
      std::sort(keep.begin(), keep.end());
      std::vector<std::pair<std::size_t, Dosage>> kept;
      for (std::size_t k : keep) kept.push_back(rx[k]);
      rx = std::move(kept);
    } else if (rx.size() < target) {
      std::vector<std::size_t> pool;
      for (std::size_t h = 0; h < spec.n_herbs; ++h) {
        if (!used[h]) pool.push_back(h);
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t j = 0; rx.size() < target && j < pool.size(); ++j) {
        rx.emplace_back(pool[j], herb_base_dose[pool[j]]);
      }
    }

    std::vector<PrescriptionItem> items;
    items.reserve(rx.size());
    for (const auto& [h, d] : rx) items.push_back({HerbName(herb_names[h]), d});

    std::uniform_int_distribution<std::size_t> pick_history(0, kHistoryWords.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_tongue(0, kTongueWords.size() - 1);
    std::string history = kHistoryWords[pick_history(rng)];
    std::string tongue = kTongueWords[pick_tongue(rng)];
    records.push_back({std::move(cc), std::move(history), std::move(tongue), Prescription(std::move(items))});
  }
  out.corpus = Corpus(std::move(records));
  return out;
}

Corpus augment_permute(const Corpus& c, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error(ErrorKind::kUsage, "K must be >= 1");
  std::vector<ClinicalRecord> out;
  out.reserve(c.size() * k);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& record = c.records()[i];
    for (std::size_t t = 0; t < k; ++t) {
      auto rng = derived_rng(seed, 0x7065726d, i, t);
      std::vector<PrescriptionItem> items = record.prescription.items();
      std::shuffle(items.begin(), items.end(), rng);
      out.push_back({record.chief_complaint, record.history, record.tongue, Prescription(std::move(items))});
    }
  }
  return Corpus(std::move(out));
}

}  // namespace rxlora
