#pragma once

// Herb-set precision / recall / F1 and dosage NMSE with the per-herb
// average-dosage baseline.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rxlora/corpus.hpp"
#include "rxlora/prescription.hpp"

namespace rxlora {

struct SetScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PairEval {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t matched = 0;  // Z, equals tp
  double sum_sq_norm_err = 0.0;
  double sum_sq_norm_err_base = 0.0;
};

struct DosageBaseline {
  std::map<HerbName, double> mean_grams;
  double global_mean_grams = 0.0;

  // Falls back to the global mean for herbs unseen in training.
  double predict(const HerbName& herb) const;
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> nmse;       // undefined when no herb matched anywhere
  std::optional<double> nmse_base;
  std::size_t n_samples = 0;
  std::size_t n_empty_predictions = 0;
  std::size_t n_zero_match_samples = 0;
  std::size_t total_tp = 0;
  std::size_t total_fp = 0;
  std::size_t total_fn = 0;

  std::string to_json() const;
  // "Precision | Recall | F1-score | NMSE | NMSE_base" header plus one row.
  std::string to_table_row(const std::string& label) const;
};

using EvalPair = std::pair<Prescription, std::optional<Prescription>>;

double f1_from(double precision, double recall);

SetScores herb_set_metrics(const Prescription& truth, const std::optional<Prescription>& pred);

// (sum over matched herbs of ((w' - w) / w)^2, Z)
std::pair<double, std::size_t> nmse_pair(const Prescription& truth, const std::optional<Prescription>& pred);

PairEval evaluate_pair(const Prescription& truth, const std::optional<Prescription>& pred,
                       const DosageBaseline& baseline);

// Micro-averaged P/R/F1 and corpus-pooled NMSE. Throws EmptyInput.
EvalReport corpus_eval(std::span<const EvalPair> pairs, const DosageBaseline& baseline);

// Throws EmptyCorpus.
DosageBaseline build_baseline(const Corpus& train);

}  // namespace rxlora
