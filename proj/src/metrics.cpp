#include "rxlora/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

struct Match {
  const HerbName* herb;
  double truth;
  double pred;
};

// Matched herbs in name order, so sums do not depend on item order.
std::vector<Match> matches(const Prescription& truth, const std::optional<Prescription>& pred) {
  std::vector<Match> out;
  if (!pred) return out;
  for (const auto& item : truth.items()) {
    if (const auto* hit = pred->find(item.herb)) {
      out.push_back({&item.herb, item.dosage.grams(), hit->dosage.grams()});
    }
  }
  std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) { return *a.herb < *b.herb; });
  return out;
}

double sq_rel(double predicted, double truth) {
  const double r = (predicted - truth) / truth;
  return r * r;
}

}  // namespace

double DosageBaseline::predict(const HerbName& herb) const {
  const auto it = mean_grams.find(herb);
  return it == mean_grams.end() ? global_mean_grams : it->second;
}

double f1_from(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

SetScores herb_set_metrics(const Prescription& truth, const std::optional<Prescription>& pred) {
  SetScores s;
  if (!pred) return s;
  const auto tp = static_cast<double>(matches(truth, pred).size());
  s.precision = tp / static_cast<double>(pred->size());
  s.recall = tp / static_cast<double>(truth.size());
  s.f1 = f1_from(s.precision, s.recall);
  return s;
}

std::pair<double, std::size_t> nmse_pair(const Prescription& truth, const std::optional<Prescription>& pred) {
  double total = 0.0;
  const auto m = matches(truth, pred);
  for (const auto& x : m) total += sq_rel(x.pred, x.truth);
  return {total, m.size()};
}

PairEval evaluate_pair(const Prescription& truth, const std::optional<Prescription>& pred,
                       const DosageBaseline& baseline) {
  PairEval e;
  const auto m = matches(truth, pred);
  e.tp = m.size();
  e.matched = m.size();
  e.fp = pred ? pred->size() - e.tp : 0;
  e.fn = truth.size() - e.tp;
  for (const auto& x : m) {
    e.sum_sq_norm_err += sq_rel(x.pred, x.truth);
    e.sum_sq_norm_err_base += sq_rel(baseline.predict(*x.herb), x.truth);
  }
  return e;
}

EvalReport corpus_eval(std::span<const EvalPair> pairs, const DosageBaseline& baseline) {
  if (pairs.empty()) throw Error(ErrorKind::kEmptyInput, "corpus_eval needs at least one pair");
  EvalReport r;
  r.n_samples = pairs.size();
  std::size_t z = 0;
  double err = 0.0;
  double err_base = 0.0;
  for (const auto& [truth, pred] : pairs) {
    const PairEval e = evaluate_pair(truth, pred, baseline);
    r.total_tp += e.tp;
    r.total_fp += e.fp;
    r.total_fn += e.fn;
    z += e.matched;
    err += e.sum_sq_norm_err;
    err_base += e.sum_sq_norm_err_base;
    if (!pred) ++r.n_empty_predictions;
    if (e.matched == 0) ++r.n_zero_match_samples;
  }
  const auto predicted = static_cast<double>(r.total_tp + r.total_fp);
  const auto actual = static_cast<double>(r.total_tp + r.total_fn);
  r.precision = predicted > 0.0 ? static_cast<double>(r.total_tp) / predicted : 0.0;
  r.recall = actual > 0.0 ? static_cast<double>(r.total_tp) / actual : 0.0;
  r.f1 = f1_from(r.precision, r.recall);
  if (z > 0) {
    r.nmse = err / static_cast<double>(z);
    r.nmse_base = err_base / static_cast<double>(z);
  }
  return r;
}

DosageBaseline build_baseline(const Corpus& train) {
  if (train.empty()) throw Error(ErrorKind::kEmptyCorpus, "baseline needs a non-empty training corpus");
  std::map<HerbName, std::pair<double, std::size_t>> acc;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : train.records()) {
    for (const auto& item : r.prescription.items()) {
      auto& [s, n] = acc.try_emplace(item.herb, 0.0, 0).first->second;
      s += item.dosage.grams();
      ++n;
      total += item.dosage.grams();
      ++count;
    }
  }
  DosageBaseline b;
  for (const auto& [herb, sn] : acc) b.mean_grams.emplace(herb, sn.first / static_cast<double>(sn.second));
  b.global_mean_grams = total / static_cast<double>(count);
  return b;
}

std::string EvalReport::to_json() const {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"precision", precision},
                      {"recall", recall},
                      {"f1", f1},
                      {"nmse", opt(nmse)},
                      {"nmse_base", opt(nmse_base)},
                      {"n_samples", n_samples},
                      {"n_empty_predictions", n_empty_predictions},
                      {"n_zero_match_samples", n_zero_match_samples},
                      {"tp", total_tp},
                      {"fp", total_fp},
                      {"fn", total_fn}};
  return j.dump(2);
}

std::string EvalReport::to_table_row(const std::string& label) const {
  std::ostringstream os;
  const auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(4) << *v;
    } else {
      c << "-";
    }
    return c.str();
  };
  os << std::left << std::setw(24) << "Model" << " | Precision | Recall | F1-score | NMSE   | NMSE_base\n";
  os << std::left << std::setw(24) << label << " | " << std::setw(9) << cell(precision) << " | " << std::setw(6)
     << cell(recall) << " | " << std::setw(8) << cell(f1) << " | " << std::setw(6) << cell(nmse) << " | "
     << cell(nmse_base) << '\n';
  return os.str();
}

}  // namespace rxlora
