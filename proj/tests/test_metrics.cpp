#include <doctest.h>

#include <json.hpp>

#include "oracles.hpp"
#include "rxlora/metrics.hpp"
#include "test_util.hpp"

using namespace rxlora;

namespace {

Prescription rx(std::initializer_list<std::pair<const char*, double>> items) {
  std::vector<PrescriptionItem> out;
  for (const auto& [h, g] : items) out.push_back({HerbName(h), Dosage::from_grams(g)});
  return Prescription(std::move(out));
}

std::vector<EvalPair> random_pairs(std::mt19937_64& rng, std::size_t n) {
  const auto pool = oracle::random_herb_pool(rng, 30);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    Prescription truth = oracle::random_prescription(rng, pool, 10);
    std::optional<Prescription> pred;
    if (rng() % 10 != 0) pred = oracle::random_prescription(rng, pool, 10);
    pairs.emplace_back(std::move(truth), std::move(pred));
  }
  return pairs;
}

std::vector<std::pair<oracle::RefRx, std::optional<oracle::RefRx>>> to_ref(const std::vector<EvalPair>& pairs) {
  std::vector<std::pair<oracle::RefRx, std::optional<oracle::RefRx>>> out;
  for (const auto& [t, p] : pairs) {
    std::optional<oracle::RefRx> rp;
    if (p) rp = oracle::to_ref(*p);
    out.emplace_back(oracle::to_ref(t), std::move(rp));
  }
  return out;
}

DosageBaseline to_baseline(const oracle::RefBaseline& ref) {
  DosageBaseline b;
  for (const auto& [h, w] : ref.mean) b.mean_grams.emplace(HerbName(h), w);
  b.global_mean_grams = ref.global;
  return b;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("worked example") {
    const Prescription truth = rx({{"a", 10}, {"b", 5}, {"c", 3}, {"d", 6}});
    const Prescription pred = rx({{"b", 6}, {"a", 10}, {"e", 2}});
    const SetScores s = herb_set_metrics(truth, pred);
    CHECK(s.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    const auto [err, z] = nmse_pair(truth, pred);
    CHECK(z == 2);
    CHECK(err == doctest::Approx(0.04).epsilon(1e-12));
  }

  TEST_CASE("identity, empty and disjoint predictions") {
    const Prescription truth = rx({{"a", 10}, {"b", 5}});
    const SetScores same = herb_set_metrics(truth, truth);
    CHECK(same.precision == 1.0);
    CHECK(same.recall == 1.0);
    CHECK(same.f1 == 1.0);
    CHECK(nmse_pair(truth, truth) == std::pair<double, std::size_t>{0.0, 2});

    const SetScores none = herb_set_metrics(truth, std::nullopt);
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);

    CHECK(nmse_pair(rx({{"a", 10}}), rx({{"a", 20}})) == std::pair<double, std::size_t>{1.0, 1});
    CHECK(nmse_pair(truth, rx({{"z", 1}})) == std::pair<double, std::size_t>{0.0, 0});
    CHECK(f1_from(0.0, 0.0) == 0.0);
  }

  TEST_CASE("all-empty predictions give zero scores and undefined NMSE") {
    const std::vector<EvalPair> pairs = {{rx({{"a", 1}}), std::nullopt}, {rx({{"b", 2}}), std::nullopt}};
    const EvalReport r = corpus_eval(pairs, DosageBaseline{});
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK_FALSE(r.nmse.has_value());
    CHECK_FALSE(r.nmse_base.has_value());
    CHECK(r.n_empty_predictions == 2);
    CHECK(r.n_zero_match_samples == 2);
    CHECK(r.total_fn == 2);
    CHECK_THROWS_KIND(corpus_eval(std::vector<EvalPair>{}, DosageBaseline{}), ErrorKind::kEmptyInput);
  }

  TEST_CASE("corpus metrics match a brute-force reference") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 3; ++trial) {
      const auto pairs = random_pairs(rng, 1000);
      std::vector<oracle::RefRx> train;
      for (std::size_t i = 0; i < 200; ++i) train.push_back(oracle::to_ref(pairs[i].first));
      const auto ref_base = oracle::ref_baseline(train);
      const auto ref = oracle::ref_corpus_eval(to_ref(pairs), ref_base);
      const EvalReport r = corpus_eval(pairs, to_baseline(ref_base));
      CHECK(std::abs(r.precision - ref.precision) <= 1e-9);
      CHECK(std::abs(r.recall - ref.recall) <= 1e-9);
      CHECK(std::abs(r.f1 - ref.f1) <= 1e-9);
      REQUIRE(r.nmse.has_value() == ref.nmse.has_value());
      if (ref.nmse) {
        CHECK(std::abs(*r.nmse - *ref.nmse) <= 1e-9);
        CHECK(std::abs(*r.nmse_base - *ref.nmse_base) <= 1e-9);
      }
      for (double v : {r.precision, r.recall, r.f1}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK(*r.nmse >= 0.0);
    }
  }

  TEST_CASE("item order does not change any metric") {
    std::mt19937_64 rng(42);
    const auto pairs = random_pairs(rng, 300);
    std::vector<Prescription> train;
    for (std::size_t i = 0; i < 100; ++i) train.push_back(pairs[i].first);
    std::vector<ClinicalRecord> recs;
    for (const auto& t : train) recs.push_back({"x", "", "", t});
    const DosageBaseline base = build_baseline(Corpus(recs));
    const EvalReport r = corpus_eval(pairs, base);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<EvalPair> shuffled;
      for (const auto& [t, p] : pairs) {
        std::optional<Prescription> sp;
        if (p) sp = oracle::shuffled(*p, rng);
        shuffled.emplace_back(oracle::shuffled(t, rng), std::move(sp));
      }
      const EvalReport s = corpus_eval(shuffled, base);
      CHECK(s.precision == r.precision);
      CHECK(s.recall == r.recall);
      CHECK(s.f1 == r.f1);
      CHECK(s.nmse == r.nmse);
      CHECK(s.nmse_base == r.nmse_base);
    }
  }

  TEST_CASE("NMSE is invariant to a common rescaling of truth and prediction") {
    const Prescription truth = rx({{"a", 10}, {"b", 4}});
    const Prescription pred = rx({{"a", 12}, {"b", 3}});
    const Prescription truth3 = rx({{"a", 30}, {"b", 12}});
    const Prescription pred3 = rx({{"a", 36}, {"b", 9}});
    CHECK(nmse_pair(truth, pred).first == doctest::Approx(nmse_pair(truth3, pred3).first).epsilon(1e-12));
  }

  TEST_CASE("baseline examples and brute force") {
    const Corpus train({{"x", "", "", rx({{"a", 10}, {"b", 4}})}, {"y", "", "", rx({{"a", 20}})}});
    const DosageBaseline b = build_baseline(train);
    CHECK(b.predict(HerbName("a")) == doctest::Approx(15.0));
    CHECK(b.predict(HerbName("b")) == doctest::Approx(4.0));
    CHECK(b.global_mean_grams == doctest::Approx(34.0 / 3.0));
    CHECK(b.predict(HerbName("unseen")) == doctest::Approx(34.0 / 3.0));
    CHECK_THROWS_KIND(build_baseline(Corpus{}), ErrorKind::kEmptyCorpus);

    std::mt19937_64 rng(43);
    const auto pool = oracle::random_herb_pool(rng, 20);
    std::vector<ClinicalRecord> recs;
    std::vector<oracle::RefRx> refs;
    for (int i = 0; i < 300; ++i) {
      recs.push_back({"x", "", "", oracle::random_prescription(rng, pool, 8)});
      refs.push_back(oracle::to_ref(recs.back().prescription));
    }
    const DosageBaseline got = build_baseline(Corpus(recs));
    const auto want = oracle::ref_baseline(refs);
    CHECK(std::abs(got.global_mean_grams - want.global) <= 1e-9);
    for (const auto& h : pool) CHECK(std::abs(got.predict(HerbName(h)) - want.at(h)) <= 1e-9);
  }

  TEST_CASE("report output") {
    const std::vector<EvalPair> pairs = {
        {rx({{"a", 10}, {"b", 5}, {"c", 3}, {"d", 6}}), rx({{"b", 6}, {"a", 10}, {"e", 2}})}};
    const EvalReport r = corpus_eval(pairs, DosageBaseline{.mean_grams = {}, .global_mean_grams = 5.0});
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j.at("f1").get<double>() == doctest::Approx(4.0 / 7.0));
    CHECK(j.at("tp").get<int>() == 2);
    CHECK(j.at("nmse_base").get<double>() == doctest::Approx((0.25 + 0.0) / 2.0));
    const std::string table = r.to_table_row("demo");
    CHECK(table.find("Precision | Recall | F1-score | NMSE") != std::string::npos);
    CHECK(table.find("demo") != std::string::npos);
    CHECK(table.find("0.5714") != std::string::npos);
  }
}
