#include <gtest/gtest.h>

#include <cmath>

#include "qacal/gbdt.hpp"
#include "qacal/temp_scaling.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace qacal;

Example two_candidates(double a, double b) {
  Example e;
  e.id = "x";
  e.dataset_id = "d";
  e.candidates = {{.text = "a", .log_prob = a, .is_gold = true}, {.text = "b", .log_prob = b}};
  return e;
}

TEST(GoldenSection, FindsParabolaMinimum) {
  auto r = golden_section_minimize([](double x) { return (x - 0.3) * (x - 0.3) + 2.0; }, -5.0, 5.0, 1e-8);
  EXPECT_NEAR(r.x, 0.3, 1e-7);
  EXPECT_NEAR(r.fx, 2.0, 1e-12);
  EXPECT_FALSE(r.trace.empty());
}

TEST(GoldenSection, MinimumAtBoundary) {
  auto r = golden_section_minimize([](double x) { return x; }, 1.0, 2.0, 1e-6);
  EXPECT_NEAR(r.x, 1.0, 1e-5);
}

TEST(ApplyTemperature, HandExample) {
  TemperatureModel m;
  m.tau = 2.0;
  auto s = apply_temperature(two_candidates(0.0, -2.0), m);
  EXPECT_NEAR(s.probs[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(s.probs[0], 0.7311, 5e-5);
  EXPECT_NEAR(s.probs[1], 0.2689, 5e-5);
}

TEST(ApplyTemperature, LargeTemperatureFlattens) {
  TemperatureModel m;
  m.tau = 100.0;
  auto s = apply_temperature(two_candidates(0.0, -2.0), m);
  EXPECT_NEAR(s.probs[0], 0.5, 0.01);
  EXPECT_NEAR(s.probs[1], 0.5, 0.01);
}

TEST(ApplyTemperature, UnitTemperatureIsNormalize) {
  auto e = two_candidates(-0.3, -1.7);
  TemperatureModel m;
  auto a = apply_temperature(e, m);
  auto b = normalize(e);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(ApplyTemperature, EntropyIncreasesWithTemperatureAndArgmaxIsFixed) {
  auto log = qacal::testing::tempered_collection(200, 1.0, 3);
  for (const auto& e : log.examples()) {
    double prev = -1.0;
    const auto base = normalize(e).predicted_index;
    for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      TemperatureModel m;
      m.tau = tau;
      auto s = apply_temperature(e, m);
      const double h = entropy(s.probs);
      EXPECT_GE(h, prev - 1e-12);
      prev = h;
      EXPECT_EQ(s.predicted_index, base);
      EXPECT_EQ(argmax(s.probs), base);
    }
  }
}

TEST(ApplyTemperature, CollectionSetsConfidence) {
  DatasetCollection log({two_candidates(0.0, -2.0)});
  TemperatureModel m;
  m.tau = 2.0;
  auto out = apply_temperature(log, m);
  ASSERT_TRUE(out.examples()[0].candidates[0].confidence.has_value());
  EXPECT_NEAR(*out.examples()[0].candidates[1].confidence, 1.0 / (1.0 + std::exp(1.0)), 1e-12);
  auto conf = confidences(out.examples()[0]);
  EXPECT_NEAR(conf.probs[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(TemperatureNll, MultiGoldUsesSummedMass) {
  ScoredExample ex{{std::log(0.2), std::log(0.3), std::log(0.5)}, {0, 1}};
  EXPECT_NEAR(temperature_nll({ex}, 1.0), -std::log(0.5), 1e-12);
}

TEST(FitTemperature, MatchesGridSearchOracle) {
  for (double true_tau : {1.0, 3.0}) {
    auto log = qacal::testing::tempered_collection(2000, true_tau, 41 + static_cast<int>(true_tau));
    auto model = fit_temperature(log);
    auto [data, skipped] = usable_examples(log);
    EXPECT_EQ(skipped, 0u);
    double best_nll = INFINITY, best_tau = 0.0;
    for (int i = 0; i <= 2000; ++i) {
      const double log_tau = std::log(0.01) + (std::log(100.0) - std::log(0.01)) * i / 2000.0;
      const double nll = temperature_nll(data, std::exp(log_tau));
      if (nll < best_nll) {
        best_nll = nll;
        best_tau = std::exp(log_tau);
      }
    }
    EXPECT_LE(model.fit_nll, best_nll + 1e-6) << "true tau " << true_tau;
    EXPECT_NEAR(std::log(model.tau), std::log(best_tau), 0.01) << "true tau " << true_tau;
    EXPECT_LE(model.fit_nll, model.nll_at_one + 1e-15);
    EXPECT_NEAR(model.tau, true_tau, 0.15 * true_tau);
  }
}

TEST(FitTemperature, SkipsExamplesWithoutGold) {
  auto good = qacal::testing::tempered_collection(50, 1.0, 9);
  std::vector<Example> ex = good.examples();
  Example none;
  none.id = "nogold";
  none.dataset_id = "synthetic";
  none.split = Split::dev;
  none.format = Format::extractive;
  none.gold_answers = {"zzz"};
  none.candidates = {{.text = "a", .log_prob = -1.0}};
  ex.push_back(none);
  auto model = fit_temperature(DatasetCollection(ex));
  EXPECT_EQ(model.n_used, 50u);
  EXPECT_EQ(model.n_skipped, 1u);
}

TEST(FitTemperature, NoUsableExampleIsAnError) {
  Example none;
  none.id = "nogold";
  none.format = Format::extractive;
  none.gold_answers = {"zzz"};
  none.candidates = {{.text = "a", .log_prob = -1.0}};
  EXPECT_THROW(fit_temperature(DatasetCollection({none})), TemperatureError);
  EXPECT_THROW(fit_temperature(DatasetCollection{}), TemperatureError);
}

TEST(FitTemperature, JsonRoundTrip) {
  auto model = fit_temperature(qacal::testing::tempered_collection(100, 2.0, 5));
  auto back = temperature_from_json(to_json(model));
  EXPECT_EQ(back.tau, model.tau);
  EXPECT_EQ(back.n_used, model.n_used);
  EXPECT_THROW(temperature_from_json(Json{{"tau", -1.0}}), TemperatureError);
  EXPECT_THROW(temperature_from_json(Json::object()), TemperatureError);
}

} // namespace
