#ifndef QACAL_TEMP_SCALING_HPP
#define QACAL_TEMP_SCALING_HPP

// Temperature scaling over candidate log-probabilities, fitted by
// golden-section search on log(tau) against dev-split NLL.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "golden_section.hpp"
#include "records.hpp"
#include "scoring.hpp"

namespace qacal {

class TemperatureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TemperatureBounds {
  double min_tau = 1.0 / 100.0;
  double max_tau = 100.0;
  double log_tol = 1e-4;
};

struct TemperatureModel {
  double tau = 1.0;
  double fit_nll = 0.0;
  double nll_at_one = 0.0;
  std::size_t n_used = 0;
  std::size_t n_skipped = 0;
  std::vector<std::pair<double, double>> search_trace; // (tau, nll)
};

/// Log-prob vector plus the indices of its gold candidates.
struct ScoredExample {
  std::vector<double> log_probs;
  std::vector<std::size_t> gold;
};

/// Mean NLL of the gold candidates under softmax(log_probs / tau). An
/// example with several gold-marked candidates scores their summed mass.
inline double temperature_nll(const std::vector<ScoredExample>& data, double tau) {
  double total = 0.0;
  std::vector<double> scaled, gold_scaled;
  for (const auto& ex : data) {
    scaled.resize(ex.log_probs.size());
    for (std::size_t i = 0; i < ex.log_probs.size(); ++i) scaled[i] = ex.log_probs[i] / tau;
    gold_scaled.clear();
    for (auto g : ex.gold) gold_scaled.push_back(scaled[g]);
    total += log_sum_exp(scaled) - log_sum_exp(gold_scaled);
  }
  return total / static_cast<double>(data.size());
}

/// Examples with at least one gold candidate; the count of skipped ones is
/// returned alongside.
inline std::pair<std::vector<ScoredExample>, std::size_t> usable_examples(const DatasetCollection& collection) {
  std::vector<ScoredExample> data;
  std::size_t skipped = 0;
  for (const auto& e : collection.examples()) {
    ScoredExample ex{log_probs_of(e), {}};
    for (std::size_t i = 0; i < e.candidates.size(); ++i)
      if (e.candidates[i].is_gold) ex.gold.push_back(i);
    if (ex.gold.empty()) ++skipped;
    else data.push_back(std::move(ex));
  }
  return {std::move(data), skipped};
}

inline TemperatureModel fit_temperature(const DatasetCollection& collection, const TemperatureBounds& bounds = {}) {
  if (!(bounds.min_tau > 0.0 && bounds.min_tau <= 1.0 && bounds.max_tau >= 1.0))
    throw TemperatureError("fit_temperature: bounds must satisfy 0 < min_tau <= 1 <= max_tau");
  auto [data, skipped] = usable_examples(collection);
  if (data.empty()) throw TemperatureError("fit_temperature: no example has a gold candidate");

  TemperatureModel model;
  model.n_used = data.size();
  model.n_skipped = skipped;
  model.nll_at_one = temperature_nll(data, 1.0);

  auto search = golden_section_minimize([&](double log_tau) { return temperature_nll(data, std::exp(log_tau)); },
                                        std::log(bounds.min_tau), std::log(bounds.max_tau), bounds.log_tol);
  for (const auto& [log_tau, nll] : search.trace) model.search_trace.emplace_back(std::exp(log_tau), nll);

  model.tau = std::exp(search.x);
  model.fit_nll = search.fx;
  if (model.nll_at_one < model.fit_nll) {
    model.tau = 1.0;
    model.fit_nll = model.nll_at_one;
  }
  return model;
}

/// softmax(log_probs / tau). The prediction is taken from the unscaled
/// log-probs, so it always matches normalize().
inline NormalizedScores apply_temperature(const Example& example, const TemperatureModel& model) {
  if (!(model.tau > 0.0)) throw TemperatureError("apply_temperature: tau must be positive");
  auto z = log_probs_of(example);
  const std::size_t predicted = argmax(z);
  for (double& v : z) v /= model.tau;
  auto out = softmax(z);
  out.predicted_index = predicted;
  return out;
}

/// Copy of the collection with every candidate's confidence set from the
/// temperature-scaled distribution.
inline DatasetCollection apply_temperature(const DatasetCollection& collection, const TemperatureModel& model) {
  std::vector<Example> out;
  out.reserve(collection.size());
  for (const auto& e : collection.examples()) {
    Example copy = e;
    auto scores = apply_temperature(e, model);
    for (std::size_t i = 0; i < copy.candidates.size(); ++i) copy.candidates[i].confidence = scores.probs[i];
    out.push_back(std::move(copy));
  }
  return DatasetCollection(std::move(out));
}

inline Json to_json(const TemperatureModel& m) {
  Json j;
  j["tau"] = m.tau;
  j["fit_nll"] = m.fit_nll;
  j["n_used"] = m.n_used;
  j["n_skipped"] = m.n_skipped;
  return j;
}

inline TemperatureModel temperature_from_json(const Json& j) {
  TemperatureModel m;
  try {
    m.tau = j.at("tau").get<double>();
    m.fit_nll = j.value("fit_nll", 0.0);
    m.n_used = j.value("n_used", std::size_t{0});
    m.n_skipped = j.value("n_skipped", std::size_t{0});
  } catch (const nlohmann::json::exception& err) {
    throw TemperatureError(std::string("temperature model: ") + err.what());
  }
  if (!(m.tau > 0.0) || !std::isfinite(m.tau)) throw TemperatureError("temperature model: tau must be positive and finite");
  return m;
}

} // namespace qacal

#endif
