#ifndef QACAL_SCORING_HPP
#define QACAL_SCORING_HPP

// Candidate normalization, prediction, accuracy, and the candidate-set
// fine-tuning losses (softmax NLL and hinge margin) with exact gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "records.hpp"

namespace qacal {

class ScoringError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct NormalizedScores {
  std::vector<double> probs;
  std::size_t predicted_index = 0;
};

/// First index of the maximum; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  double peak = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

/// Shifted softmax. The predicted index comes from the logits so that ties
/// and order are decided before any rounding in exp().
inline NormalizedScores softmax(std::span<const double> logits) {
  NormalizedScores out;
  if (logits.empty()) return out;
  double peak = *std::max_element(logits.begin(), logits.end());
  out.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] - peak);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;
  out.predicted_index = argmax(logits);
  return out;
}

inline std::vector<double> log_probs_of(const Example& example) {
  std::vector<double> z;
  z.reserve(example.candidates.size());
  for (const auto& c : example.candidates) z.push_back(c.log_prob);
  return z;
}

/// Normalized probability of each candidate over the candidate set.
inline NormalizedScores normalize(const Example& example) {
  auto z = log_probs_of(example);
  return softmax(z);
}

/// Per-candidate confidences: calibrated values when every candidate carries
/// one, otherwise the normalized probabilities.
inline NormalizedScores confidences(const Example& example) {
  bool calibrated = !example.candidates.empty() &&
                    std::all_of(example.candidates.begin(), example.candidates.end(),
                                [](const Candidate& c) { return c.confidence.has_value(); });
  if (!calibrated) return normalize(example);
  NormalizedScores out;
  for (const auto& c : example.candidates) out.probs.push_back(*c.confidence);
  out.predicted_index = argmax(out.probs);
  return out;
}

struct AccuracyReport {
  std::map<std::string, double> per_dataset;
  double macro = 0.0;
};

/// Fraction of examples whose predicted candidate is gold, per dataset, and
/// the unweighted mean over datasets.
inline AccuracyReport accuracy(const DatasetCollection& collection) {
  AccuracyReport report;
  auto groups = collection.by_dataset();
  if (groups.empty()) throw ScoringError("accuracy: collection has no datasets");
  for (const auto& [dataset, examples] : groups) {
    if (examples.empty()) throw ScoringError("accuracy: dataset '" + dataset + "' is empty");
    std::size_t correct = 0;
    for (const Example* e : examples) {
      auto scores = confidences(*e);
      if (e->candidates[scores.predicted_index].is_gold) ++correct;
    }
    report.per_dataset[dataset] = static_cast<double>(correct) / static_cast<double>(examples.size());
  }
  double sum = 0.0;
  for (const auto& [_, acc] : report.per_dataset) sum += acc;
  report.macro = sum / static_cast<double>(report.per_dataset.size());
  return report;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Negative log-likelihood of the gold candidate under softmax(logits).
inline LossResult softmax_loss(std::span<const double> logits, std::size_t gold_index) {
  if (gold_index >= logits.size())
    throw ScoringError("softmax_loss: gold index " + std::to_string(gold_index) + " out of range for " +
                       std::to_string(logits.size()) + " logits");
  LossResult out;
  double lse = log_sum_exp(logits);
  out.loss = lse - logits[gold_index];
  out.gradient.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.gradient[i] = std::exp(logits[i] - lse);
  out.gradient[gold_index] -= 1.0;
  return out;
}

/// Summed hinge sum_{i != gold} max(0, margin + logits[i] - logits[gold]).
/// A hinge at exactly zero counts as inactive.
inline LossResult margin_loss(std::span<const double> logits, std::size_t gold_index, double margin = 1.0) {
  if (gold_index >= logits.size())
    throw ScoringError("margin_loss: gold index " + std::to_string(gold_index) + " out of range for " +
                       std::to_string(logits.size()) + " logits");
  if (!(margin >= 0.0)) throw ScoringError("margin_loss: margin must be >= 0");
  LossResult out;
  out.gradient.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i == gold_index) continue;
    double hinge = margin + logits[i] - logits[gold_index];
    if (hinge > 0.0) {
      out.loss += hinge;
      out.gradient[i] += 1.0;
      out.gradient[gold_index] -= 1.0;
    }
  }
  return out;
}

} // namespace qacal

#endif
