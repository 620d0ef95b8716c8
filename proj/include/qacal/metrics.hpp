#ifndef QACAL_METRICS_HPP
#define QACAL_METRICS_HPP

// Calibration metrics: equal-width confidence buckets, expected calibration
// error, per-dataset reports with macro averaging, CSV and SVG reliability
// diagram output, and the paraphrase sensitivity analysis.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "detail/text.hpp"
#include "paraphrase.hpp"
#include "records.hpp"
#include "scoring.hpp"

namespace qacal {

class MetricsError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CalibrationItem {
  double confidence = 0.0;
  bool correct = false;
};

struct Bucket {
  std::size_t index = 1; // 1-based; covers ((index-1)/M, index/M]
  std::size_t count = 0;
  std::optional<double> avg_confidence;
  std::optional<double> avg_accuracy;
};

enum class EceMode { all_candidates, predictions_only };

inline std::string_view to_string(EceMode m) {
  return m == EceMode::all_candidates ? "all_candidates" : "predictions_only";
}

/// Bucket index in 1..M for a confidence in [0, 1]. Exactly 0 goes to
/// bucket 1.
inline std::size_t bucket_of(double confidence, std::size_t num_buckets) {
  const double m = static_cast<double>(num_buckets);
  auto b = static_cast<std::size_t>(std::ceil(confidence * m));
  b = std::clamp<std::size_t>(b, 1, num_buckets);
  // settle rounding in confidence * M against the exact interval bounds
  while (b > 1 && confidence <= static_cast<double>(b - 1) / m) --b;
  while (b < num_buckets && confidence > static_cast<double>(b) / m) ++b;
  return b;
}

inline std::vector<Bucket> bucketize(const std::vector<CalibrationItem>& items, std::size_t num_buckets) {
  if (num_buckets < 1) throw MetricsError("bucketize: number of buckets must be >= 1");
  std::vector<Bucket> buckets(num_buckets);
  std::vector<double> conf_sum(num_buckets, 0.0), acc_sum(num_buckets, 0.0);
  for (std::size_t m = 0; m < num_buckets; ++m) buckets[m].index = m + 1;
  for (const auto& item : items) {
    if (!(item.confidence >= 0.0 && item.confidence <= 1.0))
      throw MetricsError("bucketize: confidence " + std::to_string(item.confidence) + " outside [0, 1]");
    auto m = bucket_of(item.confidence, num_buckets) - 1;
    ++buckets[m].count;
    conf_sum[m] += item.confidence;
    acc_sum[m] += item.correct ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < num_buckets; ++m) {
    if (buckets[m].count == 0) continue;
    const double n = static_cast<double>(buckets[m].count);
    buckets[m].avg_confidence = conf_sum[m] / n;
    buckets[m].avg_accuracy = acc_sum[m] / n;
  }
  return buckets;
}

inline double ece_from_buckets(const std::vector<Bucket>& buckets, std::size_t n) {
  double total = 0.0;
  for (const auto& b : buckets) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(*b.avg_accuracy - *b.avg_confidence);
  }
  return total;
}

inline double ece(const std::vector<CalibrationItem>& items, std::size_t num_buckets = 10) {
  if (items.empty()) throw MetricsError("ece: no items");
  return ece_from_buckets(bucketize(items, num_buckets), items.size());
}

struct CalibrationReport {
  std::string dataset;
  EceMode mode = EceMode::all_candidates;
  std::size_t num_buckets = 10;
  std::vector<Bucket> buckets;
  std::size_t n = 0;
  double ece = 0.0;
  std::vector<double> histogram; // |B_m| / n
};

/// Items for one example. Confidences are calibrated values when present,
/// normalized probabilities otherwise.
inline void append_items(const Example& example, EceMode mode, std::vector<CalibrationItem>& items) {
  auto scores = confidences(example);
  if (mode == EceMode::all_candidates) {
    for (std::size_t i = 0; i < example.candidates.size(); ++i)
      items.push_back({scores.probs[i], example.candidates[i].is_gold});
  } else {
    items.push_back({scores.probs[scores.predicted_index], example.candidates[scores.predicted_index].is_gold});
  }
}

inline CalibrationReport calibration_report(const std::string& dataset, const std::vector<CalibrationItem>& items,
                                            std::size_t num_buckets, EceMode mode) {
  CalibrationReport r;
  r.dataset = dataset;
  r.mode = mode;
  r.num_buckets = num_buckets;
  r.n = items.size();
  r.ece = ece(items, num_buckets);
  r.buckets = bucketize(items, num_buckets);
  for (const auto& b : r.buckets) r.histogram.push_back(static_cast<double>(b.count) / static_cast<double>(r.n));
  return r;
}

struct CollectionReport {
  std::vector<CalibrationReport> datasets; // lexicographic by dataset id
  double macro_ece = 0.0;
};

inline CollectionReport report(const DatasetCollection& collection, std::size_t num_buckets = 10,
                               EceMode mode = EceMode::all_candidates) {
  if (collection.empty()) throw MetricsError("report: collection is empty");
  CollectionReport out;
  double sum = 0.0;
  for (const auto& [dataset, examples] : collection.by_dataset()) {
    std::vector<CalibrationItem> items;
    for (const Example* e : examples) append_items(*e, mode, items);
    out.datasets.push_back(calibration_report(dataset, items, num_buckets, mode));
    sum += out.datasets.back().ece;
  }
  out.macro_ece = sum / static_cast<double>(out.datasets.size());
  return out;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline void write_csv(std::ostream& out, const CollectionReport& rep) {
  out << "dataset,mode,M,bucket,count,avg_conf,avg_acc,ece\n";
  for (const auto& r : rep.datasets) {
    for (const auto& b : r.buckets) {
      out << r.dataset << ',' << to_string(r.mode) << ',' << r.num_buckets << ',' << b.index << ',' << b.count << ','
          << (b.avg_confidence ? detail::fixed(*b.avg_confidence, 6) : "") << ','
          << (b.avg_accuracy ? detail::fixed(*b.avg_accuracy, 6) : "") << ',' << detail::fixed(r.ece, 6) << '\n';
    }
  }
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out.push_back(c);
    }
  }
  return out;
}

} // namespace detail

/// Self-contained reliability diagram: one bar per bucket at acc(B_m), the
/// gap to conf(B_m) shaded, and the identity diagonal.
inline void write_reliability_svg(std::ostream& out, const CalibrationReport& r) {
  using detail::fixed;
  constexpr double left = 50, top = 30, size = 300;
  const double width = size / static_cast<double>(r.num_buckets);
  auto x = [&](double v) { return fixed(left + v * size, 2); };
  auto y = [&](double v) { return fixed(top + (1.0 - v) * size, 2); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"380\" height=\"380\" viewBox=\"0 0 380 380\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"380\" height=\"380\" fill=\"white\"/>\n";
  out << "<text x=\"190\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << detail::xml_escape(r.dataset) << " (" << to_string(r.mode) << ", M=" << r.num_buckets
      << ", ECE=" << fixed(r.ece, 4) << ")</text>\n";
  for (const auto& b : r.buckets) {
    if (b.count == 0) continue;
    const double x0 = static_cast<double>(b.index - 1) / static_cast<double>(r.num_buckets);
    const double acc = *b.avg_accuracy;
    const double conf = *b.avg_confidence;
    out << "<rect class=\"acc\" x=\"" << x(x0) << "\" y=\"" << y(acc) << "\" width=\"" << fixed(width, 2)
        << "\" height=\"" << fixed(acc * size, 2) << "\" fill=\"#1f77b4\" stroke=\"#0b3d66\"/>\n";
    const double lo = std::min(acc, conf), hi = std::max(acc, conf);
    out << "<rect class=\"gap\" x=\"" << x(x0) << "\" y=\"" << y(hi) << "\" width=\"" << fixed(width, 2)
        << "\" height=\"" << fixed((hi - lo) * size, 2) << "\" fill=\"#d62728\" fill-opacity=\"0.3\"/>\n";
  }
  out << "<line x1=\"" << x(0) << "\" y1=\"" << y(0) << "\" x2=\"" << x(1) << "\" y2=\"" << y(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  out << "<rect x=\"" << x(0) << "\" y=\"" << y(1) << "\" width=\"" << fixed(size, 2) << "\" height=\"" << fixed(size, 2)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    out << "<text x=\"" << x(v) << "\" y=\"" << fixed(top + size + 14, 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(v, 2) << "</text>\n";
    out << "<text x=\"" << fixed(left - 4, 2) << "\" y=\"" << y(v)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(v, 2) << "</text>\n";
  }
  out << "<text x=\"" << x(0.5) << "\" y=\"" << fixed(top + size + 30, 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">confidence</text>\n";
  out << "<text x=\"14\" y=\"" << y(0.5) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\""
      << " transform=\"rotate(-90 14 " << y(0.5) << ")\">accuracy</text>\n";
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// paraphrase sensitivity
// ---------------------------------------------------------------------------

enum class SensitivityLabel { better_calibrated, unchanged };

struct CandidateShift {
  std::string example_id;
  std::size_t index = 0;
  bool is_gold = false;
  double before = 0.0;
  double after = 0.0;
  SensitivityLabel label = SensitivityLabel::unchanged;
  std::size_t question_length = 0;
  double diversity = 0.0;
};

struct SensitivityReport {
  double threshold = 0.20; // absolute change in confidence
  std::vector<CandidateShift> candidates;
  std::size_t n_better = 0;
  std::size_t n_unchanged = 0;
  double mean_question_length_better = 0.0;
  double mean_question_length_unchanged = 0.0;
  double mean_diversity_better = 0.0;
  double mean_diversity_unchanged = 0.0;
};

inline SensitivityLabel classify_shift(bool is_gold, double before, double after, double threshold = 0.20) {
  constexpr double slack = 1e-12;
  const double delta = after - before;
  if (is_gold ? delta >= threshold - slack : -delta >= threshold - slack) return SensitivityLabel::better_calibrated;
  return SensitivityLabel::unchanged;
}

/// Compares confidences without paraphrases (`before`, one candidate per
/// answer) against paraphrase-aggregated confidences (`after`, candidates
/// grouped by paraphrase_group). Group g of an `after` example aligns with
/// candidate g of the matching `before` example.
inline SensitivityReport paraphrase_sensitivity(const DatasetCollection& before, const DatasetCollection& after,
                                                double threshold = 0.20) {
  using Key = std::tuple<std::string, Split, std::string>;
  std::map<Key, const Example*> after_by_key;
  for (const auto& e : after.examples()) after_by_key[{e.dataset_id, e.split, e.id}] = &e;
  if (after_by_key.size() != before.size())
    throw MetricsError("paraphrase_sensitivity: collections hold different numbers of examples");

  SensitivityReport rep;
  rep.threshold = threshold;
  double len_better = 0, len_unchanged = 0, div_better = 0, div_unchanged = 0;
  for (const auto& b : before.examples()) {
    auto it = after_by_key.find({b.dataset_id, b.split, b.id});
    if (it == after_by_key.end())
      throw MetricsError("paraphrase_sensitivity: example '" + b.id + "' missing from the paraphrased collection");
    const Example& a = *it->second;
    auto agg = aggregate_paraphrases(a);
    if (agg.groups.size() != b.candidates.size())
      throw MetricsError("paraphrase_sensitivity: example '" + b.id + "' has " + std::to_string(b.candidates.size()) +
                         " candidates but " + std::to_string(agg.groups.size()) + " paraphrase groups");
    auto base = confidences(b);
    const std::size_t qlen = word_count(b.input_text);
    for (std::size_t i = 0; i < b.candidates.size(); ++i) {
      CandidateShift s;
      s.example_id = b.id;
      s.index = i;
      s.is_gold = b.candidates[i].is_gold;
      s.before = base.probs[i];
      s.after = agg.scores.probs[i];
      s.label = classify_shift(s.is_gold, s.before, s.after, threshold);
      s.question_length = qlen;
      std::vector<std::string> texts;
      for (const auto& m : agg.groups[i].members) texts.push_back(m.text);
      s.diversity = lexical_diversity(texts);
      if (s.label == SensitivityLabel::better_calibrated) {
        ++rep.n_better;
        len_better += static_cast<double>(qlen);
        div_better += s.diversity;
      } else {
        ++rep.n_unchanged;
        len_unchanged += static_cast<double>(qlen);
        div_unchanged += s.diversity;
      }
      rep.candidates.push_back(std::move(s));
    }
  }
  if (rep.n_better) {
    rep.mean_question_length_better = len_better / static_cast<double>(rep.n_better);
    rep.mean_diversity_better = div_better / static_cast<double>(rep.n_better);
  }
  if (rep.n_unchanged) {
    rep.mean_question_length_unchanged = len_unchanged / static_cast<double>(rep.n_unchanged);
    rep.mean_diversity_unchanged = div_unchanged / static_cast<double>(rep.n_unchanged);
  }
  return rep;
}

} // namespace qacal

#endif
