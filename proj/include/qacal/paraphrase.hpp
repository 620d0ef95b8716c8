#ifndef QACAL_PARAPHRASE_HPP
#define QACAL_PARAPHRASE_HPP

// Paraphrase handling: top-k selection of round-trip outputs, group
// probability aggregation, and collapsing a grouped log back to one
// candidate per answer.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "detail/text.hpp"
#include "records.hpp"
#include "scoring.hpp"

namespace qacal {

/// Deduplicates beam outputs and returns the k most frequent, ties broken by
/// first appearance.
inline std::vector<std::string> select_paraphrases(const std::vector<std::string>& beam_outputs, std::size_t k) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& text : beam_outputs)
    if (counts[text]++ == 0) order.push_back(text);
  // stable: equal counts keep first-appearance order
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return counts[a] > counts[b]; });
  if (order.size() > k) order.resize(k);
  return order;
}

struct ParaphraseMember {
  std::string text;
  double log_prob = 0.0;
};

struct ParaphraseGroup {
  std::string canonical;
  std::vector<ParaphraseMember> members;
  bool is_gold = false;
  std::vector<std::size_t> candidate_indices;
};

/// Groups candidates by paraphrase_group in order of first appearance. The
/// first member of a group is its canonical answer; ungrouped candidates are
/// singleton groups. With include_canonical off, the canonical text is
/// dropped from the members unless it is the only one.
inline std::vector<ParaphraseGroup> paraphrase_groups(const Example& example, bool include_canonical = true) {
  std::vector<ParaphraseGroup> groups;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < example.candidates.size(); ++i) {
    const auto& c = example.candidates[i];
    std::size_t g;
    if (c.paraphrase_group) {
      auto [it, inserted] = slot.try_emplace(*c.paraphrase_group, groups.size());
      if (inserted) {
        groups.push_back({c.text, {}, c.is_gold, {}});
      }
      g = it->second;
    } else {
      g = groups.size();
      groups.push_back({c.text, {}, c.is_gold, {}});
    }
    groups[g].members.push_back({c.text, c.log_prob});
    groups[g].candidate_indices.push_back(i);
  }
  if (!include_canonical) {
    for (auto& g : groups)
      if (g.members.size() > 1) {
        g.members.erase(g.members.begin());
        g.candidate_indices.erase(g.candidate_indices.begin());
      }
  }
  return groups;
}

/// log of the summed member probabilities.
inline double group_log_mass(const std::vector<ParaphraseMember>& members) {
  std::vector<double> z;
  z.reserve(members.size());
  for (const auto& m : members) z.push_back(m.log_prob);
  return log_sum_exp(z);
}

struct AggregatedScores {
  std::vector<ParaphraseGroup> groups;
  std::vector<double> log_mass;
  NormalizedScores scores;
};

/// Sums member probabilities per group and normalizes over groups.
inline AggregatedScores aggregate_paraphrases(const Example& example, bool include_canonical = true) {
  AggregatedScores out;
  out.groups = paraphrase_groups(example, include_canonical);
  for (const auto& g : out.groups) out.log_mass.push_back(group_log_mass(g.members));
  out.scores = softmax(out.log_mass);
  return out;
}

/// One candidate per group: canonical text, log_prob = log of the group's
/// normalized probability, member texts kept under "paraphrases".
inline Example collapse_paraphrases(const Example& example, bool include_canonical = true) {
  auto agg = aggregate_paraphrases(example, include_canonical);
  auto full = paraphrase_groups(example);
  double total = log_sum_exp(agg.log_mass);
  Example out = example;
  out.candidates.clear();
  for (std::size_t g = 0; g < agg.groups.size(); ++g) {
    const auto& group = agg.groups[g];
    const auto& first = example.candidates[full[g].candidate_indices.front()];
    Candidate c;
    c.text = group.canonical;
    c.log_prob = std::min(0.0, agg.log_mass[g] - total);
    c.is_gold = group.is_gold;
    c.extra = first.extra;
    Json texts = Json::array();
    for (const auto& m : group.members) texts.push_back(m.text);
    c.extra["paraphrases"] = std::move(texts);
    out.candidates.push_back(std::move(c));
  }
  return out;
}

inline DatasetCollection collapse_paraphrases(const DatasetCollection& collection, bool include_canonical = true) {
  std::vector<Example> out;
  out.reserve(collection.size());
  for (const auto& e : collection.examples()) out.push_back(collapse_paraphrases(e, include_canonical));
  return DatasetCollection(std::move(out));
}

/// Unique whitespace tokens over total tokens across a paraphrase set.
inline double lexical_diversity(const std::vector<std::string>& texts) {
  std::set<std::string> unique;
  std::size_t total = 0;
  for (const auto& t : texts)
    for (auto& w : detail::split_whitespace(t)) {
      unique.insert(w);
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

} // namespace qacal

#endif
