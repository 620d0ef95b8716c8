#ifndef QACAL_TESTS_SPAN_FIXTURES_HPP
#define QACAL_TESTS_SPAN_FIXTURES_HPP

// Random mock-scorer fixtures and a brute-force span oracle that reads the
// JSON tables directly.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "qacal/records.hpp"

namespace qacal::testing {

struct SpanFixture {
  std::vector<std::string> tokens;
  Json tables;
};

inline Json random_distribution(std::mt19937_64& rng, const std::vector<std::string>& vocab) {
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<double> z;
  for (std::size_t i = 0; i < vocab.size(); ++i) z.push_back(normal(rng));
  double mx = *std::max_element(z.begin(), z.end()), sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  Json out = Json::object();
  for (std::size_t i = 0; i < vocab.size(); ++i) out[vocab[i]] = std::min(0.0, z[i] - mx - std::log(sum));
  return out;
}

/// Passage of 1..max_tokens tokens over a small vocabulary (so repeats and
/// duplicate surface strings occur), with a full continuation table for every
/// prefix that occurs in the passage.
inline SpanFixture random_span_fixture(std::mt19937_64& rng, std::size_t max_tokens = 30) {
  std::uniform_int_distribution<std::size_t> len(1, max_tokens), vsize(2, 8);
  std::vector<std::string> vocab;
  const std::size_t v = vsize(rng);
  for (std::size_t i = 0; i < v; ++i) vocab.push_back("w" + std::to_string(i));
  std::uniform_int_distribution<std::size_t> pick(0, v - 1);
  SpanFixture f;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) f.tokens.push_back(vocab[pick(rng)]);
  f.tables["first_token"] = random_distribution(rng, vocab);
  f.tables["continuations"] = Json::object();
  for (std::size_t s = 0; s < n; ++s) {
    std::string prefix;
    for (std::size_t e = s; e + 1 < n; ++e) {
      prefix += (e > s ? " " : "") + f.tokens[e];
      if (f.tables["continuations"].contains(prefix + "|" + vocab[0])) continue;
      const Json dist = random_distribution(rng, vocab);
      for (const auto& [tok, lp] : dist.items())
        f.tables["continuations"][prefix + "|" + tok] = lp;
    }
  }
  return f;
}

struct OracleSpan {
  std::size_t start;
  std::size_t length;
  std::string text;
  double log_prob;
};

/// Every (start, length) span whose first token is among the top R passage
/// tokens, scored by summing table entries left to right; best per surface
/// string, ranked by (log_prob desc, start asc, length asc), first K kept.
inline std::vector<OracleSpan> brute_force_spans(const SpanFixture& f, std::size_t R, std::size_t K, std::size_t max_len) {
  const auto& first = f.tables.at("first_token");
  const auto& cont = f.tables.at("continuations");
  // distinct passage tokens in order of first appearance (the id order)
  std::vector<std::string> distinct;
  for (const auto& t : f.tokens)
    if (std::find(distinct.begin(), distinct.end(), t) == distinct.end()) distinct.push_back(t);
  std::vector<std::size_t> order(distinct.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = first.at(distinct[a]).get<double>(), sb = first.at(distinct[b]).get<double>();
    return sa != sb ? sa > sb : a < b;
  });
  std::vector<std::string> chosen;
  for (std::size_t i = 0; i < std::min(R, order.size()); ++i) chosen.push_back(distinct[order[i]]);

  std::vector<OracleSpan> all;
  for (std::size_t s = 0; s < f.tokens.size(); ++s) {
    if (std::find(chosen.begin(), chosen.end(), f.tokens[s]) == chosen.end()) continue;
    for (std::size_t len = 1; len <= max_len && s + len <= f.tokens.size(); ++len) {
      double lp = first.at(f.tokens[s]).get<double>();
      std::string text = f.tokens[s];
      for (std::size_t j = s + 1; j < s + len; ++j) {
        lp += cont.at(text + "|" + f.tokens[j]).get<double>();
        text += " " + f.tokens[j];
      }
      all.push_back({s, len, text, lp});
    }
  }
  auto key = [](const OracleSpan& x) { return std::make_tuple(-x.log_prob, x.start, x.length); };
  std::sort(all.begin(), all.end(), [&](const OracleSpan& a, const OracleSpan& b) { return key(a) < key(b); });
  std::vector<OracleSpan> out;
  for (const auto& x : all) {
    if (std::any_of(out.begin(), out.end(), [&](const OracleSpan& y) { return y.text == x.text; })) continue;
    out.push_back(x);
  }
  if (out.size() > K) out.resize(K);
  return out;
}

} // namespace qacal::testing

#endif
