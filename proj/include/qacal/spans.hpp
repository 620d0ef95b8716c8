#ifndef QACAL_SPANS_HPP
#define QACAL_SPANS_HPP

// Extractive-QA candidate generation. The first-token distribution is masked
// to tokens present in the passage; the top-R tokens seed one span family per
// occurrence, each family is extended autoregressively up to max_len tokens,
// and the best K distinct surface strings are kept.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "detail/text.hpp"
#include "records.hpp"

namespace qacal {

class SpanError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using TokenId = std::int64_t;
using LogProbMap = std::unordered_map<TokenId, double>;

/// Autoregressive next-token scorer over the passage vocabulary.
class TokenScorer {
public:
  virtual ~TokenScorer() = default;
  /// log P(next | input, prefix) for the tokens the scorer knows about.
  virtual LogProbMap next_token_log_probs(std::string_view input, std::span<const TokenId> prefix) const = 0;
};

struct PassageToken {
  TokenId id = 0;
  std::string text;
};

struct SpanConfig {
  std::size_t top_first_tokens = 10; // R
  std::size_t top_spans = 5;         // K
  std::size_t max_len = 20;

  void check() const {
    if (top_first_tokens < 1 || top_spans < 1 || max_len < 1) throw SpanError("span config: R, K and max_len must be >= 1");
  }
};

struct SpanCandidate {
  std::size_t start = 0;
  std::size_t length = 0;
  std::string text;
  double log_prob = 0.0;
  std::vector<double> token_log_probs;
};

/// Ranking shared by dedup and top-K: higher log_prob, then earlier start,
/// then shorter span.
inline bool span_before(const SpanCandidate& a, const SpanCandidate& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.start != b.start) return a.start < b.start;
  return a.length < b.length;
}

inline std::string span_text(std::span<const PassageToken> passage, std::size_t start, std::size_t length) {
  std::string out;
  for (std::size_t i = start; i < start + length; ++i) {
    if (i > start) out.push_back(' ');
    out += passage[i].text;
  }
  return out;
}

/// Keeps the best-ranked span per surface text, then the first K by rank.
inline std::vector<SpanCandidate> dedup_and_rank(std::vector<SpanCandidate> spans, std::size_t k) {
  std::map<std::string, SpanCandidate> best;
  for (auto& s : spans) {
    auto it = best.find(s.text);
    if (it == best.end()) best.emplace(s.text, std::move(s));
    else if (span_before(s, it->second)) it->second = std::move(s);
  }
  std::vector<SpanCandidate> out;
  out.reserve(best.size());
  for (auto& [_, s] : best) out.push_back(std::move(s));
  std::sort(out.begin(), out.end(), span_before);
  if (out.size() > k) out.resize(k);
  return out;
}

namespace detail {

inline double lookup(const LogProbMap& scores, const PassageToken& token, std::size_t prefix_len) {
  auto it = scores.find(token.id);
  if (it == scores.end())
    throw SpanError("scorer has no score for token '" + token.text + "' (id " + std::to_string(token.id) +
                    ") after a prefix of " + std::to_string(prefix_len) + " tokens");
  return it->second;
}

} // namespace detail

inline std::vector<SpanCandidate> enumerate_spans(std::string_view input_text, std::span<const PassageToken> passage,
                                                  const TokenScorer& scorer, const SpanConfig& config) {
  config.check();
  if (passage.empty()) throw SpanError("enumerate_spans: passage is empty");

  // (1) first-token scores restricted to passage tokens
  const LogProbMap first = scorer.next_token_log_probs(input_text, {});
  std::map<TokenId, double> in_passage;
  for (const auto& t : passage)
    if (!in_passage.count(t.id)) in_passage.emplace(t.id, detail::lookup(first, t, 0));

  // (2) top-R, ties to the lower token id
  std::vector<std::pair<TokenId, double>> ranked(in_passage.begin(), in_passage.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > config.top_first_tokens) ranked.resize(config.top_first_tokens);
  std::set<TokenId> selected;
  for (const auto& [id, _] : ranked) selected.insert(id);

  // (3) span families from every occurrence. Scores depend only on the token
  // sequence, so continuation distributions are cached by prefix.
  std::map<std::vector<TokenId>, LogProbMap> cache;
  std::vector<SpanCandidate> spans;
  for (std::size_t start = 0; start < passage.size(); ++start) {
    if (!selected.count(passage[start].id)) continue;
    std::vector<TokenId> prefix{passage[start].id};
    SpanCandidate span{start, 1, passage[start].text, in_passage.at(passage[start].id), {in_passage.at(passage[start].id)}};
    spans.push_back(span);
    const std::size_t end = std::min(passage.size(), start + config.max_len);
    for (std::size_t pos = start + 1; pos < end; ++pos) {
      auto it = cache.find(prefix);
      if (it == cache.end()) it = cache.emplace(prefix, scorer.next_token_log_probs(input_text, prefix)).first;
      const double lp = detail::lookup(it->second, passage[pos], prefix.size());
      span.length += 1;
      span.log_prob += lp;
      span.token_log_probs.push_back(lp);
      span.text += ' ';
      span.text += passage[pos].text;
      spans.push_back(span);
      prefix.push_back(passage[pos].id);
    }
  }

  // (4) + (5)
  return dedup_and_rank(std::move(spans), config.top_spans);
}

// ---------------------------------------------------------------------------
// table-driven scorer
// ---------------------------------------------------------------------------

/// Token string <-> id mapping. Ids are assigned in order of first insertion.
class Vocabulary {
public:
  TokenId add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }
  std::optional<TokenId> find(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& text(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

private:
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> tokens_;
};

/// Assigns ids to passage tokens by first appearance. Tokens may not contain
/// whitespace or '|', which the mock scorer format uses as separators.
inline std::vector<PassageToken> make_passage(const std::vector<std::string>& tokens, Vocabulary& vocab) {
  std::vector<PassageToken> out;
  for (const auto& t : tokens) {
    if (t.empty() || t.find('|') != std::string::npos ||
        std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }))
      throw SpanError("passage token '" + t + "' is empty or contains whitespace or '|'");
    out.push_back({vocab.add(t), t});
  }
  return out;
}

/// Scorer backed by lookup tables:
///   {"first_token": {token: logp}, "continuations": {"prefix|token": logp}}
/// where prefix is the span so far, tokens joined by single spaces.
class MockScorer : public TokenScorer {
public:
  MockScorer(const Json& tables, const Vocabulary& vocab) : vocab_(vocab) {
    try {
      for (const auto& [token, lp] : tables.at("first_token").items()) {
        check_log_prob(lp, "first_token." + token);
        if (auto id = vocab_.find(token)) first_[*id] = lp.get<double>();
      }
      if (tables.contains("continuations")) {
        for (const auto& [key, lp] : tables.at("continuations").items()) {
          auto bar = key.rfind('|');
          if (bar == std::string::npos) throw SpanError("mock scorer: continuation key '" + key + "' lacks '|'");
          check_log_prob(lp, "continuations." + key);
          if (auto id = vocab_.find(key.substr(bar + 1))) continuations_[key.substr(0, bar)][*id] = lp.get<double>();
        }
      }
    } catch (const nlohmann::json::exception& err) {
      throw SpanError(std::string("mock scorer: ") + err.what());
    }
    check_mass(first_, "first_token");
    for (const auto& [prefix, dist] : continuations_) check_mass(dist, "continuations after '" + prefix + "'");
  }

  LogProbMap next_token_log_probs(std::string_view, std::span<const TokenId> prefix) const override {
    if (prefix.empty()) return first_;
    std::string key;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (i) key.push_back(' ');
      key += vocab_.text(prefix[i]);
    }
    auto it = continuations_.find(key);
    return it == continuations_.end() ? LogProbMap{} : it->second;
  }

private:
  static void check_log_prob(const Json& lp, const std::string& where) {
    if (!lp.is_number() || !(lp.get<double>() <= 0.0)) throw SpanError("mock scorer: " + where + " must be a log-prob <= 0");
  }
  static void check_mass(const LogProbMap& dist, const std::string& where) {
    std::vector<std::pair<TokenId, double>> sorted(dist.begin(), dist.end());
    std::sort(sorted.begin(), sorted.end());
    double mass = 0.0;
    for (const auto& [_, lp] : sorted) mass += std::exp(lp);
    if (mass > 1.0 + 1e-6) throw SpanError("mock scorer: probabilities of " + where + " sum above 1");
  }

  const Vocabulary& vocab_;
  LogProbMap first_;
  std::unordered_map<std::string, LogProbMap> continuations_;
};

} // namespace qacal

#endif
