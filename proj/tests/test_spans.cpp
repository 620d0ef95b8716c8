#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qacal/spans.hpp"
#include "support/span_fixtures.hpp"

namespace {

using namespace qacal;
using qacal::testing::brute_force_spans;
using qacal::testing::random_span_fixture;

std::vector<SpanCandidate> run(const std::vector<std::string>& tokens, const Json& tables, SpanConfig config) {
  Vocabulary vocab;
  auto passage = make_passage(tokens, vocab);
  MockScorer scorer(tables, vocab);
  return enumerate_spans("question", passage, scorer, config);
}

/// Counts calls so caching can be observed.
class CountingScorer : public TokenScorer {
public:
  explicit CountingScorer(const TokenScorer& inner) : inner_(inner) {}
  LogProbMap next_token_log_probs(std::string_view input, std::span<const TokenId> prefix) const override {
    ++calls;
    return inner_.next_token_log_probs(input, prefix);
  }
  mutable int calls = 0;

private:
  const TokenScorer& inner_;
};

TEST(Spans, SingleTokenPassage) {
  Json tables = {{"first_token", {{"x", std::log(0.4)}}}};
  auto spans = run({"x"}, tables, {});
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].text, "x");
  EXPECT_EQ(spans[0].start, 0u);
  EXPECT_EQ(spans[0].length, 1u);
  EXPECT_DOUBLE_EQ(spans[0].log_prob, std::log(0.4));
}

TEST(Spans, ExhaustiveConfigMatchesBruteForce) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    auto f = random_span_fixture(rng);
    SpanConfig config{1000, 100000, 30};
    auto got = run(f.tokens, f.tables, config);
    auto want = brute_force_spans(f, 1000, 100000, 30);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].text, want[i].text);
      EXPECT_EQ(got[i].start, want[i].start);
      EXPECT_EQ(got[i].length, want[i].length);
      EXPECT_EQ(got[i].log_prob, want[i].log_prob);
    }
  }
}

TEST(Spans, PrunedConfigMatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    auto f = random_span_fixture(rng);
    SpanConfig config{2, 5, 4};
    auto got = run(f.tokens, f.tables, config);
    auto want = brute_force_spans(f, 2, 5, 4);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].text, want[i].text);
      EXPECT_EQ(got[i].log_prob, want[i].log_prob);
    }
  }
}

TEST(Spans, FirstTokenPruningDecidesTheTopCandidate) {
  // "a" is the likeliest first token but every continuation after it is
  // hopeless; "b" would seed long, likely spans. With R = 1 only "a" seeds.
  Json tables = {{"first_token", {{"a", std::log(0.9)}, {"b", std::log(0.05)}, {"c", std::log(0.05)}}},
                 {"continuations",
                  {{"a|a", -1e9}, {"a|b", -1e9}, {"a|c", -1e9}, {"b|a", 0.0}, {"b|b", -30.0}, {"b|c", -30.0},
                   {"b a|a", -30.0}, {"b a|b", -30.0}, {"b a|c", 0.0}, {"b a b|c", -1.0}, {"a b|c", -1e9}, {"a b|a", -1e9}, {"a b|b", -1e9}}}};
  const std::vector<std::string> passage{"b", "a", "b", "c"};
  auto pruned = run(passage, tables, {1, 5, 20});
  ASSERT_FALSE(pruned.empty());
  EXPECT_EQ(pruned[0].text.substr(0, 1), "a");
  for (const auto& s : pruned) EXPECT_EQ(s.text[0], 'a');
  auto wide = run(passage, tables, {3, 5, 20});
  EXPECT_EQ(wide[0].text, "a");
  EXPECT_EQ(wide[1].text, "b");
  EXPECT_EQ(wide[2].text, "b a");
  EXPECT_EQ(wide[3].text, "c");
}

TEST(Spans, MissingScoreIsAnError) {
  Json tables = {{"first_token", {{"x", -1.0}}}};
  EXPECT_THROW(run({"x", "y"}, tables, {}), SpanError);
  Json partial = {{"first_token", {{"x", -1.0}, {"y", -1.0}}}, {"continuations", {{"x|z", -1.0}}}};
  EXPECT_THROW(run({"x", "y"}, partial, {}), SpanError);
}

TEST(Spans, InvalidInputs) {
  EXPECT_THROW(run({"x"}, Json{{"first_token", {{"x", 0.5}}}}, {}), SpanError);
  EXPECT_THROW(run({"x", "y"}, Json{{"first_token", {{"x", -0.1}, {"y", -0.1}}}}, {}), SpanError);
  EXPECT_THROW(run({"x"}, Json{{"first_token", {{"x", -1.0}}}}, {0, 5, 20}), SpanError);
  Vocabulary vocab;
  EXPECT_THROW(make_passage({"two words"}, vocab), SpanError);
  EXPECT_THROW(make_passage({"a|b"}, vocab), SpanError);
  MockScorer scorer(Json{{"first_token", Json::object()}}, vocab);
  EXPECT_THROW(enumerate_spans("q", std::vector<PassageToken>{}, scorer, {}), SpanError);
}

TEST(Spans, Invariants) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    auto f = random_span_fixture(rng, 20);
    SpanConfig config{3, 4, 6};
    auto spans = run(f.tokens, f.tables, config);
    EXPECT_LE(spans.size(), config.top_spans);
    std::set<std::string> texts;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const auto& s = spans[i];
      EXPECT_GE(s.length, 1u);
      EXPECT_LE(s.length, config.max_len);
      EXPECT_LE(s.start + s.length, f.tokens.size());
      EXPECT_LE(s.log_prob, 0.0);
      EXPECT_EQ(s.token_log_probs.size(), s.length);
      double sum = 0.0;
      for (double v : s.token_log_probs) sum += v;
      EXPECT_EQ(sum, s.log_prob);
      EXPECT_TRUE(texts.insert(s.text).second);
      if (i) {
        EXPECT_GE(spans[i - 1].log_prob, s.log_prob);
      }
    }
  }
}

TEST(Spans, ContinuationsAreCachedPerPrefix) {
  // identical token runs share prefixes, so each distinct prefix is queried once
  std::vector<std::string> tokens{"a", "b", "a", "b", "a", "b"};
  Json tables = {{"first_token", {{"a", std::log(0.5)}, {"b", std::log(0.5)}}}, {"continuations", Json::object()}};
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    std::string prefix;
    for (std::size_t e = s; e + 1 < tokens.size(); ++e) {
      prefix += (e > s ? " " : "") + tokens[e];
      tables["continuations"][prefix + "|a"] = std::log(0.5);
      tables["continuations"][prefix + "|b"] = std::log(0.5);
    }
  }
  Vocabulary vocab;
  auto passage = make_passage(tokens, vocab);
  MockScorer mock(tables, vocab);
  CountingScorer counting(mock);
  enumerate_spans("q", passage, counting, {10, 5, 20});
  // distinct prefixes: "a", "a b", ..., "a b a b a" (5) and "b", ..., "b a b a" (4), plus the first call
  EXPECT_EQ(counting.calls, 10);
}

} // namespace
