#ifndef QACAL_RETRIEVAL_HPP
#define QACAL_RETRIEVAL_HPP

// Retrieval-based input augmentation: a unigram+bigram TF-IDF index over a
// local corpus, cosine ranking, and appending the lead sentences of the
// retrieved article to a question.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detail/text.hpp"
#include "records.hpp"

namespace qacal {

class RetrievalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string text;
};

/// Lowercased, punctuation-stripped unigrams followed by adjacent bigrams.
inline std::vector<std::string> tfidf_terms(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  auto words = detail::split_whitespace(cleaned);
  std::vector<std::string> terms = words;
  for (std::size_t i = 0; i + 1 < words.size(); ++i) terms.push_back(words[i] + ' ' + words[i + 1]);
  return terms;
}

/// TF-IDF index with raw term counts and idf = ln((1 + N) / (1 + df)) + 1.
/// Documents are indexed over "title text".
class TfidfIndex {
public:
  explicit TfidfIndex(std::vector<Document> documents) : docs_(std::move(documents)) {
    std::set<std::string> ids;
    for (const auto& d : docs_)
      if (!ids.insert(d.doc_id).second) throw RetrievalError("corpus: duplicate doc_id '" + d.doc_id + "'");
    std::vector<std::map<std::string, double>> counts;
    std::map<std::string, std::size_t> df;
    for (const auto& d : docs_) {
      std::map<std::string, double> tf;
      for (auto& t : tfidf_terms(d.title + ' ' + d.text)) tf[t] += 1.0;
      for (const auto& [t, _] : tf) ++df[t];
      counts.push_back(std::move(tf));
    }
    const double n = static_cast<double>(docs_.size());
    for (const auto& [t, f] : df) idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(f))) + 1.0;
    for (auto& tf : counts) {
      double norm = 0.0;
      for (auto& [t, w] : tf) {
        w *= idf_.at(t);
        norm += w * w;
      }
      weights_.push_back(std::move(tf));
      norms_.push_back(std::sqrt(norm));
    }
  }

  const std::vector<Document>& documents() const { return docs_; }

  double idf(const std::string& term) const {
    auto it = idf_.find(term);
    const double n = static_cast<double>(docs_.size());
    return it != idf_.end() ? it->second : std::log(1.0 + n) + 1.0;
  }

  /// Cosine similarity between the query and every document, in corpus order.
  std::vector<double> similarities(std::string_view query) const {
    std::map<std::string, double> q;
    for (auto& t : tfidf_terms(query)) q[t] += 1.0;
    double qnorm = 0.0;
    for (auto& [t, w] : q) {
      w *= idf(t);
      qnorm += w * w;
    }
    qnorm = std::sqrt(qnorm);
    std::vector<double> out(docs_.size(), 0.0);
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      if (qnorm == 0.0 || norms_[d] == 0.0) continue;
      double dot = 0.0;
      for (const auto& [t, w] : q) {
        auto it = weights_[d].find(t);
        if (it != weights_[d].end()) dot += w * it->second;
      }
      out[d] = dot / (qnorm * norms_[d]);
    }
    return out;
  }

private:
  std::vector<Document> docs_;
  std::map<std::string, double> idf_;
  std::vector<std::map<std::string, double>> weights_;
  std::vector<double> norms_;
};

/// Top-n doc ids by cosine similarity, ties to the lexicographically lower id.
inline std::vector<std::string> tfidf_retrieve(const TfidfIndex& index, std::string_view query, std::size_t top_n = 1) {
  if (index.documents().empty()) throw RetrievalError("tfidf_retrieve: corpus is empty");
  if (detail::trim(query).empty()) throw RetrievalError("tfidf_retrieve: query is empty");
  auto sims = index.similarities(query);
  std::vector<std::size_t> order(sims.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& docs = index.documents();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return docs[a].doc_id < docs[b].doc_id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(top_n, order.size()); ++i) out.push_back(docs[order[i]].doc_id);
  return out;
}

inline std::vector<Document> parse_corpus(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      auto j = Json::parse(line);
      docs.push_back({j.at("doc_id").get<std::string>(), j.value("title", std::string{}), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& err) {
      throw RetrievalError("corpus line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

/// Text before the first blank line.
inline std::string first_paragraph(std::string_view body) {
  std::size_t line_start = 0;
  while (line_start < body.size()) {
    std::size_t nl = body.find('\n', line_start);
    std::size_t line_end = nl == std::string_view::npos ? body.size() : nl;
    if (line_start > 0 && detail::trim(body.substr(line_start, line_end - line_start)).empty())
      return detail::trim(body.substr(0, line_start));
    if (nl == std::string_view::npos) break;
    line_start = nl + 1;
  }
  return detail::trim(body);
}

/// Naive splitter: a sentence ends at '.', '?' or '!' followed by whitespace
/// and an uppercase letter. Abbreviations such as "Dr. Smith" are split.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '?' && c != '!') continue;
    std::size_t j = i + 1;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i + 1 || j >= text.size() || !std::isupper(static_cast<unsigned char>(text[j]))) continue;
    auto s = detail::trim(text.substr(start, i + 1 - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = j;
    i = j - 1;
  }
  auto tail = detail::trim(text.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

/// Copy of the example with the first n sentences of the article's first
/// paragraph appended to its input after a newline.
inline Example augment_input(const Example& example, std::string_view article_body, std::size_t n_sentences = 3) {
  if (detail::trim(article_body).empty()) throw RetrievalError("augment_input: article body is empty");
  auto sentences = split_sentences(first_paragraph(article_body));
  if (sentences.size() > n_sentences) sentences.resize(n_sentences);
  Example out = example;
  if (!sentences.empty()) out.input_text += "\n" + detail::join(sentences, " ");
  return out;
}

} // namespace qacal

#endif
