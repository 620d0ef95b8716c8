#ifndef QACAL_RECORDS_HPP
#define QACAL_RECORDS_HPP

// Prediction-log data model: candidates, examples, collections, and their
// JSONL (de)serialization.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

namespace qacal {

using Json = nlohmann::ordered_json;

/// Thrown for malformed logs and invariant violations.
class RecordError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, dev, test };
enum class Format { multiple_choice, extractive };

inline std::string_view to_string(Split s) {
  switch (s) {
  case Split::train: return "train";
  case Split::dev: return "dev";
  case Split::test: return "test";
  }
  return "?";
}

inline std::string_view to_string(Format f) {
  return f == Format::multiple_choice ? "multiple_choice" : "extractive";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

inline std::optional<Format> parse_format(std::string_view s) {
  if (s == "multiple_choice") return Format::multiple_choice;
  if (s == "extractive") return Format::extractive;
  return std::nullopt;
}

/// Named feature values; nullopt marks a missing value.
using NamedFeatures = std::map<std::string, std::optional<double>>;

struct Candidate {
  std::string text;
  double log_prob = 0.0; // nats, <= 0
  std::optional<std::vector<double>> token_log_probs = std::nullopt;
  bool is_gold = false;
  std::optional<std::string> paraphrase_group = std::nullopt;
  std::optional<NamedFeatures> features = std::nullopt;
  // Calibrated confidence written by `apply`; absent on raw model logs.
  std::optional<double> confidence = std::nullopt;
  Json extra = Json::object();
};

struct Example {
  std::string id;
  std::string dataset_id;
  Split split = Split::test;
  std::string input_text;
  Format format = Format::multiple_choice;
  std::vector<Candidate> candidates;
  std::vector<std::string> gold_answers;
  std::optional<std::vector<double>> input_token_log_probs;
  Json extra = Json::object();
};

/// Examples in log order with lookup by dataset and split.
class DatasetCollection {
public:
  DatasetCollection() = default;
  explicit DatasetCollection(std::vector<Example> examples);

  const std::vector<Example>& examples() const { return examples_; }
  bool empty() const { return examples_.empty(); }
  std::size_t size() const { return examples_.size(); }

  /// Dataset ids in lexicographic order.
  std::vector<std::string> dataset_ids() const {
    std::set<std::string> ids;
    for (const auto& e : examples_) ids.insert(e.dataset_id);
    return {ids.begin(), ids.end()};
  }

  /// New collection holding only examples of the given split.
  DatasetCollection filter(Split split) const {
    std::vector<Example> out;
    for (const auto& e : examples_)
      if (e.split == split) out.push_back(e);
    return DatasetCollection(std::move(out));
  }

  /// Examples grouped by dataset id (lexicographic), log order within a group.
  std::map<std::string, std::vector<const Example*>> by_dataset() const {
    std::map<std::string, std::vector<const Example*>> groups;
    for (const auto& e : examples_) groups[e.dataset_id].push_back(&e);
    return groups;
  }

  friend bool operator==(const DatasetCollection& a, const DatasetCollection& b);

private:
  std::vector<Example> examples_;
};

// ---------------------------------------------------------------------------
// answer normalization and gold marking
// ---------------------------------------------------------------------------

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream words(cleaned);
  std::string word;
  std::string out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

/// Sets is_gold on every candidate whose normalized text matches a
/// normalized gold answer. Candidates that do not match are cleared.
inline Example mark_gold_extractive(Example example, const std::vector<std::string>& gold_answers) {
  std::set<std::string> gold;
  for (const auto& g : gold_answers) gold.insert(normalize_answer(g));
  for (auto& c : example.candidates) c.is_gold = gold.count(normalize_answer(c.text)) > 0;
  return example;
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

inline void validate(const Example& e) {
  auto fail = [&](const std::string& field, const std::string& what) {
    throw RecordError("example '" + e.id + "': field '" + field + "' " + what);
  };
  if (e.id.empty()) fail("id", "must be non-empty");
  if (e.candidates.empty()) fail("candidates", "must contain at least one candidate");
  if (e.input_token_log_probs) {
    for (double v : *e.input_token_log_probs)
      if (!std::isfinite(v) || v > 0.0) fail("input_token_log_probs", "must be finite and <= 0");
  }
  std::map<std::string, std::set<std::string>> group_texts;
  // Gold is counted per answer: a paraphrase group inherits the flag of its
  // first member, ungrouped candidates stand alone.
  int n_gold = 0;
  for (std::size_t i = 0; i < e.candidates.size(); ++i) {
    const auto& c = e.candidates[i];
    const std::string where = "candidates[" + std::to_string(i) + "].";
    if (c.text.empty()) fail(where + "text", "must be non-empty");
    if (!std::isfinite(c.log_prob) || c.log_prob > 0.0) fail(where + "log_prob", "must be finite and <= 0");
    if (c.token_log_probs) {
      double sum = 0.0;
      for (double v : *c.token_log_probs) {
        if (!std::isfinite(v) || v > 0.0) fail(where + "token_log_probs", "must be finite and <= 0");
        sum += v;
      }
      if (std::abs(sum - c.log_prob) > 1e-6) fail(where + "token_log_probs", "does not sum to log_prob");
    }
    if (c.confidence && !(*c.confidence >= 0.0 && *c.confidence <= 1.0))
      fail(where + "confidence", "must lie in [0, 1]");
    bool canonical = true;
    if (c.paraphrase_group) {
      auto& texts = group_texts[*c.paraphrase_group];
      canonical = texts.empty();
      if (!texts.insert(c.text).second)
        fail(where + "text", "duplicates another member of paraphrase group '" + *c.paraphrase_group + "'");
    }
    if (canonical && c.is_gold) ++n_gold;
  }
  if (e.format == Format::multiple_choice && n_gold != 1)
    fail("candidates.is_gold", "multiple_choice requires exactly one gold candidate, found " + std::to_string(n_gold));
  if (e.format == Format::extractive && e.gold_answers.empty())
    fail("gold_answers", "must be non-empty for extractive examples");
}

inline DatasetCollection::DatasetCollection(std::vector<Example> examples) : examples_(std::move(examples)) {
  std::set<std::tuple<std::string, Split, std::string>> seen;
  for (const auto& e : examples_) {
    if (!seen.emplace(e.dataset_id, e.split, e.id).second)
      throw RecordError("example '" + e.id + "': field 'id' is duplicated within dataset '" + e.dataset_id +
                        "' split '" + std::string(to_string(e.split)) + "'");
  }
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T take(Json& obj, const char* key, const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) throw RecordError(context + ": missing field '" + key + "'");
  try {
    T value = it->template get<T>();
    obj.erase(key);
    return value;
  } catch (const nlohmann::json::exception&) {
    throw RecordError(context + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> take_optional(Json& obj, const char* key, const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) return std::nullopt;
  if (it->is_null()) {
    obj.erase(key);
    return std::nullopt;
  }
  return take<T>(obj, key, context);
}

inline Candidate candidate_from_json(Json obj, const std::string& context, bool& gold_given) {
  if (!obj.is_object()) throw RecordError(context + ": candidate must be an object");
  Candidate c;
  c.text = take<std::string>(obj, "text", context);
  c.log_prob = take<double>(obj, "log_prob", context);
  c.token_log_probs = take_optional<std::vector<double>>(obj, "token_log_probs", context);
  auto gold = take_optional<bool>(obj, "is_gold", context);
  gold_given = gold.has_value();
  c.is_gold = gold.value_or(false);
  c.paraphrase_group = take_optional<std::string>(obj, "paraphrase_group", context);
  c.confidence = take_optional<double>(obj, "confidence", context);
  if (auto it = obj.find("features"); it != obj.end()) {
    if (!it->is_object()) throw RecordError(context + ": field 'features' must be an object");
    NamedFeatures f;
    for (auto& [name, value] : it->items()) {
      if (value.is_null()) f[name] = std::nullopt;
      else if (value.is_number()) f[name] = value.get<double>();
      else throw RecordError(context + ": field 'features." + name + "' must be a number or null");
    }
    c.features = std::move(f);
    obj.erase("features");
  }
  c.extra = std::move(obj);
  return c;
}

} // namespace detail

/// Parses one JSONL record. Extractive candidates without an explicit
/// is_gold flag are marked by normalized match against gold_answers.
inline Example example_from_json(Json obj) {
  if (!obj.is_object()) throw RecordError("record must be a JSON object");
  std::string context = "example";
  if (auto it = obj.find("id"); it != obj.end() && it->is_string()) context = "example '" + it->get<std::string>() + "'";
  Example e;
  e.id = detail::take<std::string>(obj, "id", context);
  e.dataset_id = detail::take<std::string>(obj, "dataset", context);
  auto split = detail::take<std::string>(obj, "split", context);
  auto s = parse_split(split);
  if (!s) throw RecordError(context + ": field 'split' has unknown value '" + split + "'");
  e.split = *s;
  auto format = detail::take<std::string>(obj, "format", context);
  auto f = parse_format(format);
  if (!f) throw RecordError(context + ": field 'format' has unknown value '" + format + "'");
  e.format = *f;
  e.input_text = detail::take<std::string>(obj, "input", context);
  e.gold_answers = detail::take_optional<std::vector<std::string>>(obj, "gold_answers", context).value_or(std::vector<std::string>{});
  e.input_token_log_probs = detail::take_optional<std::vector<double>>(obj, "input_token_log_probs", context);
  auto it = obj.find("candidates");
  if (it == obj.end() || !it->is_array()) throw RecordError(context + ": field 'candidates' must be an array");
  std::vector<bool> gold_given;
  for (std::size_t i = 0; i < it->size(); ++i) {
    bool given = false;
    e.candidates.push_back(detail::candidate_from_json((*it)[i], context + " candidates[" + std::to_string(i) + "]", given));
    gold_given.push_back(given);
  }
  obj.erase("candidates");
  e.extra = std::move(obj);

  if (e.format == Format::extractive) {
    std::set<std::string> gold;
    for (const auto& g : e.gold_answers) gold.insert(normalize_answer(g));
    for (std::size_t i = 0; i < e.candidates.size(); ++i)
      if (!gold_given[i]) e.candidates[i].is_gold = gold.count(normalize_answer(e.candidates[i].text)) > 0;
  }
  validate(e);
  return e;
}

inline Json to_json(const Candidate& c) {
  Json j;
  j["text"] = c.text;
  j["log_prob"] = c.log_prob;
  if (c.token_log_probs) j["token_log_probs"] = *c.token_log_probs;
  j["is_gold"] = c.is_gold;
  if (c.paraphrase_group) j["paraphrase_group"] = *c.paraphrase_group;
  if (c.features) {
    Json f = Json::object();
    for (const auto& [name, value] : *c.features) f[name] = value ? Json(*value) : Json(nullptr);
    j["features"] = std::move(f);
  }
  if (c.confidence) j["confidence"] = *c.confidence;
  for (const auto& [k, v] : c.extra.items()) j[k] = v;
  return j;
}

inline Json to_json(const Example& e) {
  Json j;
  j["id"] = e.id;
  j["dataset"] = e.dataset_id;
  j["split"] = to_string(e.split);
  j["format"] = to_string(e.format);
  j["input"] = e.input_text;
  if (!e.gold_answers.empty()) j["gold_answers"] = e.gold_answers;
  if (e.input_token_log_probs) j["input_token_log_probs"] = *e.input_token_log_probs;
  Json cands = Json::array();
  for (const auto& c : e.candidates) cands.push_back(to_json(c));
  j["candidates"] = std::move(cands);
  for (const auto& [k, v] : e.extra.items()) j[k] = v;
  return j;
}

/// Reads newline-delimited JSON. Blank lines are skipped; errors carry the
/// 1-based line number.
inline DatasetCollection parse_log(std::istream& in) {
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw RecordError("line " + std::to_string(line_no) + ": malformed JSON (" + err.what() + ")");
    }
    try {
      examples.push_back(example_from_json(std::move(obj)));
    } catch (const RecordError& err) {
      throw RecordError("line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  try {
    return DatasetCollection(std::move(examples));
  } catch (const RecordError& err) {
    throw RecordError(std::string("log: ") + err.what());
  }
}

inline DatasetCollection parse_log(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_log(in);
}

inline void write_log(std::ostream& out, const DatasetCollection& collection) {
  for (const auto& e : collection.examples()) out << to_json(e).dump() << '\n';
}

inline std::string serialize(const DatasetCollection& collection) {
  std::ostringstream out;
  write_log(out, collection);
  return out.str();
}

inline bool operator==(const DatasetCollection& a, const DatasetCollection& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (to_json(a.examples_[i]) != to_json(b.examples_[i])) return false;
  return true;
}

/// Whitespace-delimited token count.
inline std::size_t word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

} // namespace qacal

#endif
