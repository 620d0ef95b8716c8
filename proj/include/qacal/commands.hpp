#ifndef QACAL_COMMANDS_HPP
#define QACAL_COMMANDS_HPP

// Implementations behind the `qacal` subcommands. Each command reads and
// writes files, prints a human-readable summary to `out`, and throws
// std::exception on any error (the tool maps that to exit status 1).

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "detail/text.hpp"
#include "gbdt.hpp"
#include "metrics.hpp"
#include "paraphrase.hpp"
#include "records.hpp"
#include "retrieval.hpp"
#include "scoring.hpp"
#include "spans.hpp"
#include "temp_scaling.hpp"

namespace qacal::cli {

class CommandError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// file helpers
// ---------------------------------------------------------------------------

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError("cannot open '" + path + "' for reading");
  return in;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw CommandError("failed writing '" + path.string() + "'");
}

inline DatasetCollection read_log(const std::string& path) {
  auto in = open_input(path);
  try {
    return parse_log(in);
  } catch (const RecordError& err) {
    throw CommandError(path + ": " + err.what());
  }
}

inline void write_log(const std::string& path, const DatasetCollection& collection) {
  write_file(path, serialize(collection));
}

inline Json read_json(const std::string& path) {
  auto in = open_input(path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw CommandError(path + ": malformed JSON (" + err.what() + ")");
  }
}

template <typename F>
void for_each_jsonl(const std::string& path, F&& f) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw CommandError(path + ": line " + std::to_string(line_no) + ": malformed JSON (" + err.what() + ")");
    }
    try {
      f(std::move(j));
    } catch (const nlohmann::json::exception& err) {
      throw CommandError(path + ": line " + std::to_string(line_no) + ": " + err.what());
    }
  }
}

inline std::string num(double v) { return detail::fixed(v, 6); }

/// Dataset id made safe for a file name.
inline std::string file_stem(const std::string& dataset) {
  std::string out;
  for (unsigned char c : dataset) out.push_back(std::isalnum(c) || c == '-' || c == '_' || c == '.' ? static_cast<char>(c) : '_');
  return out.empty() ? "_" : out;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

inline int cmd_validate(const std::string& input, std::ostream& out) {
  auto log = read_log(input);
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& e : log.examples()) {
    auto& c = counts[{e.dataset_id, std::string(to_string(e.split))}];
    c.first += 1;
    c.second += e.candidates.size();
  }
  for (const auto& [key, c] : counts)
    out << "dataset=" << key.first << " split=" << key.second << " examples=" << c.first << " candidates=" << c.second
        << '\n';
  out << "ok: " << log.size() << " examples\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string input;
  std::string output_dir;
  std::size_t buckets = 10;
  EceMode mode = EceMode::all_candidates;
  std::string split = "test"; // train | dev | test | all
  double margin = 1.0;
};

inline DatasetCollection select_split(const DatasetCollection& log, const std::string& split) {
  if (split == "all") return log;
  auto s = parse_split(split);
  if (!s) throw CommandError("unknown split '" + split + "'");
  return log.filter(*s);
}

struct EvalSummary {
  CollectionReport calibration;
  AccuracyReport accuracy;
};

inline EvalSummary evaluate(const DatasetCollection& data, std::size_t buckets, EceMode mode) {
  return {report(data, buckets, mode), accuracy(data)};
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (opt.buckets < 1) throw CommandError("--buckets must be >= 1");
  auto data = select_split(read_log(opt.input), opt.split);
  if (data.empty()) throw CommandError("no examples in split '" + opt.split + "'");
  auto summary = evaluate(data, opt.buckets, opt.mode);

  std::filesystem::path dir(opt.output_dir);
  std::ostringstream csv;
  write_csv(csv, summary.calibration);
  write_file(dir / "report.csv", csv.str());
  for (const auto& r : summary.calibration.datasets) {
    std::ostringstream svg;
    write_reliability_svg(svg, r);
    write_file(dir / ("reliability_" + file_stem(r.dataset) + ".svg"), svg.str());
  }

  // candidate-set losses over the raw log-probs, examples with one gold only
  std::map<std::string, std::pair<double, double>> loss_sum;
  std::map<std::string, std::size_t> loss_n;
  for (const auto& e : data.examples()) {
    std::vector<std::size_t> gold;
    for (std::size_t i = 0; i < e.candidates.size(); ++i)
      if (e.candidates[i].is_gold) gold.push_back(i);
    if (gold.size() != 1) continue;
    auto z = log_probs_of(e);
    loss_sum[e.dataset_id].first += softmax_loss(z, gold[0]).loss;
    loss_sum[e.dataset_id].second += margin_loss(z, gold[0], opt.margin).loss;
    ++loss_n[e.dataset_id];
  }

  std::ostringstream text;
  text << "split=" << opt.split << " mode=" << to_string(opt.mode) << " M=" << opt.buckets << '\n';
  for (const auto& r : summary.calibration.datasets) {
    text << "dataset=" << r.dataset << " items=" << r.n << " acc=" << num(summary.accuracy.per_dataset.at(r.dataset))
         << " ece=" << num(r.ece);
    if (auto n = loss_n[r.dataset]) {
      text << " softmax_nll=" << num(loss_sum[r.dataset].first / static_cast<double>(n))
           << " margin_loss=" << num(loss_sum[r.dataset].second / static_cast<double>(n));
    }
    text << " histogram=";
    for (std::size_t m = 0; m < r.histogram.size(); ++m) text << (m ? ";" : "") << detail::fixed(r.histogram[m], 4);
    text << '\n';
  }
  text << "macro_acc=" << num(summary.accuracy.macro) << " macro_ece=" << num(summary.calibration.macro_ece) << '\n';
  write_file(dir / "summary.txt", text.str());
  out << text.str();
  return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

enum class FitMethod { temp, xgb };

struct FitOptions {
  std::string input;
  std::string output;
  FitMethod method = FitMethod::temp;
  std::uint64_t seed = 0;
  bool oracle = false; // fit on the test split instead of dev
  TemperatureBounds bounds;
  GbdtParams gbdt;
};

inline int cmd_fit(const FitOptions& opt, std::ostream& out) {
  auto log = read_log(opt.input);
  const Split split = opt.oracle ? Split::test : Split::dev;
  auto data = log.filter(split);
  if (data.empty())
    throw CommandError("log has no '" + std::string(to_string(split)) + "' split to fit on" +
                       (opt.oracle ? "" : " (use --oracle to fit on test)"));
  if (opt.oracle) out << "ORACLE: fitting on the evaluation (test) split\n";

  Json report;
  report["split"] = to_string(split);
  report["oracle"] = opt.oracle;
  Json model_json;
  if (opt.method == FitMethod::temp) {
    auto model = fit_temperature(data, opt.bounds);
    model_json = to_json(model);
    if (opt.oracle) model_json["oracle"] = true;
    report["method"] = "temp";
    report["tau"] = model.tau;
    report["nll_before"] = model.nll_at_one;
    report["nll_after"] = model.fit_nll;
    report["n_used"] = model.n_used;
    report["n_skipped"] = model.n_skipped;
    Json trace = Json::array();
    for (const auto& [tau, nll] : model.search_trace) trace.push_back(Json::array({tau, nll}));
    report["search_trace"] = std::move(trace);
    out << (opt.oracle ? "oracle " : "") << "tau=" << num(model.tau) << " nll_before=" << num(model.nll_at_one)
        << " nll_after=" << num(model.fit_nll) << " n_used=" << model.n_used << " n_skipped=" << model.n_skipped << '\n';
  } else {
    auto train = training_set(data);
    std::vector<double> losses;
    auto model = fit(train, opt.gbdt, opt.seed, &losses);
    model_json = to_json(model);
    if (opt.oracle) model_json["oracle"] = true;
    report["method"] = "xgb";
    report["n_rows"] = train.rows.size();
    report["round_losses"] = losses;
    out << (opt.oracle ? "oracle " : "") << "xgb rounds=" << model.rounds.size() << " rows=" << train.rows.size()
        << " loss_before=" << num(losses.front()) << " loss_after=" << num(losses.back()) << '\n';
  }
  write_file(opt.output, model_json.dump(2) + "\n");
  write_file(opt.output + ".report.json", report.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// apply
// ---------------------------------------------------------------------------

/// Recalibrated copy of a log for a serialized temperature or gbdt model.
inline DatasetCollection apply_model(const Json& model, const DatasetCollection& log) {
  if (model.contains("tau")) return apply_temperature(log, temperature_from_json(model));
  if (model.value("type", std::string{}) == "gbdt") return calibrate_collection(gbdt_from_json(model), log);
  throw CommandError("model file is neither a temperature nor a gbdt model");
}

inline int cmd_apply(const std::string& input, const std::string& model_path, const std::string& output,
                     std::ostream& out) {
  auto log = read_log(input);
  auto model = read_json(model_path);
  auto calibrated = apply_model(model, log);
  write_log(output, calibrated);
  out << "applied " << (model.contains("tau") ? "temperature" : "gbdt") << " model to " << calibrated.size()
      << " examples\n";
  return 0;
}

// ---------------------------------------------------------------------------
// spans
// ---------------------------------------------------------------------------

struct SpansOptions {
  std::string input;  // questions JSONL
  std::string scorer; // mock scorer JSON, shared or keyed by question id
  std::string output;
  SpanConfig config;
};

/// Builds the extractive Example for one question record.
inline Example span_example(Json q, const Json& scorer_tables, const SpanConfig& config) {
  Example e;
  e.id = q.at("id").get<std::string>();
  e.dataset_id = q.at("dataset").get<std::string>();
  auto split = q.value("split", std::string("test"));
  auto s = parse_split(split);
  if (!s) throw CommandError("question '" + e.id + "': unknown split '" + split + "'");
  e.split = *s;
  e.format = Format::extractive;
  e.input_text = q.at("input").get<std::string>();
  e.gold_answers = q.value("gold_answers", std::vector<std::string>{});
  if (e.gold_answers.empty()) throw CommandError("question '" + e.id + "': gold_answers must be non-empty");
  if (q.contains("input_token_log_probs")) e.input_token_log_probs = q.at("input_token_log_probs").get<std::vector<double>>();

  Vocabulary vocab;
  auto passage = make_passage(q.at("passage_tokens").get<std::vector<std::string>>(), vocab);
  MockScorer scorer(scorer_tables, vocab);
  std::vector<SpanCandidate> spans;
  try {
    spans = enumerate_spans(e.input_text, passage, scorer, config);
  } catch (const SpanError& err) {
    throw CommandError("question '" + e.id + "': " + err.what());
  }
  for (const auto& span : spans) {
    Candidate c;
    c.text = span.text;
    c.log_prob = span.log_prob;
    c.token_log_probs = span.token_log_probs;
    c.extra["span"] = Json{{"start", span.start}, {"length", span.length}};
    e.candidates.push_back(std::move(c));
  }
  for (const char* key : {"id", "dataset", "split", "input", "gold_answers", "input_token_log_probs", "passage_tokens"})
    q.erase(key);
  e.extra = std::move(q);
  auto gold = e.gold_answers;
  e = mark_gold_extractive(std::move(e), gold);
  validate(e);
  return e;
}

inline int cmd_spans(const SpansOptions& opt, std::ostream& out) {
  opt.config.check();
  auto tables = read_json(opt.scorer);
  const bool shared = tables.contains("first_token");
  std::vector<Example> examples;
  for_each_jsonl(opt.input, [&](Json q) {
    const Json* t = &tables;
    if (!shared) {
      auto id = q.at("id").get<std::string>();
      if (!tables.contains(id)) throw CommandError("scorer file has no tables for question '" + id + "'");
      t = &tables.at(id);
    }
    examples.push_back(span_example(std::move(q), *t, opt.config));
  });
  DatasetCollection log(std::move(examples));
  write_log(opt.output, log);
  out << "wrote " << log.size() << " extractive examples (R=" << opt.config.top_first_tokens
      << " K=" << opt.config.top_spans << " max_len=" << opt.config.max_len << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// paraphrase
// ---------------------------------------------------------------------------

inline int cmd_paraphrase_aggregate(const std::string& input, const std::string& output, bool include_canonical,
                                    std::ostream& out) {
  auto log = read_log(input);
  auto collapsed = collapse_paraphrases(log, include_canonical);
  write_log(output, collapsed);
  out << "aggregated paraphrase groups for " << collapsed.size() << " examples\n";
  return 0;
}

/// Beam file lines: {"id": str, "beams": [str]}; output lines add the
/// selected "paraphrases" and drop the beams.
inline int cmd_paraphrase_select(const std::string& input, const std::string& output, std::size_t k,
                                 std::ostream& out) {
  if (k < 1) throw CommandError("--k must be >= 1");
  std::ostringstream lines;
  std::size_t n = 0;
  for_each_jsonl(input, [&](Json j) {
    auto beams = j.at("beams").get<std::vector<std::string>>();
    j.erase("beams");
    j["paraphrases"] = select_paraphrases(beams, k);
    lines << j.dump() << '\n';
    ++n;
  });
  write_file(output, lines.str());
  out << "selected up to " << k << " paraphrases for " << n << " answers\n";
  return 0;
}

inline int cmd_paraphrase_sensitivity(const std::string& before, const std::string& after, const std::string& output,
                                      double threshold, std::ostream& out) {
  auto rep = paraphrase_sensitivity(read_log(before), read_log(after), threshold);
  Json j;
  j["threshold"] = rep.threshold;
  j["threshold_kind"] = "absolute confidence change";
  j["n_better_calibrated"] = rep.n_better;
  j["n_unchanged"] = rep.n_unchanged;
  j["mean_question_length_better"] = rep.mean_question_length_better;
  j["mean_question_length_unchanged"] = rep.mean_question_length_unchanged;
  j["mean_diversity_better"] = rep.mean_diversity_better;
  j["mean_diversity_unchanged"] = rep.mean_diversity_unchanged;
  Json rows = Json::array();
  for (const auto& c : rep.candidates) {
    rows.push_back({{"id", c.example_id},
                    {"candidate", c.index},
                    {"is_gold", c.is_gold},
                    {"before", c.before},
                    {"after", c.after},
                    {"label", c.label == SensitivityLabel::better_calibrated ? "better_calibrated" : "unchanged"},
                    {"question_length", c.question_length},
                    {"diversity", c.diversity}});
  }
  j["candidates"] = std::move(rows);
  write_file(output, j.dump(2) + "\n");
  out << "threshold=" << num(rep.threshold) << " (absolute) better_calibrated=" << rep.n_better
      << " unchanged=" << rep.n_unchanged << " qlen_better=" << num(rep.mean_question_length_better)
      << " qlen_unchanged=" << num(rep.mean_question_length_unchanged)
      << " diversity_better=" << num(rep.mean_diversity_better)
      << " diversity_unchanged=" << num(rep.mean_diversity_unchanged) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentOptions {
  std::string input;
  std::string corpus;
  std::string output;
  std::size_t n_sentences = 3;
};

inline int cmd_augment(const AugmentOptions& opt, std::ostream& out) {
  auto log = read_log(opt.input);
  auto in = open_input(opt.corpus);
  TfidfIndex index(parse_corpus(in));
  std::map<std::string, const Document*> by_id;
  for (const auto& d : index.documents()) by_id[d.doc_id] = &d;
  std::vector<Example> examples;
  for (const auto& e : log.examples()) {
    auto doc_id = tfidf_retrieve(index, e.input_text, 1).at(0);
    auto augmented = augment_input(e, by_id.at(doc_id)->text, opt.n_sentences);
    augmented.extra["augmented_from"] = doc_id;
    examples.push_back(std::move(augmented));
  }
  DatasetCollection result(std::move(examples));
  write_log(opt.output, result);
  out << "augmented " << result.size() << " examples from a corpus of " << index.documents().size()
      << " documents; re-score the output with the model runner\n";
  return 0;
}

} // namespace qacal::cli

#endif
