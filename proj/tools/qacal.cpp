// qacal: calibration toolkit for candidate-scored QA prediction logs.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "qacal/commands.hpp"

int main(int argc, char** argv) {
  using namespace qacal;
  using namespace qacal::cli;

  CLI::App app{"qacal: calibration toolkit for candidate-scored QA prediction logs"};
  app.require_subcommand(1);

  std::string input, output;

  auto* validate = app.add_subcommand("validate", "parse and invariant-check a prediction log");
  validate->add_option("--input", input, "prediction log (JSONL)")->required();

  EvalOptions eval_opt;
  std::string mode = "all-candidates";
  const std::map<std::string, EceMode> modes{{"all-candidates", EceMode::all_candidates},
                                             {"predictions", EceMode::predictions_only}};
  auto* eval = app.add_subcommand("eval", "accuracy, ECE, CSV report and reliability diagrams");
  eval->add_option("--input", eval_opt.input, "prediction log (JSONL)")->required();
  eval->add_option("--output", eval_opt.output_dir, "report directory")->required();
  eval->add_option("--buckets", eval_opt.buckets, "number of confidence buckets M")->capture_default_str();
  eval->add_option("--mode", mode, "all-candidates | predictions")
      ->check(CLI::IsMember({"all-candidates", "predictions"}))
      ->capture_default_str();
  eval->add_option("--split", eval_opt.split, "train | dev | test | all")
      ->check(CLI::IsMember({"train", "dev", "test", "all"}))
      ->capture_default_str();
  eval->add_option("--margin", eval_opt.margin, "hinge margin for the reported margin loss")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  FitOptions fit_opt;
  std::string method;
  auto* fit = app.add_subcommand("fit", "fit a calibrator on the dev split");
  fit->add_option("--input", fit_opt.input, "prediction log (JSONL)")->required();
  fit->add_option("--output", fit_opt.output, "model file (JSON)")->required();
  fit->add_option("--method", method, "temp | xgb")->required()->check(CLI::IsMember({"temp", "xgb"}));
  fit->add_option("--seed", fit_opt.seed, "subsampling seed")->capture_default_str();
  fit->add_flag("--oracle", fit_opt.oracle, "fit on the test split (oracle analysis)");
  fit->add_option("--min-tau", fit_opt.bounds.min_tau, "lower temperature bound")->capture_default_str();
  fit->add_option("--max-tau", fit_opt.bounds.max_tau, "upper temperature bound")->capture_default_str();
  fit->add_option("--rounds", fit_opt.gbdt.num_rounds, "boosting rounds")->capture_default_str();
  fit->add_option("--max-depth", fit_opt.gbdt.max_depth, "maximum tree depth")->capture_default_str();
  fit->add_option("--parallel-trees", fit_opt.gbdt.parallel_trees, "trees per round")->capture_default_str();
  fit->add_option("--subsample", fit_opt.gbdt.subsample, "row subsample ratio")->capture_default_str();
  fit->add_option("--learning-rate", fit_opt.gbdt.learning_rate, "shrinkage")->capture_default_str();
  fit->add_option("--l2", fit_opt.gbdt.l2_leaf_reg, "L2 leaf regularization")->capture_default_str();

  std::string model;
  auto* apply = app.add_subcommand("apply", "write calibrated confidences into a log");
  apply->add_option("--input", input, "prediction log (JSONL)")->required();
  apply->add_option("--model", model, "model file from `fit`")->required();
  apply->add_option("--output", output, "calibrated log (JSONL)")->required();

  SpansOptions spans_opt;
  auto* spans = app.add_subcommand("spans", "enumerate extractive span candidates against a mock scorer");
  spans->add_option("--input", spans_opt.input, "questions (JSONL)")->required();
  spans->add_option("--scorer", spans_opt.scorer, "mock scorer tables (JSON)")->required();
  spans->add_option("--output", spans_opt.output, "candidate log (JSONL)")->required();
  spans->add_option("--R", spans_opt.config.top_first_tokens, "first tokens kept")->capture_default_str();
  spans->add_option("--K", spans_opt.config.top_spans, "spans kept")->capture_default_str();
  spans->add_option("--max-len", spans_opt.config.max_len, "maximum span length")->capture_default_str();

  auto* para = app.add_subcommand("paraphrase", "paraphrase selection, aggregation and sensitivity");
  para->require_subcommand(1);
  bool no_canonical = false;
  auto* aggregate = para->add_subcommand("aggregate", "sum member probabilities per paraphrase group");
  aggregate->add_option("--input", input, "log with paraphrase_group fields")->required();
  aggregate->add_option("--output", output, "aggregated log")->required();
  aggregate->add_flag("--no-canonical", no_canonical, "exclude the original answer text from its group");
  std::size_t k = 5;
  auto* select = para->add_subcommand("select", "keep the most frequent unique beam outputs");
  select->add_option("--input", input, "beam outputs (JSONL: id, beams)")->required();
  select->add_option("--output", output, "selected paraphrases (JSONL)")->required();
  select->add_option("--k", k, "paraphrases kept")->capture_default_str();
  std::string before, after;
  double threshold = 0.20;
  auto* sensitivity = para->add_subcommand("sensitivity", "label candidates whose confidence moved toward the truth");
  sensitivity->add_option("--before", before, "log without paraphrases")->required();
  sensitivity->add_option("--after", after, "log with paraphrase groups")->required();
  sensitivity->add_option("--output", output, "report (JSON)")->required();
  sensitivity->add_option("--threshold", threshold, "absolute confidence change")->capture_default_str();

  AugmentOptions aug_opt;
  auto* augment = app.add_subcommand("augment", "append retrieved article sentences to each question");
  augment->add_option("--input", aug_opt.input, "prediction log or question log (JSONL)")->required();
  augment->add_option("--corpus", aug_opt.corpus, "corpus (JSONL: doc_id, title, text)")->required();
  augment->add_option("--output", aug_opt.output, "augmented log (JSONL)")->required();
  augment->add_option("--n-sentences", aug_opt.n_sentences, "sentences appended")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(input, std::cout);
    if (*eval) {
      eval_opt.mode = modes.at(mode);
      return cmd_eval(eval_opt, std::cout);
    }
    if (*fit) {
      fit_opt.method = method == "temp" ? FitMethod::temp : FitMethod::xgb;
      return cmd_fit(fit_opt, std::cout);
    }
    if (*apply) return cmd_apply(input, model, output, std::cout);
    if (*spans) return cmd_spans(spans_opt, std::cout);
    if (*aggregate) return cmd_paraphrase_aggregate(input, output, !no_canonical, std::cout);
    if (*select) return cmd_paraphrase_select(input, output, k, std::cout);
    if (*sensitivity) return cmd_paraphrase_sensitivity(before, after, output, threshold, std::cout);
    if (*augment) return cmd_augment(aug_opt, std::cout);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
