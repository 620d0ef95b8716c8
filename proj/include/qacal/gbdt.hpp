#ifndef QACAL_GBDT_HPP
#define QACAL_GBDT_HPP

// Feature-based confidence calibration: candidate feature extraction and a
// second-order gradient-boosted tree regressor with logistic loss.
//
// Each boosting round grows `parallel_trees` trees on independent row
// subsamples against the same gradients, and adds learning_rate times their
// mean output to the margin. Missing values (NaN) follow a per-node default
// direction chosen to maximize gain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "records.hpp"
#include "scoring.hpp"

namespace qacal {

class GbdtError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

struct FeatureVector {
  double raw_confidence = 0.0;
  double candidate_entropy = 0.0; // nats
  std::optional<double> input_perplexity;
  std::size_t input_length = 0;
  std::size_t output_length = 0;

  NamedFeatures named() const {
    return {{"raw_confidence", raw_confidence},
            {"candidate_entropy", candidate_entropy},
            {"input_perplexity", input_perplexity},
            {"input_length", static_cast<double>(input_length)},
            {"output_length", static_cast<double>(output_length)}};
  }
};

inline const std::vector<std::string>& standard_feature_names() {
  static const std::vector<std::string> names{"raw_confidence", "candidate_entropy", "input_perplexity", "input_length",
                                              "output_length"};
  return names;
}

/// Shannon entropy in nats, 0 ln 0 = 0.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline std::optional<double> input_perplexity(const Example& example) {
  if (!example.input_token_log_probs || example.input_token_log_probs->empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : *example.input_token_log_probs) sum += v;
  return std::exp(-sum / static_cast<double>(example.input_token_log_probs->size()));
}

inline std::vector<FeatureVector> extract_features(const Example& example) {
  auto scores = normalize(example);
  const double h = entropy(scores.probs);
  const auto ppl = input_perplexity(example);
  const std::size_t in_len = word_count(example.input_text);
  std::vector<FeatureVector> out;
  out.reserve(example.candidates.size());
  for (std::size_t i = 0; i < example.candidates.size(); ++i)
    out.push_back({scores.probs[i], h, ppl, in_len, word_count(example.candidates[i].text)});
  return out;
}

/// Standard features merged with any features carried on the candidate
/// (candidate-supplied values win on name clashes).
inline std::vector<NamedFeatures> candidate_features(const Example& example) {
  auto base = extract_features(example);
  std::vector<NamedFeatures> out;
  out.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto named = base[i].named();
    if (const auto& extra = example.candidates[i].features)
      for (const auto& [k, v] : *extra) named[k] = v;
    out.push_back(std::move(named));
  }
  return out;
}

// ---------------------------------------------------------------------------
// trees
// ---------------------------------------------------------------------------

struct GbdtParams {
  int max_depth = 4;
  int parallel_trees = 5;
  double subsample = 0.8;
  double learning_rate = 0.1;
  int num_rounds = 100;
  double l2_leaf_reg = 1.0;
  double min_split_gain = 0.0;
  double base_score = 0.0; // log-odds

  void check() const {
    if (max_depth < 0) throw GbdtError("max_depth must be >= 0");
    if (parallel_trees < 1) throw GbdtError("parallel_trees must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw GbdtError("subsample must lie in (0, 1]");
    if (!(learning_rate > 0.0)) throw GbdtError("learning_rate must be positive");
    if (num_rounds < 0) throw GbdtError("num_rounds must be >= 0");
    if (!(l2_leaf_reg >= 0.0)) throw GbdtError("l2_leaf_reg must be >= 0");
    if (!(min_split_gain >= 0.0)) throw GbdtError("min_split_gain must be >= 0");
    if (!std::isfinite(base_score)) throw GbdtError("base_score must be finite");
  }
};

struct TreeNode {
  int feature = -1; // -1 marks a leaf
  double threshold = 0.0; // value < threshold goes left
  bool default_left = true;
  int left = -1;
  int right = -1;
  double weight = 0.0;

  bool is_leaf() const { return feature < 0; }
};

class RegressionTree {
public:
  RegressionTree() : nodes_{TreeNode{}} {}
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }

  /// Leaf reached by a row; NaN entries are missing.
  int leaf_index(std::span<const double> row) const {
    int i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      const double v = row[static_cast<std::size_t>(n.feature)];
      const bool go_left = std::isnan(v) ? n.default_left : v < n.threshold;
      i = go_left ? n.left : n.right;
    }
    return i;
  }

  double predict(std::span<const double> row) const { return nodes_[leaf_index(row)].weight; }

  int depth() const { return depth_from(0); }

private:
  int depth_from(int i) const {
    const auto& n = nodes_[i];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

struct GbdtModel {
  GbdtParams params;
  std::uint64_t seed = 0;
  std::vector<std::string> feature_names;
  std::vector<std::vector<RegressionTree>> rounds;

  double margin(std::span<const double> row) const {
    double m = params.base_score;
    for (const auto& group : rounds) {
      double sum = 0.0;
      for (const auto& tree : group) sum += tree.predict(row);
      m += params.learning_rate * (sum / static_cast<double>(group.size()));
    }
    return m;
  }

  double predict_row(std::span<const double> row) const { return 1.0 / (1.0 + std::exp(-margin(row))); }

  /// Dense row in feature_names order; a name absent from the map is an error,
  /// a present nullopt is a missing value.
  std::vector<double> row_of(const NamedFeatures& features) const {
    std::vector<double> row;
    row.reserve(feature_names.size());
    for (const auto& name : feature_names) {
      auto it = features.find(name);
      if (it == features.end()) throw GbdtError("gbdt: unknown feature '" + name + "' for this input");
      row.push_back(it->second ? *it->second : std::numeric_limits<double>::quiet_NaN());
    }
    return row;
  }

  double predict(const NamedFeatures& features) const { return predict_row(row_of(features)); }
};

struct TrainingSet {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> rows; // NaN = missing
  std::vector<int> labels;               // 0 or 1
};

inline double logistic_loss(double margin, int label) {
  // log(1 + exp(-s m)) with s = +-1, evaluated without overflow
  const double z = label ? margin : -margin;
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

namespace detail {

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
};

class TreeBuilder {
public:
  TreeBuilder(const TrainingSet& data, const std::vector<double>& grad, const std::vector<double>& hess,
              const GbdtParams& params)
      : data_(data), grad_(grad), hess_(hess), params_(params) {}

  RegressionTree build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(std::move(rows), 0);
    return RegressionTree(std::move(nodes_));
  }

private:
  double score(double g, double h) const { return g * g / (h + params_.l2_leaf_reg); }

  int grow(std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double g = 0.0, h = 0.0;
    for (auto r : rows) {
      g += grad_[r];
      h += hess_[r];
    }
    SplitChoice best;
    if (depth < params_.max_depth && rows.size() >= 2) best = find_split(rows, g, h);
    if (best.feature < 0) {
      nodes_[id].weight = -g / (h + params_.l2_leaf_reg);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (auto r : rows) {
      const double v = data_.rows[r][static_cast<std::size_t>(best.feature)];
      const bool go_left = std::isnan(v) ? best.default_left : v < best.threshold;
      (go_left ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& n = nodes_[id];
    n.feature = best.feature;
    n.threshold = best.threshold;
    n.default_left = best.default_left;
    n.left = l;
    n.right = r;
    return id;
  }

  // Exact greedy search. Candidates are visited by ascending feature index,
  // then ascending threshold, missing-left before missing-right; only a
  // strictly larger gain replaces the incumbent.
  SplitChoice find_split(const std::vector<std::size_t>& rows, double g, double h) const {
    SplitChoice best;
    best.gain = params_.min_split_gain;
    const double parent = score(g, h);
    std::vector<std::pair<double, std::size_t>> present;
    for (std::size_t f = 0; f < data_.feature_names.size(); ++f) {
      present.clear();
      double gm = 0.0, hm = 0.0;
      std::size_t n_missing = 0;
      for (auto r : rows) {
        const double v = data_.rows[r][f];
        if (std::isnan(v)) {
          gm += grad_[r];
          hm += hess_[r];
          ++n_missing;
        } else {
          present.emplace_back(v, r);
        }
      }
      if (present.size() < 2) continue;
      std::sort(present.begin(), present.end());
      double gl = 0.0, hl = 0.0;
      for (std::size_t i = 0; i + 1 < present.size(); ++i) {
        gl += grad_[present[i].second];
        hl += hess_[present[i].second];
        const double a = present[i].first, b = present[i + 1].first;
        if (!(a < b)) continue;
        const std::size_t n_left = i + 1, n_right = present.size() - n_left;
        double threshold = a + (b - a) / 2.0;
        if (!(threshold > a)) threshold = b;
        for (bool missing_left : {true, false}) {
          const double GL = gl + (missing_left ? gm : 0.0), HL = hl + (missing_left ? hm : 0.0);
          const double GR = g - GL, HR = h - HL;
          const std::size_t cl = n_left + (missing_left ? n_missing : 0);
          const std::size_t cr = n_right + (missing_left ? 0 : n_missing);
          if (cl == 0 || cr == 0) continue;
          const double gain = 0.5 * (score(GL, HL) + score(GR, HR) - parent);
          if (gain > best.gain) {
            best = {gain, static_cast<int>(f), threshold, missing_left};
          }
        }
      }
    }
    return best;
  }

  const TrainingSet& data_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const GbdtParams& params_;
  std::vector<TreeNode> nodes_;
};

inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace detail

/// Mean logistic loss of the model on a training set.
inline double training_loss(const GbdtModel& model, const TrainingSet& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows.size(); ++i) total += logistic_loss(model.margin(data.rows[i]), data.labels[i]);
  return total / static_cast<double>(data.rows.size());
}

/// Boosted fit. When loss_trace is given it receives the mean training loss
/// before the first round followed by the loss after each round.
inline GbdtModel fit(const TrainingSet& data, const GbdtParams& params, std::uint64_t seed,
                     std::vector<double>* loss_trace = nullptr) {
  params.check();
  const std::size_t n = data.rows.size();
  if (data.labels.size() != n) throw GbdtError("gbdt fit: rows and labels differ in length");
  if (n < 2) throw GbdtError("gbdt fit: need at least 2 rows");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] != 0 && data.labels[i] != 1) throw GbdtError("gbdt fit: labels must be 0 or 1");
    if (data.rows[i].size() != data.feature_names.size()) throw GbdtError("gbdt fit: row width does not match feature names");
    positives += static_cast<std::size_t>(data.labels[i]);
  }
  if (positives == 0 || positives == n) throw GbdtError("gbdt fit: both labels must be present");

  GbdtModel model;
  model.params = params;
  model.seed = seed;
  model.feature_names = data.feature_names;

  std::mt19937_64 rng(seed);
  std::vector<double> margin(n, params.base_score), grad(n), hess(n);
  auto record_loss = [&] {
    if (!loss_trace) return;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += logistic_loss(margin[i], data.labels[i]);
    loss_trace->push_back(total / static_cast<double>(n));
  };
  record_loss();

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;

  for (int round = 0; round < params.num_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-margin[i]));
      grad[i] = p - data.labels[i];
      hess[i] = p * (1.0 - p);
    }
    detail::TreeBuilder builder(data, grad, hess, params);
    std::vector<RegressionTree> group;
    for (int t = 0; t < params.parallel_trees; ++t) {
      std::vector<std::size_t> rows;
      if (params.subsample >= 1.0) {
        rows = all;
      } else {
        for (std::size_t i = 0; i < n; ++i)
          if (detail::unit_uniform(rng) < params.subsample) rows.push_back(i);
        if (rows.empty()) rows.push_back(static_cast<std::size_t>(rng() % n));
      }
      group.push_back(builder.build(std::move(rows)));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (const auto& tree : group) sum += tree.predict(data.rows[i]);
      margin[i] += params.learning_rate * (sum / static_cast<double>(group.size()));
    }
    model.rounds.push_back(std::move(group));
    record_loss();
  }
  return model;
}

// ---------------------------------------------------------------------------
// collection plumbing
// ---------------------------------------------------------------------------

/// Feature names for a collection: the standard five, then any
/// candidate-supplied names in lexicographic order.
inline std::vector<std::string> feature_names_for(const DatasetCollection& collection) {
  std::vector<std::string> names = standard_feature_names();
  std::set<std::string> extra;
  for (const auto& e : collection.examples())
    for (const auto& c : e.candidates)
      if (c.features)
        for (const auto& [k, _] : *c.features)
          if (std::find(names.begin(), names.end(), k) == names.end()) extra.insert(k);
  names.insert(names.end(), extra.begin(), extra.end());
  return names;
}

/// One row per candidate, label 1 iff gold. Names a candidate lacks are
/// missing values.
inline TrainingSet training_set(const DatasetCollection& collection) {
  TrainingSet data;
  data.feature_names = feature_names_for(collection);
  for (const auto& e : collection.examples()) {
    auto features = candidate_features(e);
    for (std::size_t i = 0; i < e.candidates.size(); ++i) {
      std::vector<double> row;
      for (const auto& name : data.feature_names) {
        auto it = features[i].find(name);
        row.push_back(it != features[i].end() && it->second ? *it->second : std::numeric_limits<double>::quiet_NaN());
      }
      data.rows.push_back(std::move(row));
      data.labels.push_back(e.candidates[i].is_gold ? 1 : 0);
    }
  }
  return data;
}

/// Attaches the model's confidence to every candidate. Confidences are not
/// renormalized over the candidate set.
inline DatasetCollection calibrate_collection(const GbdtModel& model, const DatasetCollection& collection) {
  std::vector<Example> out;
  out.reserve(collection.size());
  for (const auto& e : collection.examples()) {
    Example copy = e;
    auto features = candidate_features(e);
    for (std::size_t i = 0; i < copy.candidates.size(); ++i) copy.candidates[i].confidence = model.predict(features[i]);
    out.push_back(std::move(copy));
  }
  return DatasetCollection(std::move(out));
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline Json to_json(const GbdtParams& p) {
  Json j;
  j["max_depth"] = p.max_depth;
  j["parallel_trees"] = p.parallel_trees;
  j["subsample"] = p.subsample;
  j["learning_rate"] = p.learning_rate;
  j["num_rounds"] = p.num_rounds;
  j["l2_leaf_reg"] = p.l2_leaf_reg;
  j["min_split_gain"] = p.min_split_gain;
  j["base_score"] = p.base_score;
  return j;
}

inline Json to_json(const RegressionTree& tree) {
  Json nodes = Json::array();
  for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
    const auto& n = tree.nodes()[i];
    Json j;
    j["id"] = i;
    if (n.is_leaf()) {
      j["leaf"] = n.weight;
    } else {
      j["feature"] = n.feature;
      j["threshold"] = n.threshold;
      j["default_left"] = n.default_left;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    nodes.push_back(std::move(j));
  }
  return Json{{"nodes", std::move(nodes)}};
}

inline Json to_json(const GbdtModel& m) {
  Json j;
  j["type"] = "gbdt";
  j["objective"] = "binary:logistic";
  j["params"] = to_json(m.params);
  j["seed"] = m.seed;
  j["feature_names"] = m.feature_names;
  Json rounds = Json::array();
  for (const auto& group : m.rounds) {
    Json g = Json::array();
    for (const auto& tree : group) g.push_back(to_json(tree));
    rounds.push_back(std::move(g));
  }
  j["rounds"] = std::move(rounds);
  return j;
}

inline GbdtModel gbdt_from_json(const Json& j) {
  GbdtModel m;
  try {
    const auto& p = j.at("params");
    m.params.max_depth = p.at("max_depth").get<int>();
    m.params.parallel_trees = p.at("parallel_trees").get<int>();
    m.params.subsample = p.at("subsample").get<double>();
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.num_rounds = p.at("num_rounds").get<int>();
    m.params.l2_leaf_reg = p.at("l2_leaf_reg").get<double>();
    m.params.min_split_gain = p.value("min_split_gain", 0.0);
    m.params.base_score = p.value("base_score", 0.0);
    m.params.check();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    const int width = static_cast<int>(m.feature_names.size());
    for (const auto& g : j.at("rounds")) {
      std::vector<RegressionTree> group;
      for (const auto& t : g) {
        const auto& jn = t.at("nodes");
        std::vector<TreeNode> nodes(jn.size());
        for (std::size_t i = 0; i < jn.size(); ++i) {
          const auto& n = jn[i];
          if (n.contains("leaf")) {
            nodes[i].weight = n.at("leaf").get<double>();
            if (!std::isfinite(nodes[i].weight)) throw GbdtError("gbdt model: non-finite leaf weight");
            continue;
          }
          auto& node = nodes[i];
          node.feature = n.at("feature").get<int>();
          node.threshold = n.at("threshold").get<double>();
          node.default_left = n.at("default_left").get<bool>();
          node.left = n.at("left").get<int>();
          node.right = n.at("right").get<int>();
          const int size = static_cast<int>(jn.size());
          if (node.feature >= width || !std::isfinite(node.threshold) || node.left <= static_cast<int>(i) ||
              node.right <= static_cast<int>(i) || node.left >= size || node.right >= size)
            throw GbdtError("gbdt model: malformed internal node " + std::to_string(i));
        }
        if (nodes.empty()) throw GbdtError("gbdt model: empty tree");
        group.emplace_back(std::move(nodes));
      }
      if (group.empty()) throw GbdtError("gbdt model: empty round");
      m.rounds.push_back(std::move(group));
    }
  } catch (const nlohmann::json::exception& err) {
    throw GbdtError(std::string("gbdt model: ") + err.what());
  }
  return m;
}

} // namespace qacal

#endif
