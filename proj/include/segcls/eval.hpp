#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segcls/error.hpp"

// Segment-to-sample aggregation, ROC AUC, prevalence-weighted AUC, accuracy.
namespace segcls::eval {

/// One row of per-class scores.
using ScoreRow = std::vector<double>;

struct ScoreTable {
  std::vector<std::string> sample_ids;
  std::vector<ScoreRow> scores;  // n_samples x n_classes
  std::vector<std::vector<int>> labels;  // multi-hot, same shape

  std::size_t samples() const { return scores.size(); }
  std::size_t classes() const { return scores.empty() ? 0 : scores.front().size(); }

  void validate() const {
    if (labels.size() != scores.size()) throw UsageError("score table: label and score row counts differ");
    if (!sample_ids.empty() && sample_ids.size() != scores.size())
      throw UsageError("score table: sample id count differs from row count");
    const std::size_t k = classes();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != k || labels[i].size() != k) throw UsageError("score table: ragged rows");
      for (double s : scores[i]) {
        if (!std::isfinite(s)) throw UsageError("score table: non-finite score");
      }
      for (int y : labels[i]) {
        if (y != 0 && y != 1) throw UsageError("score table: labels must be 0 or 1");
      }
    }
  }
};

/// Per-class mean over a sample's segment scores. Sums run in segment order.
inline ScoreRow aggregate_sample_scores(const std::vector<ScoreRow>& segment_scores) {
  if (segment_scores.empty()) throw DataError("sample has no scored segments");
  const std::size_t k = segment_scores.front().size();
  ScoreRow out(k, 0.0);
  for (const auto& row : segment_scores) {
    if (row.size() != k) throw UsageError("segment score rows differ in width");
    for (std::size_t c = 0; c < k; ++c) out[c] += row[c];
  }
  const auto n = static_cast<double>(segment_scores.size());
  for (double& v : out) v /= n;
  return out;
}

/// Mann-Whitney AUC, kept as the exact rational
/// (2 * wins + ties) / (2 * positives * negatives).
struct BinaryAuc {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t twice_u = 0;

  bool defined() const { return positives > 0 && negatives > 0; }
  std::optional<double> value() const {
    if (!defined()) return std::nullopt;
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
  }
};

/// O(n log n): sort, assign mid-ranks (doubled to stay integral) to tie
/// groups, and read U off the positive rank sum.
inline BinaryAuc auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw UsageError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  BinaryAuc r;
  std::uint64_t twice_rank_sum = 0;  // sum over positives of 2 * rank (1-based, ties averaged)
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j share the mid-rank (i + 1 + j) / 2
    const std::uint64_t twice_mid = i + 1 + j;
    for (std::size_t k = i; k < j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw UsageError("auc: labels must be 0 or 1");
      if (y == 1) {
        ++r.positives;
        twice_rank_sum += twice_mid;
      } else {
        ++r.negatives;
      }
    }
    i = j;
  }
  if (r.defined()) r.twice_u = twice_rank_sum - r.positives * (r.positives + 1);
  return r;
}

struct ClassAuc {
  std::size_t cls = 0;
  std::optional<double> auc;
  std::uint64_t positives = 0;
};

struct AucReport {
  std::vector<ClassAuc> per_class;
  std::vector<std::size_t> undefined_classes;
  double overall = 0.0;
};

/// Prevalence-weighted mean of the defined per-class AUCs, prevalence being
/// the positive count among the evaluated samples.
inline AucReport weighted_auc(const ScoreTable& table) {
  table.validate();
  AucReport report;
  double num = 0.0, den = 0.0;
  std::vector<double> col(table.samples());
  std::vector<int> lab(table.samples());
  for (std::size_t c = 0; c < table.classes(); ++c) {
    for (std::size_t i = 0; i < table.samples(); ++i) {
      col[i] = table.scores[i][c];
      lab[i] = table.labels[i][c];
    }
    const auto b = auc_binary(col, lab);
    ClassAuc ca{c, b.value(), b.positives};
    if (ca.auc) {
      num += static_cast<double>(b.positives) * *ca.auc;
      den += static_cast<double>(b.positives);
    } else {
      report.undefined_classes.push_back(c);
    }
    report.per_class.push_back(ca);
  }
  if (den == 0.0) throw DataError("no class has both positive and negative samples; AUC undefined");
  report.overall = num / den;
  return report;
}

/// Index of the highest score; ties resolve to the lowest class index.
inline std::size_t argmax(const ScoreRow& row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

inline double accuracy(const ScoreTable& table) {
  table.validate();
  if (table.samples() == 0) throw DataError("accuracy of an empty table");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < table.samples(); ++i) {
    const auto& y = table.labels[i];
    if (std::count(y.begin(), y.end(), 1) != 1) {
      throw UsageError("accuracy needs one-hot labels (sample " + std::to_string(i) + ")");
    }
    const auto truth = static_cast<std::size_t>(std::find(y.begin(), y.end(), 1) - y.begin());
    if (argmax(table.scores[i]) == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(table.samples());
}

inline nlohmann::json to_json(const AucReport& r) {
  nlohmann::json j;
  j["overall"] = r.overall;
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    nlohmann::json e{{"class", c.cls}, {"positives", c.positives}};
    e["auc"] = c.auc ? nlohmann::json(*c.auc) : nlohmann::json(nullptr);
    j["per_class"].push_back(e);
  }
  j["undefined_classes"] = r.undefined_classes;
  return j;
}

inline std::string to_text(const AucReport& r, const std::vector<std::string>& class_names = {}) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%6s  %-28s %10s %8s\n", "class", "name", "positives", "auc");
  os << line;
  for (const auto& c : r.per_class) {
    const std::string name = c.cls < class_names.size() ? class_names[c.cls] : "";
    if (c.auc) {
      std::snprintf(line, sizeof line, "%6zu  %-28.28s %10llu %8.4f\n", c.cls, name.c_str(),
                    static_cast<unsigned long long>(c.positives), *c.auc);
    } else {
      std::snprintf(line, sizeof line, "%6zu  %-28.28s %10llu %8s\n", c.cls, name.c_str(),
                    static_cast<unsigned long long>(c.positives), "n/a");
    }
    os << line;
  }
  std::snprintf(line, sizeof line, "overall weighted AUC %.4f (%zu undefined classes)\n", r.overall,
                r.undefined_classes.size());
  os << line;
  return os.str();
}

}  // namespace segcls::eval
