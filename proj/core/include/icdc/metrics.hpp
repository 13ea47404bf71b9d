#pragma once

// Multi-label evaluation: micro/macro F1 and AUC, precision/recall at K, and
// dev-set threshold selection. Pure functions over immutable matrices; all
// reported values live in [0, 1].

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace icdc {

struct LabelMatrix {
  std::size_t n_instances = 0;
  std::size_t n_labels = 0;
  std::vector<std::int8_t> y_true;  // row-major, values 0/1
  std::vector<double> y_score;      // same shape, finite

  static LabelMatrix zeros(std::size_t n, std::size_t m);
  void validate() const;

  std::int8_t truth(std::size_t i, std::size_t j) const { return y_true[i * n_labels + j]; }
  double score(std::size_t i, std::size_t j) const { return y_score[i * n_labels + j]; }
};

// Micro F1 pools TP/FP/FN over all cells; macro averages per-label F1 with
// the convention that a label with no true and no predicted positives
// contributes 0.
struct F1Result {
  double micro = 0.0;
  double macro = 0.0;
};
F1Result f1_scores(const LabelMatrix& m, const std::vector<std::int8_t>& y_pred);

// Mann-Whitney AUC with ties counted one half. Labels lacking a positive or
// a negative are excluded from the macro average and reported; a micro pool
// with a single class is an error.
struct AucResult {
  double micro = 0.0;
  double macro = 0.0;
  std::vector<std::size_t> excluded_labels;
};
AucResult auc_scores(const LabelMatrix& m);

// Rank AUC of one score/label vector (exposed for reuse); nullopt when the
// vector lacks both classes.
std::optional<double> rank_auc(const std::vector<double>& scores, const std::vector<std::int8_t>& truth);

// Top-k per instance with ties broken by ascending label index. P@k averages
// over all instances; R@k skips instances without any true label.
struct AtKResult {
  double precision = 0.0;
  double recall = 0.0;
};
AtKResult precision_recall_at_k(const LabelMatrix& m, std::size_t k);

enum class ThresholdMode { kGlobal, kPerLabel };

struct ThresholdResult {
  ThresholdMode mode = ThresholdMode::kGlobal;
  double global = 0.5;
  std::vector<double> per_label;  // used in per-label mode
  bool degenerate_fallback = false;

  double for_label(std::size_t j) const {
    return mode == ThresholdMode::kGlobal ? global : per_label[j];
  }
};

// Scans candidate thresholds at midpoints of adjacent distinct scores,
// maximizing micro-F1 (global) or per-label F1; ties prefer the smaller
// threshold. All-identical scores fall back to 0.5 with a warning flag.
ThresholdResult select_threshold(const LabelMatrix& dev, ThresholdMode mode);

std::vector<std::int8_t> apply_threshold(const LabelMatrix& m, const ThresholdResult& t);

struct PerLabelStats {
  std::size_t label = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
  std::optional<double> auc;
};

struct MetricsReport {
  double macro_auc = 0.0;
  double micro_auc = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::map<std::size_t, double> precision_at;  // K -> value
  std::map<std::size_t, double> recall_at;
  ThresholdResult thresholds;
  std::vector<std::size_t> auc_excluded_labels;
  std::vector<PerLabelStats> per_label;
  std::vector<std::string> label_names;  // optional, indexes the columns

  std::string to_json() const;
  // Fixed-width summary table: AUC Macro / AUC Micro / F1 Macro / F1 Micro / P@5.
  std::string to_table() const;
};

// Thresholds come from the dev matrix (or from `test` itself when callers
// pass the same matrix twice). K values outside the label count are skipped.
MetricsReport evaluate_multilabel(const LabelMatrix& test, const ThresholdResult& thresholds,
                                  const std::vector<std::size_t>& precision_ks = {5, 8, 15},
                                  const std::vector<std::size_t>& recall_ks = {8, 15});

}  // namespace icdc
