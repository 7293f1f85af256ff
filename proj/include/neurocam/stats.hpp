#pragma once

// Chance-level computation, participant screening, exact Wilcoxon signed-rank
// testing with ties, and scenario-table aggregation.

#include <map>
#include <string>
#include <vector>

#include "neurocam/types.hpp"

namespace neurocam {

// 100 * k*/n where k* = min{k : P[Binomial(n, p0) >= k] <= alpha}, via exact
// tail summation. Capped at n (tiny test sets cannot beat chance at all).
double chance_level(int n, double alpha = 0.05, double p0 = 0.5);

// 100 * largest class share.
double majority_baseline(const std::vector<ClassLabel>& labels);

struct SubjectMetrics {
  int subject_id{0};
  double overall_acc{0.0};
  double left_acc{0.0};
  double right_acc{0.0};
  double chance_level{0.0};
  int n_test{0};
  int n_test_left{0};
  int n_test_right{0};
};

// Subjects whose overall accuracy clears chance + margin (percentage points),
// input order preserved.
std::vector<int> select_participants(const std::vector<SubjectMetrics>& metrics, double margin);

struct PairedSample {
  std::vector<int> labels;  // subject ids
  std::vector<double> a;
  std::vector<double> b;
};

struct WilcoxonResult {
  double w{0.0};        // min(W+, W-)
  double w_plus{0.0};
  double w_minus{0.0};
  double p_two_sided{1.0};
  int n_effective{0};   // pairs with nonzero difference
  bool all_zero{false};
  bool exact{false};    // full sign-flip distribution vs normal approximation
};

// Zeros dropped, |d| mid-ranked with ties averaged. Exact two-sided p by the
// full sign-flip distribution over the observed ranks for n_effective <= 20,
// normal approximation with tie correction above.
WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample);

struct ScenarioTable {
  std::vector<int> subjects;
  std::vector<std::string> column_names;            // order as loaded
  std::map<std::string, std::vector<double>> columns;
  std::string provenance;                            // e.g. "paper" for bundled data
};

ScenarioTable load_table_csv(const std::string& path);

struct ColumnSummary {
  std::string column;
  double mean{0.0};
  double sd{0.0};  // sample standard deviation (n-1)
};

struct PairwiseComparison {
  std::string column_a, column_b;
  double mean_difference{0.0};  // mean(a) - mean(b)
  WilcoxonResult test;
  bool significant_at_05{false};
};

struct TableSummary {
  std::vector<ColumnSummary> columns;
  std::vector<PairwiseComparison> comparisons;
};

// Mean +- SD per column plus pairwise Wilcoxon comparisons of the *_overall
// scenario columns.
TableSummary summarize_table(const ScenarioTable& table);

}  // namespace neurocam
