#include "neurocam/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "neurocam/util.hpp"

namespace neurocam {

namespace {

double log_binom_pmf(int n, int k, double p0) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
         k * std::log(p0) + (n - k) * std::log1p(-p0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

double chance_level(int n, double alpha, double p0) {
  if (n < 1) throw std::invalid_argument("chance_level: n must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("chance_level: alpha in (0,1)");
  if (!(p0 > 0.0 && p0 < 1.0)) throw std::invalid_argument("chance_level: p0 in (0,1)");
  // walk the upper tail downward; stop before it exceeds alpha
  double tail = 0.0;
  int k_star = n + 1;
  for (int k = n; k >= 0; --k) {
    tail += std::exp(log_binom_pmf(n, k, p0));
    if (tail <= alpha)
      k_star = k;
    else
      break;
  }
  if (k_star > n) k_star = n;  // cannot require more than all-correct
  return 100.0 * static_cast<double>(k_star) / static_cast<double>(n);
}

double majority_baseline(const std::vector<ClassLabel>& labels) {
  if (labels.empty()) throw std::invalid_argument("majority_baseline: empty label list");
  std::size_t left = 0;
  for (ClassLabel l : labels)
    if (l == ClassLabel::Left) ++left;
  const std::size_t top = std::max(left, labels.size() - left);
  return 100.0 * static_cast<double>(top) / static_cast<double>(labels.size());
}

std::vector<int> select_participants(const std::vector<SubjectMetrics>& metrics, double margin) {
  std::vector<int> kept;
  for (const auto& m : metrics)
    if (m.overall_acc >= m.chance_level + margin) kept.push_back(m.subject_id);
  return kept;
}

WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample) {
  if (sample.a.size() != sample.b.size())
    throw std::invalid_argument("wilcoxon: paired lists must have equal length");
  if (sample.a.size() < 2) throw std::invalid_argument("wilcoxon: need at least 2 pairs");

  std::vector<double> d;
  for (std::size_t i = 0; i < sample.a.size(); ++i) {
    const double diff = sample.a[i] - sample.b[i];
    if (!std::isfinite(diff)) throw std::invalid_argument("wilcoxon: non-finite difference");
    if (diff != 0.0) d.push_back(diff);
  }
  WilcoxonResult res;
  res.n_effective = static_cast<int>(d.size());
  if (d.empty()) {
    res.all_zero = true;
    res.p_two_sided = 1.0;
    return res;
  }

  // mid-ranks of |d| with ties averaged
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<double> rank(n, 0.0);
  std::vector<std::size_t> tie_sizes;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(std::abs(d[idx[j + 1]]) - std::abs(d[idx[i]])) < 1e-12) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0)
      res.w_plus += rank[i];
    else
      res.w_minus += rank[i];
  }
  res.w = std::min(res.w_plus, res.w_minus);

  if (n <= 20) {
    // exact: doubled ranks are integers; count sign assignments by subset-sum
    res.exact = true;
    std::vector<long> dr(n);
    long total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dr[i] = std::lround(2.0 * rank[i]);
      total += dr[i];
    }
    std::vector<std::uint64_t> ways(static_cast<std::size_t>(total) + 1, 0);
    ways[0] = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (long s = total; s >= dr[i]; --s)
        ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - dr[i])];
    const long threshold = std::lround(2.0 * res.w);
    std::uint64_t count = 0;
    for (long s = 0; s <= std::min(threshold, total); ++s)
      count += ways[static_cast<std::size_t>(s)];
    const double denom = std::pow(2.0, static_cast<double>(n));
    res.p_two_sided = std::min(1.0, 2.0 * static_cast<double>(count) / denom);
  } else {
    // normal approximation with tie correction and continuity correction
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    for (std::size_t t : tie_sizes) {
      const double td = static_cast<double>(t);
      tie_term += td * td * td - td;
    }
    const double sigma = std::sqrt(nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0);
    const double z = (res.w - mu + 0.5) / sigma;
    res.p_two_sided = std::min(1.0, 2.0 * normal_cdf(z));
  }
  return res;
}

ScenarioTable load_table_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("table csv is empty: " + path);
  const auto header = split(lines[0], ',');
  if (header.empty() || trim_copy(header[0]) != "subject")
    throw std::runtime_error("table csv must start with a 'subject' column: " + path);

  ScenarioTable table;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string name = trim_copy(header[c]);
    table.column_names.push_back(name);
    table.columns[name] = {};
  }
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim_copy(lines[li]).empty()) continue;
    const auto cells = split(lines[li], ',');
    if (cells.size() != header.size())
      throw std::runtime_error("table csv row " + std::to_string(li) + " has wrong cell count");
    table.subjects.push_back(std::stoi(trim_copy(cells[0])));
    for (std::size_t c = 1; c < header.size(); ++c)
      table.columns[table.column_names[c - 1]].push_back(std::stod(trim_copy(cells[c])));
  }
  return table;
}

TableSummary summarize_table(const ScenarioTable& table) {
  TableSummary summary;
  const std::size_t n = table.subjects.size();
  if (n == 0) throw std::invalid_argument("summarize_table: empty table");
  for (const auto& name : table.column_names) {
    const auto& v = table.columns.at(name);
    if (v.size() != n) throw std::invalid_argument("summarize_table: missing cells in " + name);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    summary.columns.push_back({name, mean, sd});
  }

  // pairwise comparisons over the scenario overall columns that are present
  std::vector<std::string> overall;
  for (const auto& name : table.column_names)
    if (name.size() > 8 && name.substr(name.size() - 8) == "_overall") overall.push_back(name);
  for (std::size_t i = 0; i < overall.size(); ++i) {
    for (std::size_t j = i + 1; j < overall.size(); ++j) {
      std::string first = overall[i], second = overall[j];
      auto mean_of = [&](const std::string& name) {
        const auto& v = table.columns.at(name);
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
      };
      if (mean_of(second) > mean_of(first)) std::swap(first, second);  // larger mean first
      PairedSample s;
      s.labels = table.subjects;
      s.a = table.columns.at(first);
      s.b = table.columns.at(second);
      PairwiseComparison cmp;
      cmp.column_a = first;
      cmp.column_b = second;
      cmp.mean_difference = mean_of(first) - mean_of(second);
      cmp.test = wilcoxon_signed_rank(s);
      cmp.significant_at_05 = cmp.test.p_two_sided <= 0.05;
      summary.comparisons.push_back(cmp);
    }
  }
  return summary;
}

}  // namespace neurocam
