#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "augda/core.hpp"

namespace augda::eval {

/// Per-case scores. Undefined metrics (empty reference or prediction, see
/// the individual functions) are nullopt and are dropped pairwise when
/// ranking.
struct CaseMetrics {
    std::string case_id;
    double dice = 0.0;
    std::optional<double> hd95_mm;
    std::optional<double> vd;
    std::optional<double> recall;
    bool operator==(const CaseMetrics&) const = default;
};

enum class Metric { dice, hd95, vd, recall };
const std::vector<Metric>& all_metrics();
std::string metric_name(Metric m);
bool higher_is_better(Metric m);
std::optional<double> metric_value(const CaseMetrics& c, Metric m);

/// 2|a and b| / (|a| + |b|); 1 when both are empty.
double dice_score(const BinMask& a, const BinMask& b);

/// Foreground pixels with at least one background 4-neighbour. Pixels on
/// the image edge count as having background outside.
std::vector<std::pair<int, int>> boundary_pixels(const BinMask& m);

/// Distances (mm) from every boundary pixel of `from` to the nearest
/// boundary pixel of `to`.
std::vector<double> directed_boundary_distances(const BinMask& from, const BinMask& to, Spacing spacing);

/// Linear interpolation between order statistics (h = (n-1) q).
double quantile(std::vector<double> values, double q);

/// 95th percentile of the union of both directed boundary distance sets.
/// nullopt when either mask is empty.
std::optional<double> hd95(const BinMask& a, const BinMask& b, Spacing spacing);

/// |V_pred - V_gt| / V_gt; nullopt when gt is empty.
std::optional<double> volume_difference(const BinMask& pred, const BinMask& gt, Spacing spacing);
/// TP / (TP + FN); nullopt when gt is empty.
std::optional<double> recall(const BinMask& pred, const BinMask& gt);

CaseMetrics evaluate_case(const std::string& id, const BinMask& pred, const BinMask& gt, Spacing spacing);

struct WilcoxonResult {
    double p = 1.0;
    int n = 0;            ///< non-zero differences used
    double w_plus = 0.0;  ///< sum of midranks of positive differences
    double w_minus = 0.0;
    bool exact = true;
};

inline constexpr int kWilcoxonMinPairs = 5;
inline constexpr int kWilcoxonExactMax = 25;

/// Two-sided paired signed-rank test on x - y. Zero differences are
/// dropped; all-zero gives p = 1. Exact distribution (midranks, DP) for
/// n <= 25, normal approximation with tie correction above. Throws when
/// lengths differ or fewer than 5 non-zero differences remain.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

struct MethodCases {
    std::string method;
    std::vector<CaseMetrics> cases;
};

/// Significance ranking. rank[m][i] = 1 + number of methods significantly
/// better than method i on metrics[m]; final_rank[i] = mean over metrics.
struct RankTable {
    std::vector<std::string> methods;
    std::vector<Metric> metrics;
    std::vector<std::vector<int>> rank;  ///< [metric][method]
    std::vector<std::vector<int>> wins;  ///< [metric][method]: methods it beats
    std::vector<double> final_rank;
    double p_threshold = 0.01;
    std::vector<std::string> notes;  ///< comparisons skipped for too few cases
};

RankTable significance_ranking(const std::vector<MethodCases>& methods, double p_threshold = 0.01,
                               const std::vector<Metric>& metrics = all_metrics());

/// Mean final rank per method over several tables with the same methods.
std::vector<double> aggregate_ranks(const std::vector<RankTable>& tables);

struct MedianIqr {
    double median = 0.0;
    double iqr = 0.0;
    std::size_t n = 0;
};
MedianIqr median_iqr(const std::vector<double>& values);
/// "0.7572(0.10)"; "n/a" when no values.
std::string format_median_iqr(const MedianIqr& m);
std::vector<double> defined_values(const std::vector<CaseMetrics>& cases, Metric m);

void write_case_metrics_csv(const std::filesystem::path& path, const std::vector<CaseMetrics>& cases);
std::vector<CaseMetrics> read_case_metrics_csv(const std::filesystem::path& path);
void write_rank_csv(const std::filesystem::path& path, const RankTable& t);

/// Markdown table with one row per method (sorted by final rank), one
/// median(IQR) column per metric and the rank. A cell is bold when that
/// method is significantly better than every other method on the metric.
std::string render_markdown_table(const std::string& title, const std::vector<MethodCases>& methods, const RankTable& t);

}  // namespace augda::eval
