#include "augda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace augda::eval {

const std::vector<Metric>& all_metrics() {
    static const std::vector<Metric> m{Metric::dice, Metric::hd95, Metric::vd, Metric::recall};
    return m;
}

std::string metric_name(Metric m) {
    switch (m) {
        case Metric::dice: return "dice";
        case Metric::hd95: return "hd95";
        case Metric::vd: return "vd";
        case Metric::recall: return "recall";
    }
    return "?";
}

bool higher_is_better(Metric m) { return m == Metric::dice || m == Metric::recall; }

std::optional<double> metric_value(const CaseMetrics& c, Metric m) {
    switch (m) {
        case Metric::dice: return c.dice;
        case Metric::hd95: return c.hd95_mm;
        case Metric::vd: return c.vd;
        case Metric::recall: return c.recall;
    }
    return std::nullopt;
}

namespace {

void check_shapes(const BinMask& a, const BinMask& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("metric: mask shape mismatch");
}

std::size_t overlap(const BinMask& a, const BinMask& b) {
    std::size_t n = 0;
    const auto& x = a.labels().vec();
    const auto& y = b.labels().vec();
    for (std::size_t i = 0; i < x.size(); ++i) n += (x[i] & y[i]);
    return n;
}

}  // namespace

double dice_score(const BinMask& a, const BinMask& b) {
    check_shapes(a, b);
    const auto na = a.count(), nb = b.count();
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap(a, b)) / static_cast<double>(na + nb);
}

std::vector<std::pair<int, int>> boundary_pixels(const BinMask& m) {
    std::vector<std::pair<int, int>> out;
    const int R = static_cast<int>(m.rows()), C = static_cast<int>(m.cols());
    auto fg = [&](int r, int c) { return r >= 0 && r < R && c >= 0 && c < C && m.at(r, c); };
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            if (fg(r, c) && (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1))) out.emplace_back(r, c);
    return out;
}

std::vector<double> directed_boundary_distances(const BinMask& from, const BinMask& to, Spacing spacing) {
    check_shapes(from, to);
    const auto src = boundary_pixels(from);
    const auto dst = boundary_pixels(to);
    if (src.empty() || dst.empty()) return {};
    const int R = static_cast<int>(to.rows()), C = static_cast<int>(to.cols());
    const double wr = spacing.row_mm * spacing.row_mm, wc = spacing.col_mm * spacing.col_mm;
    // Pass 1: per row of `to`, squared column distance to the nearest
    // boundary pixel in that row (inf when the row has none). Exact: the
    // nearest column minimises wc * dc^2 directly.
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<char> is_b(static_cast<std::size_t>(R) * C, 0);
    for (auto [r, c] : dst) is_b[static_cast<std::size_t>(r) * C + c] = 1;
    std::vector<double> row_d2(static_cast<std::size_t>(R) * C, inf);
    for (int r = 0; r < R; ++r) {
        int last = -1;
        std::vector<int> left(C, -1), right(C, -1);
        for (int c = 0; c < C; ++c) {
            if (is_b[static_cast<std::size_t>(r) * C + c]) last = c;
            left[c] = last;
        }
        last = -1;
        for (int c = C - 1; c >= 0; --c) {
            if (is_b[static_cast<std::size_t>(r) * C + c]) last = c;
            right[c] = last;
        }
        for (int c = 0; c < C; ++c) {
            double best = inf;
            for (int q : {left[c], right[c]})
                if (q >= 0) best = std::min(best, wc * static_cast<double>((c - q) * (c - q)));
            row_d2[static_cast<std::size_t>(r) * C + c] = best;
        }
    }
    // Pass 2: minimise over rows. fl(wr dr^2 + x) is monotone in x, so this
    // equals the all-pairs minimum bit for bit.
    std::vector<double> out;
    out.reserve(src.size());
    for (auto [r, c] : src) {
        double best = inf;
        for (int q = 0; q < R; ++q) {
            const double f = row_d2[static_cast<std::size_t>(q) * C + c];
            if (f == inf) continue;
            best = std::min(best, wr * static_cast<double>((r - q) * (r - q)) + f);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must be in [0,1]");
    std::sort(v.begin(), v.end());
    const double h = (v.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

std::optional<double> hd95(const BinMask& a, const BinMask& b, Spacing spacing) {
    check_shapes(a, b);
    if (!a.any() || !b.any()) return std::nullopt;
    auto d = directed_boundary_distances(a, b, spacing);
    const auto e = directed_boundary_distances(b, a, spacing);
    d.insert(d.end(), e.begin(), e.end());
    return quantile(std::move(d), 0.95);
}

std::optional<double> volume_difference(const BinMask& pred, const BinMask& gt, Spacing spacing) {
    check_shapes(pred, gt);
    if (!gt.any()) return std::nullopt;
    const double px = spacing.row_mm * spacing.col_mm;
    const double vp = pred.count() * px, vg = gt.count() * px;
    return std::abs(vp - vg) / vg;
}

std::optional<double> recall(const BinMask& pred, const BinMask& gt) {
    check_shapes(pred, gt);
    if (!gt.any()) return std::nullopt;
    return static_cast<double>(overlap(pred, gt)) / static_cast<double>(gt.count());
}

CaseMetrics evaluate_case(const std::string& id, const BinMask& pred, const BinMask& gt, Spacing spacing) {
    return {id, dice_score(pred, gt), hd95(pred, gt, spacing), volume_difference(pred, gt, spacing), recall(pred, gt)};
}

// ---------------------------------------------------------------------------
// Wilcoxon

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i] - y[i];
        if (!std::isfinite(v)) throw std::invalid_argument("wilcoxon: non-finite difference");
        if (v != 0.0) d.push_back(v);
    }
    WilcoxonResult res;
    res.n = static_cast<int>(d.size());
    if (d.empty()) return res;
    if (res.n < kWilcoxonMinPairs)
        throw std::invalid_argument("wilcoxon: fewer than 5 non-zero differences");

    // doubled midranks of |d| (integers)
    const int n = res.n;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<long> r2(n);
    double tie_term = 0.0;
    for (int i = 0; i < n;) {
        int j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const long doubled = (i + 1) + (j + 1);  // 2 * mean of ranks i+1..j+1
        for (int k = i; k <= j; ++k) r2[order[k]] = doubled;
        const double t = j - i + 1;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    long t_plus = 0, total = 0;
    for (int i = 0; i < n; ++i) {
        total += r2[i];
        if (d[i] > 0) t_plus += r2[i];
    }
    res.w_plus = t_plus / 2.0;
    res.w_minus = (total - t_plus) / 2.0;

    if (n <= kWilcoxonExactMax) {
        // counts of sign patterns by doubled positive-rank sum
        std::vector<double> cnt(static_cast<std::size_t>(total) + 1, 0.0);
        cnt[0] = 1.0;
        long reach = 0;
        for (int i = 0; i < n; ++i) {
            for (long s = reach; s >= 0; --s)
                if (cnt[s] != 0.0) cnt[s + r2[i]] += cnt[s];
            reach += r2[i];
        }
        double le = 0.0, ge = 0.0;
        for (long s = 0; s <= total; ++s) {
            if (s <= t_plus) le += cnt[s];
            if (s >= t_plus) ge += cnt[s];
        }
        const double all = std::ldexp(1.0, n);
        res.p = std::min(1.0, 2.0 * std::min(le, ge) / all);
        res.exact = true;
    } else {
        const double mean = n * (n + 1) / 4.0;
        const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
        res.exact = false;
        if (var <= 0.0) return res;
        const double z = (res.w_plus - mean) / std::sqrt(var);
        res.p = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Ranking

RankTable significance_ranking(const std::vector<MethodCases>& methods, double p_threshold,
                               const std::vector<Metric>& metrics) {
    if (methods.size() < 2) throw std::invalid_argument("significance_ranking: need at least two methods");
    if (!(p_threshold > 0.0 && p_threshold < 1.0)) throw std::invalid_argument("significance_ranking: p must be in (0,1)");
    RankTable t;
    t.p_threshold = p_threshold;
    t.metrics = metrics;
    const std::size_t M = methods.size();
    std::vector<std::map<std::string, const CaseMetrics*>> index(M);
    for (std::size_t i = 0; i < M; ++i) {
        t.methods.push_back(methods[i].method);
        for (const auto& c : methods[i].cases) index[i][c.case_id] = &c;
    }
    for (Metric m : metrics) {
        const double sign = higher_is_better(m) ? 1.0 : -1.0;
        std::vector<int> rank(M, 1), wins(M, 0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) {
                if (i == j) continue;
                // is j significantly better than i?
                std::vector<double> xj, xi;
                for (const auto& [id, ci] : index[i]) {
                    auto it = index[j].find(id);
                    if (it == index[j].end()) continue;
                    const auto vi = metric_value(*ci, m), vj = metric_value(*it->second, m);
                    if (!vi || !vj) continue;
                    xj.push_back(sign * *vj);
                    xi.push_back(sign * *vi);
                }
                try {
                    const auto w = wilcoxon_signed_rank(xj, xi);
                    if (w.p < p_threshold && w.w_plus > w.w_minus) {
                        ++rank[i];
                        ++wins[j];
                    }
                } catch (const std::invalid_argument&) {
                    t.notes.push_back(metric_name(m) + ": " + methods[j].method + " vs " + methods[i].method + " skipped (" +
                                      std::to_string(xj.size()) + " common cases)");
                }
            }
        t.rank.push_back(rank);
        t.wins.push_back(wins);
    }
    t.final_rank.assign(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        for (const auto& r : t.rank) t.final_rank[i] += r[i];
        t.final_rank[i] /= static_cast<double>(metrics.size());
    }
    return t;
}

std::vector<double> aggregate_ranks(const std::vector<RankTable>& tables) {
    if (tables.empty()) return {};
    std::vector<double> out(tables.front().methods.size(), 0.0);
    for (const auto& t : tables) {
        if (t.methods != tables.front().methods) throw std::invalid_argument("aggregate_ranks: method lists differ");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.final_rank[i];
    }
    for (auto& v : out) v /= static_cast<double>(tables.size());
    return out;
}

// ---------------------------------------------------------------------------
// Tables and files

MedianIqr median_iqr(const std::vector<double>& values) {
    MedianIqr r;
    r.n = values.size();
    if (values.empty()) return r;
    r.median = quantile(values, 0.5);
    r.iqr = quantile(values, 0.75) - quantile(values, 0.25);
    return r;
}

std::string format_median_iqr(const MedianIqr& m) {
    if (m.n == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f(%.2f)", m.median, m.iqr);
    return buf;
}

std::vector<double> defined_values(const std::vector<CaseMetrics>& cases, Metric m) {
    std::vector<double> v;
    for (const auto& c : cases)
        if (auto x = metric_value(c, m)) v.push_back(*x);
    return v;
}

namespace {

std::string fmt17(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

std::optional<double> parse_opt(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::runtime_error("case metrics csv: bad number '" + s + "'");
    return v;
}

}  // namespace

void write_case_metrics_csv(const std::filesystem::path& path, const std::vector<CaseMetrics>& cases) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "case_id,dice,hd95_mm,vd,recall\n";
    for (const auto& c : cases) {
        if (c.case_id.find_first_of(",\n") != std::string::npos)
            throw std::invalid_argument("case id contains a separator: " + c.case_id);
        os << c.case_id << ',' << fmt17(c.dice) << ',' << fmt17(c.hd95_mm) << ',' << fmt17(c.vd) << ','
           << fmt17(c.recall) << '\n';
    }
}

std::vector<CaseMetrics> read_case_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "case_id,dice,hd95_mm,vd,recall") throw std::runtime_error(path.string() + ": unexpected header");
    std::vector<CaseMetrics> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 5) throw std::runtime_error(path.string() + ": expected 5 fields in '" + line + "'");
        CaseMetrics c;
        c.case_id = f[0];
        const auto d = parse_opt(f[1]);
        if (!d) throw std::runtime_error(path.string() + ": dice missing");
        c.dice = *d;
        c.hd95_mm = parse_opt(f[2]);
        c.vd = parse_opt(f[3]);
        c.recall = parse_opt(f[4]);
        out.push_back(c);
    }
    return out;
}

void write_rank_csv(const std::filesystem::path& path, const RankTable& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "method";
    for (Metric m : t.metrics) os << ',' << metric_name(m);
    os << ",final_rank,p_threshold\n";
    for (std::size_t i = 0; i < t.methods.size(); ++i) {
        os << t.methods[i];
        for (std::size_t k = 0; k < t.metrics.size(); ++k) os << ',' << t.rank[k][i];
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%.6f,%g\n", t.final_rank[i], t.p_threshold);
        os << buf;
    }
}

std::string render_markdown_table(const std::string& title, const std::vector<MethodCases>& methods, const RankTable& t) {
    std::ostringstream os;
    os << "### " << title << "\n\n| Method |";
    for (Metric m : t.metrics) os << ' ' << metric_name(m) << " |";
    os << " Rank |\n|---|";
    for (std::size_t k = 0; k < t.metrics.size(); ++k) os << "---|";
    os << "---|\n";
    std::vector<std::size_t> order(t.methods.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return t.final_rank[a] < t.final_rank[b]; });
    for (auto i : order) {
        const MethodCases* mc = nullptr;
        for (const auto& m : methods)
            if (m.method == t.methods[i]) mc = &m;
        if (!mc) throw std::invalid_argument("render_markdown_table: no cases for " + t.methods[i]);
        os << "| " << t.methods[i] << " |";
        for (std::size_t k = 0; k < t.metrics.size(); ++k) {
            const std::string cell = format_median_iqr(median_iqr(defined_values(mc->cases, t.metrics[k])));
            const bool best = t.wins[k][i] == static_cast<int>(t.methods.size()) - 1;
            os << ' ' << (best ? "**" + cell + "**" : cell) << " |";
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.3f |\n", t.final_rank[i]);
        os << buf;
    }
    os << '\n';
    return os.str();
}

}  // namespace augda::eval
