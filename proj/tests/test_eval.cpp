#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "augda/eval.hpp"

using namespace augda;
using namespace augda::eval;

namespace {

BinMask random_mask(std::size_t rows, std::size_t cols, double p, SeededRng& rng) {
    BinMask m(rows, cols);
    // blobby masks: random rectangles plus speckle
    const int rects = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < rects; ++k) {
        const auto r0 = rng.below(rows), c0 = rng.below(cols);
        const auto h = 1 + rng.below(rows / 3), w = 1 + rng.below(cols / 3);
        for (auto r = r0; r < std::min(rows, r0 + h); ++r)
            for (auto c = c0; c < std::min(cols, c0 + w); ++c) m.set(r, c, true);
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (rng.bernoulli(p)) m.set(r, c, true);
    return m;
}

// Independent oracle: all-pairs boundary distances.
double hd95_oracle(const BinMask& a, const BinMask& b, Spacing s) {
    auto border = [](const BinMask& m) {
        std::vector<std::pair<int, int>> out;
        const int R = static_cast<int>(m.rows()), C = static_cast<int>(m.cols());
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) {
                if (!m.at(r, c)) continue;
                const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
                bool edge = false;
                for (int k = 0; k < 4; ++k) {
                    const int rr = r + dr[k], cc = c + dc[k];
                    if (rr < 0 || rr >= R || cc < 0 || cc >= C || !m.at(rr, cc)) edge = true;
                }
                if (edge) out.emplace_back(r, c);
            }
        return out;
    };
    const auto ba = border(a), bb = border(b);
    std::vector<double> d;
    auto directed = [&](const auto& from, const auto& to) {
        for (auto [r, c] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (auto [q, k] : to) {
                const double dr = r - q, dc = c - k;
                best = std::min(best, s.row_mm * s.row_mm * (dr * dr) + s.col_mm * s.col_mm * (dc * dc));
            }
            d.push_back(std::sqrt(best));
        }
    };
    directed(ba, bb);
    directed(bb, ba);
    std::sort(d.begin(), d.end());
    const double h = (d.size() - 1) * 0.95;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (h - lo) * (d[hi] - d[lo]);
}

// Independent oracle: enumerate all 2^n sign assignments of the ranks.
double wilcoxon_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    const int n = static_cast<int>(d.size());
    std::vector<double> rank(n);
    for (int i = 0; i < n; ++i) {
        int less = 0, equal = 0;
        for (int j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) ++less;
            if (std::abs(d[j]) == std::abs(d[i])) ++equal;
        }
        rank[i] = less + (equal + 1) / 2.0;
    }
    double obs = 0;
    for (int i = 0; i < n; ++i)
        if (d[i] > 0) obs += rank[i];
    long le = 0, ge = 0;
    for (long mask = 0; mask < (1L << n); ++mask) {
        double s = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1L << i)) s += rank[i];
        if (s <= obs + 1e-9) ++le;
        if (s >= obs - 1e-9) ++ge;
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / std::ldexp(1.0, n));
}

MethodCases make_method(const std::string& name, const std::vector<double>& dice, double hd_offset = 0.0) {
    MethodCases m{name, {}};
    for (std::size_t i = 0; i < dice.size(); ++i)
        m.cases.push_back({"c" + std::to_string(i), dice[i], 10.0 - 5 * dice[i] + hd_offset, 1.0 - dice[i], dice[i]});
    return m;
}

}  // namespace

TEST_CASE("dice examples") {
    BinMask a(8, 8), b(8, 8), e(8, 8);
    for (int r = 2; r < 4; ++r)
        for (int c = 2; c < 4; ++c) a.set(r, c, true);
    for (int r = 2; r < 4; ++r)
        for (int c = 3; c < 5; ++c) b.set(r, c, true);
    CHECK(dice_score(a, a) == 1.0);
    CHECK(dice_score(a, b) == 0.5);
    CHECK(dice_score(e, e) == 1.0);
    BinMask far(8, 8);
    far.set(7, 7, true);
    CHECK(dice_score(a, far) == 0.0);
    CHECK_THROWS_AS(dice_score(a, BinMask(8, 9)), std::invalid_argument);
}

TEST_CASE("hd95 examples") {
    BinMask a(8, 8), b(8, 8);
    a.set(4, 1, true);
    b.set(4, 4, true);
    CHECK(*hd95(a, a, {}) == 0.0);
    CHECK(*hd95(a, b, {1.0, 1.0}) == 3.0);
    CHECK(*hd95(a, b, {1.0, 0.5}) == 1.5);
    CHECK(!hd95(a, BinMask(8, 8), {}));
}

TEST_CASE("hd95 equals the all-pairs oracle exactly") {
    SeededRng rng(17);
    const Spacing spacings[] = {{1.0, 1.0}, {1.0, 0.5}, {1.2, 0.9}, {0.7, 1.3}};
    int tested = 0;
    while (tested < 100) {
        const std::size_t rows = 8 + rng.below(25), cols = 8 + rng.below(25);
        const auto a = random_mask(rows, cols, 0.02, rng);
        const auto b = random_mask(rows, cols, 0.02, rng);
        const Spacing s = spacings[rng.below(4)];
        const auto h = hd95(a, b, s);
        REQUIRE(h);
        CHECK(*h == hd95_oracle(a, b, s));
        CHECK(*h == *hd95(b, a, s));
        const Spacing s2{2.5 * s.row_mm, 2.5 * s.col_mm};
        CHECK(*hd95(a, b, s2) == doctest::Approx(2.5 * *h).epsilon(1e-12));
        ++tested;
    }
}

TEST_CASE("quantile is linear between order statistics") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({0, 10}, 0.95) == doctest::Approx(9.5));
    CHECK(quantile({7}, 0.95) == 7.0);
}

TEST_CASE("volume difference and recall") {
    BinMask gt(8, 8), big(8, 8), half(8, 8), empty(8, 8);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) gt.set(r, c, true);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) big.set(r, c, true);
    for (int c = 0; c < 4; ++c) half.set(0, c, true);
    CHECK(*volume_difference(gt, gt, {1.2, 0.8}) == 0.0);
    CHECK(*volume_difference(big, gt, {1.2, 0.8}) == doctest::Approx(1.0));
    CHECK(*volume_difference(empty, gt, {}) == 1.0);
    CHECK(!volume_difference(gt, empty, {}));
    CHECK(*recall(big, gt) == 1.0);
    CHECK(*recall(empty, gt) == 0.0);
    CHECK(*recall(half, gt) == 0.5);
    CHECK(!recall(gt, empty));
    const auto m = evaluate_case("x", empty, gt, {});
    CHECK(m.dice == 0.0);
    CHECK(!m.hd95_mm);
    CHECK(*m.vd == 1.0);
}

TEST_CASE("wilcoxon examples") {
    const std::vector<double> x{1, 2, 3, 4, 5, 6};
    CHECK(wilcoxon_signed_rank(x, x).p == 1.0);
    const std::vector<double> y{0, 0, 0, 0, 0, 0};
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(r.p == 0.03125);
    CHECK(r.exact);
    const std::vector<double> sym{1, -1, 2, -2, 3, -3};
    CHECK(wilcoxon_signed_rank(sym, y).p == 1.0);
    const std::vector<double> short_x{1, 2, 3}, short_y{0, 0, 0};
    CHECK_THROWS_AS(wilcoxon_signed_rank(short_x, short_y), std::invalid_argument);
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, short_y), std::invalid_argument);
}

TEST_CASE("wilcoxon exact p matches sign enumeration") {
    SeededRng rng(23);
    int datasets = 0;
    for (int n = 5; n <= 12; ++n)
        for (int rep = 0; rep < 8; ++rep) {
            std::vector<double> x(n), y(n);
            for (int i = 0; i < n; ++i) {
                // coarse values so ties and zeros occur
                x[i] = std::round(rng.normal() * 3) / 2.0;
                y[i] = std::round(rng.normal() * 3) / 2.0 + (rep % 3 == 0 ? 1.0 : 0.0);
            }
            int nz = 0;
            for (int i = 0; i < n; ++i) nz += x[i] != y[i];
            if (nz < kWilcoxonMinPairs) continue;
            CHECK(std::abs(wilcoxon_signed_rank(x, y).p - wilcoxon_oracle(x, y)) <= 1e-12);
            ++datasets;
        }
    CHECK(datasets >= 50);
}

TEST_CASE("wilcoxon normal approximation") {
    // n = 30 with no ties, all differences positive except the smallest
    std::vector<double> x(30), y(30, 0.0);
    for (int i = 0; i < 30; ++i) x[i] = i + 1;
    x[0] = -1;
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(!r.exact);
    const double mean = 30 * 31 / 4.0, sd = std::sqrt(30 * 31 * 61 / 24.0);
    const double z = (r.w_plus - mean) / sd;
    CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-14));
    CHECK(r.w_plus == 464.0);
}

TEST_CASE("ranking: constructed dominance and total tie") {
    SeededRng rng(1);
    std::vector<double> base(20);
    for (auto& v : base) v = rng.uniform(0.3, 0.6);
    std::vector<double> a = base, b = base, c = base;
    for (int i = 0; i < 20; ++i) {
        a[i] += 0.2 + 0.01 * rng.uniform();
        b[i] += 0.1 + 0.01 * rng.uniform();
    }
    const auto t = significance_ranking({make_method("A", a), make_method("B", b), make_method("C", c)}, 0.01);
    for (std::size_t m = 0; m < t.metrics.size(); ++m) {
        CHECK(t.rank[m] == std::vector<int>{1, 2, 3});
    }
    CHECK(t.final_rank == std::vector<double>{1.0, 2.0, 3.0});

    const auto tie = significance_ranking({make_method("A", base), make_method("B", base), make_method("C", base)});
    CHECK(tie.final_rank == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("ranking: a dominating method ranks first among six") {
    SeededRng rng(2);
    std::vector<MethodCases> methods;
    std::vector<double> sup(24);
    for (auto& v : sup) v = rng.uniform(0.8, 0.9);
    methods.push_back(make_method("supervised_upper", sup));
    for (int k = 0; k < 5; ++k) {
        std::vector<double> v(24);
        for (int i = 0; i < 24; ++i) v[i] = sup[i] - rng.uniform(0.05, 0.4);
        methods.push_back(make_method("m" + std::to_string(k), v));
    }
    const auto t = significance_ranking(methods, 0.01);
    CHECK(t.final_rank[0] == 1.0);
    for (std::size_t i = 1; i < 6; ++i) CHECK(t.final_rank[i] > 1.0);
    const auto md = render_markdown_table("x", methods, t);
    CHECK(md.find("| supervised_upper | **") != std::string::npos);
}

TEST_CASE("ranking: few common cases are non-significant and noted") {
    const auto a = make_method("A", {0.9, 0.9, 0.9});
    const auto b = make_method("B", {0.1, 0.1, 0.1});
    const auto t = significance_ranking({a, b});
    CHECK(t.final_rank == std::vector<double>{1.0, 1.0});
    CHECK(!t.notes.empty());
}

TEST_CASE("ranking properties on random tables") {
    SeededRng rng(3);
    int curved_flips = 0;
    for (int table = 0; table < 20; ++table) {
        const int M = 3 + static_cast<int>(rng.below(3));
        const int n = 15 + static_cast<int>(rng.below(15));
        std::vector<MethodCases> methods;
        for (int k = 0; k < M; ++k) {
            const double shift = rng.uniform(-0.2, 0.2);
            MethodCases mc{"m" + std::to_string(k), {}};
            for (int i = 0; i < n; ++i) {
                const double d = std::clamp(0.5 + shift + 0.1 * rng.normal(), 0.01, 0.99);
                mc.cases.push_back({"c" + std::to_string(i), d, rng.uniform(1, 20), rng.uniform(0, 2), rng.uniform()});
            }
            methods.push_back(mc);
        }
        const auto t = significance_ranking(methods, 0.01);
        for (const auto& r : t.rank)
            for (int v : r) CHECK((v >= 1 && v <= M));

        // strictly increasing affine transforms of every metric
        auto affine = methods;
        for (auto& mc : affine)
            for (auto& c : mc.cases) {
                c.dice = 3.0 * c.dice + 1.0;
                c.hd95_mm = 0.5 * *c.hd95_mm + 2.0;
                c.vd = 4.0 * *c.vd;
                c.recall = 2.0 * *c.recall - 7.0;
            }
        CHECK(significance_ranking(affine, 0.01).rank == t.rank);

        auto curved = methods;
        for (auto& mc : curved)
            for (auto& c : mc.cases) {
                c.dice = std::exp(2.0 * c.dice);
                c.hd95_mm = std::sqrt(*c.hd95_mm);
                c.vd = std::pow(*c.vd, 3.0);
                c.recall = std::log1p(*c.recall);
            }
        if (significance_ranking(curved, 0.01).rank != t.rank) ++curved_flips;

        // improving one method everywhere never worsens its final rank
        auto better = methods;
        for (auto& c : better[0].cases) {
            c.dice += 0.05;
            c.hd95_mm = *c.hd95_mm - 0.5;
            c.vd = *c.vd - 0.05;
            c.recall = *c.recall + 0.05;
        }
        CHECK(significance_ranking(better, 0.01).final_rank[0] <= t.final_rank[0]);
    }
    // Nonlinear monotone maps reorder |differences|, so signed-rank decisions
    // near the threshold can change. This is a property of the test, pinned
    // here so a change in behaviour is noticed.
    CHECK(curved_flips == 3);
}

TEST_CASE("aggregate ranks and formatting") {
    RankTable a, b;
    a.methods = b.methods = {"x", "y"};
    a.final_rank = {1.0, 2.0};
    b.final_rank = {2.0, 2.0};
    CHECK(aggregate_ranks({a, b}) == std::vector<double>{1.5, 2.0});
    CHECK(format_median_iqr({0.75724, 0.1012, 3}) == "0.7572(0.10)");
    CHECK(format_median_iqr({}) == "n/a");
    const auto mi = median_iqr({1, 2, 3, 4, 5});
    CHECK(mi.median == 3.0);
    CHECK(mi.iqr == 2.0);
}

TEST_CASE("case metrics csv round trip") {
    const auto path = std::filesystem::temp_directory_path() / "augda_cases.csv";
    std::vector<CaseMetrics> cs{{"a", 0.1 + 0.2, 3.0, std::nullopt, 0.5}, {"b", 1.0, std::nullopt, std::nullopt, std::nullopt}};
    write_case_metrics_csv(path, cs);
    CHECK(read_case_metrics_csv(path) == cs);
    std::filesystem::remove(path);
}
