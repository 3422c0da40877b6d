#include <doctest.h>

#include <cmath>

#include "augda/losses.hpp"
#include "gradcheck.hpp"

using namespace augda;
using nn::Tensor;

namespace {

Tensor uniform_tensor(std::array<int, 4> shape, SeededRng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& x : t.values()) x = rng.uniform(lo, hi);
    return t;
}

ProbMask block(std::size_t rows, std::size_t cols, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    Grid<double> g(rows, cols, 0.0);
    for (auto r = r0; r < r1; ++r)
        for (auto c = c0; c < c1; ++c) g(r, c) = 1.0;
    return ProbMask(g);
}

}  // namespace

TEST_CASE("soft dice closed forms") {
    const double eps = 1e-5;
    const auto a = block(8, 8, 1, 1, 4, 4);  // 9 pixels
    CHECK(soft_dice_loss(a, a, eps) == 0.0);

    const auto b = block(8, 8, 5, 5, 8, 8);  // 9 pixels, disjoint
    const double k = 9.0;
    CHECK(std::abs(soft_dice_loss(a, b, eps) - (1.0 - eps / (2 * k + eps))) < 1e-12);

    // half the pixels foreground, prediction 0.5 everywhere
    const auto half = block(8, 8, 0, 0, 4, 8);
    const ProbMask u(Grid<double>(8, 8, 0.5));
    const double N = 64.0;
    const double expected = 1.0 - (2.0 * 0.25 * N + eps) / (0.5 * N + 0.5 * N + eps);
    CHECK(std::abs(soft_dice_loss(u, half, eps) - expected) < 1e-12);
    CHECK(std::abs(soft_dice_loss(u, half, eps) - 0.5) < 1e-6);

    // empty vs empty is perfect agreement
    const ProbMask z(Grid<double>(8, 8, 0.0));
    CHECK(soft_dice_loss(z, z, eps) == 0.0);
    CHECK_THROWS_AS(soft_dice_loss(z, ProbMask(Grid<double>(8, 9, 0.0)), eps), std::invalid_argument);
}

TEST_CASE("soft dice properties") {
    SeededRng rng(21);
    for (int it = 0; it < 50; ++it) {
        Grid<double> p(8, 8), t(8, 8);
        for (auto& v : p.values()) v = rng.uniform();
        for (auto& v : t.values()) v = rng.uniform();
        const ProbMask P(p), T(t);
        const double l = soft_dice_loss(P, T);
        CHECK(l >= 0.0);
        CHECK(l < 1.0);
        CHECK(l == doctest::Approx(soft_dice_loss(T, P)).epsilon(1e-14));
    }
    // adding a true positive never increases the loss
    for (int it = 0; it < 50; ++it) {
        BinMask gt(8, 8), pred(8, 8);
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c) {
                gt.set(r, c, rng.bernoulli(0.4));
                pred.set(r, c, rng.bernoulli(0.3));
            }
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c)
                if (gt.at(r, c) && !pred.at(r, c)) {
                    BinMask more = pred;
                    more.set(r, c, true);
                    CHECK(soft_dice_loss(more.as_prob(), gt) <= soft_dice_loss(pred.as_prob(), gt) + 1e-15);
                }
    }
}

TEST_CASE("consistency loss examples") {
    const ProbMask ones(Grid<double>(8, 8, 1.0));
    CHECK(consistency_loss(ones, ones) == 0.0);
    SeededRng rng(4);
    BinMask m(8, 8);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) m.set(r, c, rng.bernoulli(0.3));
    CHECK(consistency_loss(m.as_prob(), m.as_prob()) == 0.0);
    // soft maps are not self-consistent under soft Dice: 1 - sum p^2 / sum p
    Grid<double> a(8, 8), b(8, 8);
    double s1 = 0, s2 = 0;
    for (auto& v : a.values()) {
        v = rng.uniform();
        s1 += v;
        s2 += v * v;
    }
    for (auto& v : b.values()) v = rng.uniform();
    CHECK(consistency_loss(ProbMask(a), ProbMask(a), 1e-5) ==
          doctest::Approx(1.0 - (2 * s2 + 1e-5) / (2 * s1 + 1e-5)).epsilon(1e-12));
    CHECK(consistency_loss(ProbMask(a), ProbMask(b)) > 0.0);
}

TEST_CASE("adversarial loss analytics") {
    const std::vector<double> z2{0.0, 0.0}, z3{0.0, 0.0, 0.0};
    CHECK(std::abs(adversarial_loss(z2, DomainTarget::of(0, 2)) - std::log(2.0)) < 1e-9);
    CHECK(std::abs(adversarial_loss(z3, DomainTarget::of(2, 3)) - std::log(3.0)) < 1e-9);
    const std::vector<double> sat{20.0, 0.0};
    CHECK(adversarial_loss(sat, DomainTarget::of(0, 2)) < 1e-8);
    CHECK_THROWS_AS(adversarial_loss(z3, DomainTarget::of(0, 2)), std::invalid_argument);
    CHECK_THROWS_AS(DomainTarget::of(2, 2), std::invalid_argument);
    DomainTarget bad{{1.0, 1.0}};
    CHECK_THROWS_AS(bad.index(), std::invalid_argument);

    SeededRng rng(1);
    Tensor logits(5, 3, 1, 1);
    for (auto& v : logits.values()) v = rng.normal() * 3;
    const std::vector<int> y{0, 1, 2, 1, 0};
    CHECK(adversarial_loss(logits, y) >= 0.0);
    Tensor zero(4, 3, 1, 1, 0.0);
    const std::vector<int> y4{0, 1, 2, 2};
    CHECK(adversarial_loss(zero, y4) == std::log(3.0));
}

TEST_CASE("total loss") {
    const LossWeights w;
    CHECK(w.alpha == 0.2);
    CHECK(w.beta == 0.3);
    CHECK(w.epsilon == 1e-5);
    const double t = total_loss(0.4, 0.5, 0.7, w);
    CHECK(t == 0.4 + 0.2 * 0.5 - 0.3 * 0.7);
    CHECK(std::abs(t - 0.29) < 1e-15);
    const LossWeights off{0.0, 0.0, 1e-5};
    CHECK(total_loss(0.37, 0.9, 0.8, off) == 0.37);
    CHECK(total_loss(0, 0, 0, w) == 0.0);
    CHECK_THROWS_AS(total_loss(NAN, 0, 0, w), std::invalid_argument);
    CHECK_THROWS_AS(total_loss(0, INFINITY, 0, w), std::invalid_argument);
    // linear in each component
    CHECK(total_loss(0.1, 0.6, 0.2, w) - total_loss(0.1, 0.3, 0.2, w) == doctest::Approx(0.2 * 0.3));
}

TEST_CASE("loss gradients match finite differences") {
    SeededRng rng(33);
    const double eps = 1e-5;
    for (int it = 0; it < 20; ++it) {
        Tensor p = uniform_tensor({2, 1, 8, 8}, rng, 0.01, 0.99);
        Tensor t = uniform_tensor({2, 1, 8, 8}, rng, 0.01, 0.99);
        Tensor gp, gt;
        soft_dice_loss(p, t, eps, &gp, &gt);
        auto f = [&] { return soft_dice_loss(p, t, eps, nullptr); };
        auto cp = testing::directional(
            p.size(), std::vector<double>(gp.values().begin(), gp.values().end()),
            [&](const auto& v, double s) {
                for (std::size_t k = 0; k < p.size(); ++k) p[k] += s * v[k];
            },
            f, rng, 1e-6);
        CHECK(cp.rel_err() < 1e-4);
        auto ct = testing::directional(
            t.size(), std::vector<double>(gt.values().begin(), gt.values().end()),
            [&](const auto& v, double s) {
                for (std::size_t k = 0; k < t.size(); ++k) t[k] += s * v[k];
            },
            f, rng, 1e-6);
        CHECK(ct.rel_err() < 1e-4);

        Tensor go, ga;
        consistency_loss(p, t, eps, &go, &ga);
        for (std::size_t k = 0; k < go.size(); ++k) {
            CHECK(go[k] == doctest::Approx(gp[k]).epsilon(1e-6));
            CHECK(ga[k] == doctest::Approx(gt[k]).epsilon(1e-6));
        }

        Tensor z(4, 3, 1, 1);
        for (auto& v : z.values()) v = rng.normal() * 2;
        const std::vector<int> y{0, 2, 1, 1};
        Tensor gz;
        adversarial_loss(z, y, &gz);
        auto cz = testing::directional(
            z.size(), std::vector<double>(gz.values().begin(), gz.values().end()),
            [&](const auto& v, double s) {
                for (std::size_t k = 0; k < z.size(); ++k) z[k] += s * v[k];
            },
            [&] { return adversarial_loss(z, y); }, rng, 1e-6);
        CHECK(cz.rel_err() < 1e-4);
    }
}

TEST_CASE("domain accuracy") {
    Tensor z(4, 2, 1, 1);
    z.at(0, 0, 0, 0) = 1;
    z.at(1, 1, 0, 0) = 1;
    z.at(2, 1, 0, 0) = 1;
    z.at(3, 0, 0, 0) = 1;
    const std::vector<int> y{0, 1, 0, 1};
    CHECK(domain_accuracy(z, y) == 0.5);
}
