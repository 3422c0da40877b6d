#include <doctest.h>

#include <filesystem>

#include "augda/nets.hpp"
#include "augda/optim.hpp"
#include "gradcheck.hpp"

using namespace augda;
using namespace augda::nn;

namespace {

std::vector<Parameter*> trainable(Network& net) {
    std::vector<Parameter*> out;
    for (auto* p : net.parameters())
        if (p->trainable) out.push_back(p);
    return out;
}

std::size_t total_size(const std::vector<Parameter*>& ps) {
    std::size_t n = 0;
    for (auto* p : ps) n += p->value.size();
    return n;
}

std::vector<double> flat_grad(const std::vector<Parameter*>& ps) {
    std::vector<double> g;
    for (auto* p : ps) g.insert(g.end(), p->grad.values().begin(), p->grad.values().end());
    return g;
}

void shift(const std::vector<Parameter*>& ps, const std::vector<double>& v, double t) {
    std::size_t k = 0;
    for (auto* p : ps)
        for (auto& x : p->value.values()) x += t * v[k++];
}

Tensor random_tensor(std::array<int, 4> shape, SeededRng& rng) {
    Tensor t(shape);
    for (auto& x : t.values()) x = rng.normal();
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_segmenter_gradients(SegmenterConfig cfg, int rows, int cols) {
    SeededRng init(11);
    Segmenter f(cfg, init);
    SeededRng rng(5);
    const Tensor x = random_tensor({2, 1, rows, cols}, rng);
    const Tensor wp = random_tensor({2, 1, rows, cols}, rng);
    const Tensor wf = random_tensor(f.feature_shape(2, rows, cols), rng);
    auto loss = [&] {
        auto pass = f.forward(x, Mode::train);
        return dot(pass.probs, wp) + dot(pass.features, wf);
    };
    f.zero_grad();
    auto pass = f.forward(x, Mode::train);
    f.backward(pass, wp, &wf);
    auto ps = trainable(f);
    const auto g = flat_grad(ps);
    int checked = 0;
    for (int i = 0; i < 24; ++i) {
        auto c = testing::directional(total_size(ps), g, [&](const auto& v, double t) { shift(ps, v, t); }, loss, rng);
        CHECK_MESSAGE(c.rel_err() < 1e-3, "analytic " << c.analytic << " numeric " << c.numeric);
        CHECK(std::abs(c.analytic) > 1e-8);
        ++checked;
    }
    CHECK(checked >= 20);
}

}  // namespace

TEST_CASE("segmenter config profiles") {
    CHECK(SegmenterConfig::paper().filters(4) == 256);
    CHECK(SegmenterConfig::desk().filters(3) == 64);
    CHECK(SegmenterConfig::tiny().filters(2) == 16);
    auto c = SegmenterConfig::desk();
    c.feature_tap = {"enc9"};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.feature_tap = {"enc0", "bottleneck"};
    CHECK_NOTHROW(c.validate());
    CHECK(c.feature_channels() == 8 + 64);
}

TEST_CASE("segmenter gradients match finite differences (tiny profile)") {
    check_segmenter_gradients(SegmenterConfig::tiny(), 16, 16);
}

TEST_CASE("segmenter gradients with padding and multiple taps") {
    auto cfg = SegmenterConfig::tiny();
    cfg.feature_tap = {"enc0", "bottleneck", "dec1"};
    check_segmenter_gradients(cfg, 13, 10);
}

TEST_CASE("discriminator gradients match finite differences") {
    DiscriminatorConfig dc;
    dc.conv_channels = {3, 4};
    dc.hidden = {8, 6};
    SeededRng init(2);
    Discriminator d(dc, {5, 8, 8}, init);
    SeededRng rng(9);
    Tensor h = random_tensor({3, 5, 8, 8}, rng);
    const Tensor wl = random_tensor({3, 2, 1, 1}, rng);
    auto loss = [&] {
        SeededRng drop(77);
        return dot(d.forward(h, Mode::train, &drop).logits, wl);
    };
    d.zero_grad();
    SeededRng drop(77);
    auto pass = d.forward(h, Mode::train, &drop);
    const Tensor dh = d.backward(pass, wl);
    auto ps = trainable(d);
    const auto g = flat_grad(ps);
    for (int i = 0; i < 20; ++i) {
        auto c = testing::directional(total_size(ps), g, [&](const auto& v, double t) { shift(ps, v, t); }, loss, rng);
        CHECK_MESSAGE(c.rel_err() < 1e-3, "analytic " << c.analytic << " numeric " << c.numeric);
    }
    // input gradient
    std::vector<double> gh(dh.values().begin(), dh.values().end());
    for (int i = 0; i < 20; ++i) {
        auto c = testing::directional(
            h.size(), gh,
            [&](const auto& v, double t) {
                for (std::size_t k = 0; k < h.size(); ++k) h[k] += t * v[k];
            },
            loss, rng);
        CHECK(c.rel_err() < 1e-3);
    }
}

TEST_CASE("freeze contract: frozen parameters are bitwise unchanged by Adam") {
    SeededRng init(3);
    Segmenter f(SegmenterConfig::tiny(), init);
    const std::vector<std::string> sel{"enc0"};
    f.freeze(sel);
    const auto before = f.snapshot();
    Adam opt(f, 1e-2);
    SeededRng rng(1);
    const Tensor x = random_tensor({2, 1, 16, 16}, rng);
    for (int s = 0; s < 3; ++s) {
        f.zero_grad();
        auto pass = f.forward(x, Mode::train);
        Tensor g(pass.probs.shape(), 1.0);
        f.backward(pass, g);
        opt.step();
    }
    const auto after = f.snapshot();
    for (const auto& r : before.records) {
        const auto* a = after.find(r.name);
        REQUIRE(a);
        if (r.name.rfind("enc0.", 0) == 0 && r.trainable) CHECK(a->data == r.data);
    }
    CHECK(after.find("head.weight")->data != before.find("head.weight")->data);
    const std::vector<std::string> bad{"nope"};
    CHECK_THROWS_AS(f.freeze(bad), std::invalid_argument);
}

TEST_CASE("multistep schedule") {
    const std::vector<int> ms{30, 350};
    CHECK(multistep_lr(1e-3, 0.1, ms, 0) == 1e-3);
    CHECK(multistep_lr(1e-3, 0.1, ms, 29) == 1e-3);
    CHECK(multistep_lr(1e-3, 0.1, ms, 30) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(multistep_lr(1e-3, 0.1, ms, 350) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip and hash check") {
    SeededRng init(4);
    Segmenter f(SegmenterConfig::tiny(), init);
    Discriminator d({}, {16, 4, 4}, init);
    Checkpoint ck{"stage2", 0xabcdefULL, f.snapshot(), d.snapshot()};
    const auto path = std::filesystem::temp_directory_path() / "augda_ckpt_test.bin";
    save_checkpoint(path, ck);
    CHECK(load_checkpoint(path) == ck);
    CHECK_THROWS_AS(load_checkpoint(path, 1ULL), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("eval-mode segmentation is deterministic and sized like the input") {
    SeededRng init(8);
    Segmenter f(SegmenterConfig::tiny(), init);
    Grid<double> px(20, 12, 0.0);
    SeededRng rng(2);
    for (auto& v : px.values()) v = rng.uniform();
    Image2D img(px);
    auto [p1, h1] = segment(f, img);
    auto [p2, h2] = segment(f, img);
    CHECK(p1 == p2);
    CHECK(p1.rows() == 20);
    CHECK(p1.cols() == 12);
}
