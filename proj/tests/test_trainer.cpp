#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "augda/eval.hpp"
#include "augda/serialize.hpp"
#include "augda/synthdata.hpp"
#include "augda/trainer.hpp"

using namespace augda;
using namespace augda::train;

namespace {

struct Fixture {
    TrainData data;
    std::vector<LabeledSample> target_test;
};

Fixture small_data(const std::string& target = "B", bool paired = false, std::uint64_t seed = 5) {
    synth::BenchmarkOptions o;
    o.subjects_per_clinic = 6;
    o.slices_per_subject = 2;
    o.rows = o.cols = 32;
    o.seed = seed;
    Fixture fx;
    if (paired) {
        auto ps = synth::build_paired(synth::preset("A"), synth::preset(target), o, 1);
        auto src = synth::build_benchmark({synth::preset("A"), synth::preset("C")}, o).clinic("A");
        fx.data.source_train = gather(src.samples, src.source_split.train);
        fx.data.source_val = gather(src.samples, src.source_split.val);
        for (auto i : ps.split.train)
            fx.data.target_train.emplace_back(ps.pairs[i].first.id, ps.pairs[i].first.image, ps.pairs[i].second.image);
        return fx;
    }
    auto bm = synth::build_benchmark({synth::preset("A"), synth::preset(target)}, o);
    const auto& s = bm.clinic("A");
    const auto& t = bm.clinic(target);
    fx.data.source_train = gather(s.samples, s.source_split.train);
    fx.data.source_val = gather(s.samples, s.source_split.val);
    for (auto i : t.target_split.train) fx.data.target_train.emplace_back(t.samples[i].id, t.samples[i].image);
    fx.data.target_train_labeled = gather(t.samples, t.target_split.train);
    fx.target_test = gather(t.samples, t.target_split.test);
    return fx;
}

TrainerConfig tiny_config() {
    TrainerConfig c;
    c.segmenter = nn::SegmenterConfig::tiny();
    c.schedule.stage1 = {3, {1}, 1e-3, 0.1};
    c.schedule.stage2.warmup_epochs = 2;
    c.schedule.stage2.joint_epochs = 2;
    c.schedule.stage3 = {2, {1}, 1e-3, 0.1};
    c.schedule.batch_size = 2;
    c.schedule.steps_per_epoch = 2;
    c.probe_size = 4;
    return c;
}

bool same_values(const nn::ParameterSnapshot& a, const nn::ParameterSnapshot& b) { return a == b; }

}  // namespace

TEST_CASE("desk schedule divides every epoch count by ten, rounding up") {
    const auto s = StageSchedule::desk();
    CHECK(s.stage1.epochs == 40);
    CHECK(s.stage1.milestones == std::vector<int>{3, 35});
    CHECK(s.stage2.warmup_epochs == 3);
    CHECK(s.stage2.joint_epochs == 10);
    CHECK(s.stage3.epochs == 30);
    CHECK(s.stage3.milestones == std::vector<int>{20, 25});
    CHECK(s.stage2.beta == 0.3);
    CHECK(s.stage2.delta == 0.15);
    CHECK_NOTHROW(s.validate());
    CHECK(StageSchedule::paper().scaled(1) == StageSchedule::paper());

    const auto s7 = StageSchedule::paper().scaled(7);
    CHECK(s7.stage1.epochs == 58);  // ceil(400 / 7)
    CHECK(s7.stage1.milestones == std::vector<int>{5, 50});
    CHECK_NOTHROW(s7.validate());

    // Milestones that would collapse onto one epoch stay distinct.
    StageSchedule p = StageSchedule::paper();
    p.stage3.milestones = {200, 201};
    CHECK(p.scaled(100).stage3.milestones == std::vector<int>{2, 3});
    CHECK_THROWS_AS(StageSchedule::paper().scaled(0), std::invalid_argument);
}

TEST_CASE("schedule validation") {
    auto s = StageSchedule::paper();
    s.stage1.milestones = {350, 30};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = StageSchedule::paper();
    s.stage3.milestones = {200, 300};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = StageSchedule::paper();
    s.stage2.delta = 0.5;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = StageSchedule::paper();
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("gamma is applied once after the first milestone") {
    const auto s = StageSchedule::paper().stage1;
    CHECK(nn::multistep_lr(s.lr, s.gamma, s.milestones, 29) == 1e-3);
    CHECK(nn::multistep_lr(s.lr, s.gamma, s.milestones, 30) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(nn::multistep_lr(s.lr, s.gamma, s.milestones, 349) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(nn::multistep_lr(s.lr, s.gamma, s.milestones, 350) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("variant registry") {
    for (auto v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_AS(parse_variant("tc_geo"), std::invalid_argument);
    CHECK(plan_of(MethodVariant::tc_adversarial).stage2);
    CHECK(plan_of(MethodVariant::tc_adversarial).adversarial_in_stage3);
    CHECK_FALSE(plan_of(MethodVariant::tc).stage2);
    CHECK(plan_of(MethodVariant::tc).stage3);
    CHECK(plan_of(MethodVariant::mean_teacher).mean_teacher);
    CHECK_FALSE(plan_of(MethodVariant::no_adaptation).stage3);
}

TEST_CASE("EMA teacher follows the closed-form recurrence") {
    nn::ParameterSnapshot s;
    s.records.push_back({"w", {1, 1, 1, 3}, {1.0, -2.0, 4.0}, true});
    s.records.push_back({"bn.running_mean", {1, 1, 1, 1}, {0.5}, false});

    SUBCASE("decay 0 copies the student") {
        EmaTeacher t(s, 0.0);
        auto student = s;
        student.records[0].data = {7.0, 8.0, 9.0};
        student.records[1].data = {-1.0};
        t.update(student);
        CHECK(t.snapshot() == student);
    }
    SUBCASE("decay 1 leaves the teacher unchanged") {
        EmaTeacher t(s, 1.0);
        auto student = s;
        student.records[0].data = {7.0, 8.0, 9.0};
        t.update(student);
        CHECK(t.snapshot() == s);
    }
    SUBCASE("constant student: the gap shrinks by decay^k") {
        EmaTeacher t(s, 0.99);
        auto student = s;
        student.records[0].data = {2.0, 0.0, 4.0};
        student.records[1].data = {1.5};
        for (int k = 1; k <= 50; ++k) {
            t.update(student);
            const double f = std::pow(0.99, k);
            CHECK(t.snapshot().records[0].data[0] == doctest::Approx(2.0 + (1.0 - 2.0) * f).epsilon(1e-12));
            CHECK(t.snapshot().records[0].data[1] == doctest::Approx(0.0 + (-2.0 - 0.0) * f).epsilon(1e-12));
            CHECK(t.snapshot().records[0].data[2] == 4.0);
            CHECK(t.snapshot().records[1].data[0] == doctest::Approx(1.5 + (0.5 - 1.5) * f).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(EmaTeacher(s, 1.5), std::invalid_argument);
    EmaTeacher t(s, 0.5);
    auto wrong = s;
    wrong.records.pop_back();
    CHECK_THROWS_AS(t.update(wrong), std::invalid_argument);
}

TEST_CASE("degenerate guard") {
    auto constant = [](double v) { return ProbMask(Grid<double>(16, 16, v)); };
    SUBCASE("all foreground trips after the window") {
        DegenerateGuard g(3);
        std::vector<ProbMask> p{constant(1.0), constant(1.0)};
        CHECK_FALSE(g.observe(p));
        CHECK_FALSE(g.observe(p));
        CHECK(g.observe(p));
        CHECK(g.tripped());
    }
    SUBCASE("all background for W epochs trips") {
        DegenerateGuard g(2);
        std::vector<ProbMask> p{constant(0.0)};
        CHECK_FALSE(g.observe(p));
        CHECK(g.observe(p));
    }
    SUBCASE("an in-range epoch resets the count") {
        DegenerateGuard g(3);
        CHECK_FALSE(g.observe_fraction(0.9));
        CHECK_FALSE(g.observe_fraction(0.9));
        CHECK_FALSE(g.observe_fraction(0.01));
        CHECK(g.consecutive() == 0);
        CHECK_FALSE(g.observe_fraction(0.0));
        CHECK_FALSE(g.observe_fraction(0.0));
        CHECK(g.observe_fraction(0.0));
    }
    SUBCASE("ground-truth lesion fractions of the generator are in range") {
        DegenerateGuard g(1);
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const auto ph = synth::sample_phantom(seed);
            const auto m = synth::lesion_mask(ph);
            const double frac = static_cast<double>(m.count()) / static_cast<double>(m.labels().size());
            std::vector<ProbMask> p{m.as_prob()};
            REQUIRE(DegenerateGuard::foreground_fraction(p) == doctest::Approx(frac).epsilon(1e-15));
            CHECK_FALSE(g.observe(p));
        }
    }
    CHECK(DegenerateGuard::foreground_fraction(std::vector<ProbMask>{constant(0.5)}) == 1.0);  // >= 0.5 convention
    CHECK_THROWS_AS(DegenerateGuard(0), std::invalid_argument);
}

TEST_CASE("stage 1: zero epochs returns the initialisation, empty validation throws") {
    auto fx = small_data();
    auto cfg = tiny_config();
    SeededRng init(1);
    nn::Segmenter f(cfg.segmenter, init);
    const auto before = f.snapshot();
    SeededRng rng(2);
    CHECK_THROWS_AS(run_stage1_supervised(f, fx.data.source_train, {}, cfg, rng), std::invalid_argument);
    cfg.schedule.stage1 = {0, {}, 1e-3, 0.1};
    auto r = run_stage1_supervised(f, fx.data.source_train, fx.data.source_val, cfg, rng);
    CHECK(r.record.epochs_run == 0);
    CHECK(r.epochs.empty());
    CHECK(same_values(f.snapshot(), before));
    CHECK(same_values(r.best, before));
}

TEST_CASE("stage 1 keeps the best validation snapshot and lowers the probe loss") {
    auto fx = small_data();
    auto cfg = tiny_config();
    cfg.schedule.stage1 = {6, {5}, 3e-3, 0.1};
    SeededRng init(1);
    nn::Segmenter f(cfg.segmenter, init);
    SeededRng rng(2);
    auto r = run_stage1_supervised(f, fx.data.source_train, fx.data.source_val, cfg, rng);
    REQUIRE(r.epochs.size() == 6);
    REQUIRE(r.record.best_epoch.has_value());
    double best = -1;
    int arg = -1;
    for (const auto& e : r.epochs)
        if (*e.val_dice > best) {
            best = *e.val_dice;
            arg = e.epoch;
        }
    CHECK(*r.record.best_epoch == arg);
    CHECK(same_values(f.snapshot(), r.best));
    CHECK(mean_dice(f, fx.data.source_val) == best);
    CHECK(*r.epochs.back().probe_objective < *r.epochs.front().probe_objective);
    // lr recorded in the manifest follows the step schedule.
    for (const auto& e : r.epochs) CHECK(e.lr == nn::multistep_lr(3e-3, 0.1, {5}, e.epoch));
    CHECK(r.steps.size() == 12);
}

TEST_CASE("stage 2: the warmup leaves the segmenter bitwise unchanged") {
    auto fx = small_data("extreme");
    auto cfg = tiny_config();
    cfg.schedule.stage2.joint_epochs = 0;
    SeededRng init(1);
    nn::Segmenter f(cfg.segmenter, init);
    const auto before = f.snapshot();
    SeededRng dinit(3);
    const auto fs = f.feature_shape(1, 32, 32);
    nn::Discriminator d(cfg.discriminator, {fs[1], fs[2], fs[3]}, dinit);
    SeededRng rng(4);
    try {
        auto out = run_stage2_adversarial(f, d, fx.data, cfg, rng);
        CHECK(out.record.accuracy_after_warmup.has_value());
    } catch (const Stage2Diagnostic&) {
        // Low accuracy is allowed here; only the freeze matters.
    }
    CHECK(same_values(f.snapshot(), before));
    CHECK_FALSE(f.all_frozen());
}

TEST_CASE("stage 2: indistinguishable domains raise the diagnostic") {
    auto fx = small_data();
    // Target images drawn from the source domain.
    fx.data.target_train.clear();
    for (const auto& s : fx.data.source_train) fx.data.target_train.emplace_back(s.id, s.image);
    auto cfg = tiny_config();
    SeededRng init(1);
    nn::Segmenter f(cfg.segmenter, init);
    const auto fs = f.feature_shape(1, 32, 32);
    SeededRng dinit(3);
    nn::Discriminator d(cfg.discriminator, {fs[1], fs[2], fs[3]}, dinit);
    // Held-out sets identical too: every answer is right on one half and
    // wrong on the other, so balanced accuracy is exactly 0.5.
    fx.data.source_val = fx.data.source_train;
    SeededRng rng(4);
    CHECK_THROWS_AS(run_stage2_adversarial(f, d, fx.data, cfg, rng), Stage2Diagnostic);
}

TEST_CASE("heldout accuracy is class balanced") {
    auto fx = small_data();
    auto cfg = tiny_config();
    SeededRng init(1);
    nn::Segmenter f(cfg.segmenter, init);
    const auto fs = f.feature_shape(1, 32, 32);
    auto dc = cfg.discriminator;
    dc.zero_head = true;  // all-zero logits: argmax is always domain 0
    SeededRng dinit(3);
    nn::Discriminator d(dc, {fs[1], fs[2], fs[3]}, dinit);
    std::vector<Image2D> src, tgt;
    for (const auto& s : fx.data.source_val) src.push_back(s.image);
    for (const auto& s : fx.data.target_train) tgt.push_back(s.image);
    CHECK(heldout_domain_accuracy(f, d, src, tgt) == 0.5);
}

TEST_CASE("mean teacher step: student moves, teacher is the EMA of the new student") {
    auto fx = small_data();
    auto cfg = tiny_config();
    SeededRng init(1);
    nn::Segmenter student(cfg.segmenter, init);
    SeededRng init2(9);
    nn::Segmenter teacher_net(cfg.segmenter, init2);
    teacher_net.load(student.snapshot());
    EmaTeacher teacher(student.snapshot(), 0.99);
    const auto t0 = teacher.snapshot();
    nn::Adam opt(student);
    SeededRng rng(3);
    std::vector<LabeledSample> sb(fx.data.source_train.begin(), fx.data.source_train.begin() + 2);
    std::vector<UnlabeledSample> tb(fx.data.target_train.begin(), fx.data.target_train.begin() + 2);
    auto rec = mean_teacher_step(student, opt, teacher_net, teacher, sb, tb, cfg, rng);
    CHECK(std::isfinite(rec.total));
    const auto s1 = student.snapshot();
    CHECK_FALSE(s1 == t0);
    for (std::size_t i = 0; i < t0.records.size(); ++i)
        for (std::size_t k = 0; k < t0.records[i].data.size(); ++k)
            CHECK(teacher.snapshot().records[i].data[k] ==
                  0.99 * t0.records[i].data[k] + (1.0 - 0.99) * s1.records[i].data[k]);
    CHECK(teacher_net.snapshot() == teacher.snapshot());
}

TEST_CASE("train_method dispatches the stage pipeline per variant") {
    auto fx = small_data("extreme");
    auto cfg = tiny_config();
    Stage1Cache cache;

    auto r0 = train_method(MethodVariant::no_adaptation, fx.data, cfg, 7, &cache);
    REQUIRE(r0.manifest.stages.size() == 1);
    CHECK(r0.manifest.stages[0].name == "stage1");

    auto tc = train_method(MethodVariant::tc, fx.data, cfg, 7, &cache);
    REQUIRE(tc.manifest.stages.size() == 2);
    CHECK(tc.manifest.stages[1].name == "stage3");
    CHECK(cache.hits() == 1);
    CHECK_FALSE(tc.checkpoint.discriminator.has_value());

    auto mt = train_method(MethodVariant::mean_teacher, fx.data, cfg, 7, &cache);
    REQUIRE(mt.manifest.stages.size() == 2);
    CHECK(mt.manifest.stages[1].name == "mean_teacher");

    try {
        auto full = train_method(MethodVariant::tc_adversarial, fx.data, cfg, 7, &cache);
        REQUIRE(full.manifest.stages.size() == 3);
        CHECK(full.manifest.stages[0].name == "stage1");
        CHECK(full.manifest.stages[1].name == "stage2");
        CHECK(full.manifest.stages[2].name == "stage3");
        CHECK(full.checkpoint.discriminator.has_value());
        CHECK(full.manifest.stages[1].frozen == std::vector<std::string>{"*"});
    } catch (const Stage2Diagnostic& e) {
        FAIL("unexpected diagnostic: " << e.what());
    }

    auto up = fx.data;
    up.target_train_labeled.clear();
    CHECK_THROWS_AS(train_method(MethodVariant::supervised_upper, up, cfg, 7), std::invalid_argument);
    auto su = train_method(MethodVariant::supervised_upper, fx.data, cfg, 7, &cache);
    CHECK(su.manifest.stages.size() == 1);
}

TEST_CASE("train_method is deterministic and the stage-1 cache is transparent") {
    auto fx = small_data();
    auto cfg = tiny_config();
    const auto dir = std::filesystem::temp_directory_path() / "augda_test_stage1_cache";
    std::filesystem::remove_all(dir);

    auto a = train_method(MethodVariant::tc, fx.data, cfg, 11);
    auto b = train_method(MethodVariant::tc, fx.data, cfg, 11);
    CHECK(a.manifest.to_jsonl() == b.manifest.to_jsonl());
    CHECK(a.manifest.metrics_jsonl() == b.manifest.metrics_jsonl());
    CHECK(a.checkpoint == b.checkpoint);

    {
        Stage1Cache disk(dir);
        auto c = train_method(MethodVariant::tc, fx.data, cfg, 11, &disk);
        CHECK(c.manifest.to_jsonl() == a.manifest.to_jsonl());
    }
    Stage1Cache reread(dir);  // fresh process view: loads from disk
    auto d = train_method(MethodVariant::tc, fx.data, cfg, 11, &reread);
    CHECK(reread.hits() == 1);
    CHECK(d.manifest.to_jsonl() == a.manifest.to_jsonl());
    CHECK(d.checkpoint == a.checkpoint);

    auto other = train_method(MethodVariant::tc, fx.data, cfg, 12);
    CHECK_FALSE(other.checkpoint == a.checkpoint);
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest lines") {
    auto fx = small_data();
    auto cfg = tiny_config();
    auto r = train_method(MethodVariant::tc, fx.data, cfg, 3);
    std::istringstream in(r.manifest.to_jsonl());
    std::string line;
    std::vector<std::string> types;
    while (std::getline(in, line)) types.push_back(Json::parse(line).at("type").get<std::string>());
    REQUIRE(types.size() >= 5);
    CHECK(types.front() == "header");
    CHECK(types.back() == "result");
    CHECK(std::count(types.begin(), types.end(), "stage") == 2);
    CHECK(std::count(types.begin(), types.end(), "epoch") == 5);
    CHECK(r.manifest.augment.records == 2u * 2u * 2u);  // epochs x steps x batch
    CHECK(r.manifest.steps.size() == 10);
    const auto header = Json::parse(r.manifest.to_jsonl().substr(0, r.manifest.to_jsonl().find('\n')));
    CHECK(header.at("config").get<TrainerConfig>() == cfg);
}

TEST_CASE("paired mode trains with both acquisitions") {
    auto fx = small_data("B", true);
    REQUIRE(fx.data.paired());
    auto cfg = tiny_config();
    auto r = train_method(MethodVariant::tc, fx.data, cfg, 3);
    CHECK(r.manifest.stages.size() == 2);
    CHECK(r.manifest.augment.records == 2u * 2u * 2u * 2u);  // both acquisitions
    cfg.paired_independent_geometry = true;
    auto r2 = train_method(MethodVariant::tc, fx.data, cfg, 3);
    CHECK_FALSE(r2.checkpoint == r.checkpoint);
    cfg.consistency_augmentation = AugmentationSpec::none();
    auto r3 = train_method(MethodVariant::tc, fx.data, cfg, 3);
    CHECK(r3.manifest.augment.records == 2u * 2u * 2u * 2u);
    CHECK(r3.manifest.augment.affine == 0u);

    auto mixed = fx.data;
    mixed.target_train[0].partner.reset();
    CHECK_THROWS_AS(mixed.validate(), std::invalid_argument);
}

TEST_CASE("trainer config JSON round trip rejects unknown keys") {
    TrainerConfig c;
    c.weights.alpha = 0.4;
    c.consistency_augmentation = AugmentationSpec::geometric_only();
    c.schedule.stage3.milestones = {5, 9};
    Json j = c;
    CHECK(j.get<TrainerConfig>() == c);
    j["weights"]["gamma"] = 1.0;
    CHECK_THROWS_AS(j.get<TrainerConfig>(), ConfigError);
    Json k = {{"schedule", {{"stage1", {{"epochs", "ten"}}}}}};
    CHECK_THROWS_AS(k.get<TrainerConfig>(), ConfigError);
    Json named = {{"consistency_augmentation", "mri"}, {"segmenter", "tiny"}};
    const auto n = named.get<TrainerConfig>();
    CHECK(n.consistency_augmentation == AugmentationSpec::mri_only());
    CHECK(n.segmenter == nn::SegmenterConfig::tiny());
}
