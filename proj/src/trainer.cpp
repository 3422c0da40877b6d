#include "augda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "augda/eval.hpp"
#include "augda/serialize.hpp"

namespace augda::train {

using nn::Mode;
using nn::Tensor;

// ---------------------------------------------------------------- schedule

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::vector<int> scale_milestones(const std::vector<int>& m, int divisor) {
    std::vector<int> out;
    for (int x : m) {
        const int s = ceil_div(x, divisor);
        // Two milestones may collapse onto one epoch; keep them distinct so
        // the decay count is preserved.
        out.push_back(out.empty() ? s : std::max(s, out.back() + 1));
    }
    return out;
}

void check_milestones(const std::vector<int>& m, int epochs, const char* what) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] <= 0) throw std::invalid_argument(std::string(what) + ": milestones must be positive");
        if (i && m[i] <= m[i - 1]) throw std::invalid_argument(std::string(what) + ": milestones must increase");
        if (epochs > 0 && m[i] >= epochs)
            throw std::invalid_argument(std::string(what) + ": milestone " + std::to_string(m[i]) +
                                        " not below epoch count " + std::to_string(epochs));
    }
}

}  // namespace

StageSchedule StageSchedule::scaled(int divisor) const {
    if (divisor < 1) throw std::invalid_argument("StageSchedule::scaled: divisor must be >= 1");
    StageSchedule s = *this;
    s.stage1.epochs = ceil_div(stage1.epochs, divisor);
    s.stage1.milestones = scale_milestones(stage1.milestones, divisor);
    s.stage2.warmup_epochs = ceil_div(stage2.warmup_epochs, divisor);
    s.stage2.joint_epochs = ceil_div(stage2.joint_epochs, divisor);
    s.stage3.epochs = ceil_div(stage3.epochs, divisor);
    s.stage3.milestones = scale_milestones(stage3.milestones, divisor);
    return s;
}

void StageSchedule::validate() const {
    if (stage1.epochs < 0 || stage2.warmup_epochs < 0 || stage2.joint_epochs < 0 || stage3.epochs < 0)
        throw std::invalid_argument("schedule: negative epoch count");
    check_milestones(stage1.milestones, stage1.epochs, "stage1");
    check_milestones(stage3.milestones, stage3.epochs, "stage3");
    if (!(stage1.lr > 0) || !(stage3.lr > 0) || !(stage2.segmenter_lr > 0) || !(stage2.disc_lr > 0))
        throw std::invalid_argument("schedule: learning rates must be > 0");
    if (!(stage1.gamma > 0 && stage1.gamma <= 1) || !(stage3.gamma > 0 && stage3.gamma <= 1))
        throw std::invalid_argument("schedule: gamma must be in (0, 1]");
    if (!(stage2.delta > 0 && stage2.delta < 0.5)) throw std::invalid_argument("schedule: delta must be in (0, 0.5)");
    if (stage2.disc_updates < 1) throw std::invalid_argument("schedule: disc_updates must be >= 1");
    if (!(stage2.beta >= 0)) throw std::invalid_argument("schedule: beta must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("schedule: batch_size must be >= 1");
    if (steps_per_epoch < 0) throw std::invalid_argument("schedule: steps_per_epoch must be >= 0");
}

// ---------------------------------------------------------------- variants

std::string variant_name(MethodVariant v) {
    switch (v) {
        case MethodVariant::no_adaptation: return "no_adaptation";
        case MethodVariant::adversarial: return "adversarial";
        case MethodVariant::mean_teacher: return "mean_teacher";
        case MethodVariant::tc: return "tc";
        case MethodVariant::tc_adversarial: return "tc_adversarial";
        case MethodVariant::supervised_upper: return "supervised_upper";
    }
    throw std::logic_error("variant_name");
}

MethodVariant parse_variant(const std::string& name) {
    for (auto v : all_variants())
        if (variant_name(v) == name) return v;
    throw std::invalid_argument("unknown method '" + name + "'");
}

const std::vector<MethodVariant>& all_variants() {
    static const std::vector<MethodVariant> v{MethodVariant::no_adaptation, MethodVariant::adversarial,
                                              MethodVariant::mean_teacher,  MethodVariant::tc,
                                              MethodVariant::tc_adversarial, MethodVariant::supervised_upper};
    return v;
}

VariantPlan plan_of(MethodVariant v) {
    VariantPlan p;
    switch (v) {
        case MethodVariant::no_adaptation: break;
        case MethodVariant::adversarial: p.stage2 = true; break;
        case MethodVariant::mean_teacher: p.mean_teacher = true; break;
        case MethodVariant::tc: p.stage3 = true; break;
        case MethodVariant::tc_adversarial:
            p.stage2 = p.stage3 = p.adversarial_in_stage3 = true;
            break;
        case MethodVariant::supervised_upper: p.pooled_target_labels = true; break;
    }
    return p;
}

// ---------------------------------------------------------------- EMA, guard

EmaTeacher::EmaTeacher(const nn::ParameterSnapshot& student, double decay) : teacher_(student), decay_(decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("EmaTeacher: decay must be in [0, 1]");
}

void EmaTeacher::update(const nn::ParameterSnapshot& student) {
    if (student.records.size() != teacher_.records.size())
        throw std::invalid_argument("EmaTeacher::update: record count mismatch");
    const double a = decay_, b = 1.0 - decay_;
    for (std::size_t i = 0; i < teacher_.records.size(); ++i) {
        auto& t = teacher_.records[i];
        const auto& s = student.records[i];
        if (t.name != s.name || t.data.size() != s.data.size())
            throw std::invalid_argument("EmaTeacher::update: record '" + s.name + "' does not match");
        for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = a * t.data[k] + b * s.data[k];
    }
}

DegenerateGuard::DegenerateGuard(int window) : window_(window) {
    if (window < 1) throw std::invalid_argument("DegenerateGuard: window must be >= 1");
}

double DegenerateGuard::foreground_fraction(std::span<const ProbMask> preds) {
    if (preds.empty()) throw std::invalid_argument("DegenerateGuard: empty probe batch");
    double sum = 0.0;
    for (const auto& p : preds) {
        std::size_t on = 0;
        for (double v : p.probs().values()) on += v >= 0.5;
        sum += static_cast<double>(on) / static_cast<double>(p.probs().size());
    }
    return sum / static_cast<double>(preds.size());
}

bool DegenerateGuard::observe(std::span<const ProbMask> preds) { return observe_fraction(foreground_fraction(preds)); }

bool DegenerateGuard::observe_fraction(double fraction) {
    consecutive_ = out_of_range(fraction) ? consecutive_ + 1 : 0;
    if (consecutive_ >= window_) tripped_ = true;
    return tripped_;
}

// ---------------------------------------------------------------- config, data

void TrainerConfig::validate() const {
    segmenter.validate();
    schedule.validate();
    weights.validate();
    if (discriminator.n_domains < 2) throw std::invalid_argument("trainer: discriminator needs >= 2 domains");
    if (!(ema_decay >= 0 && ema_decay <= 1)) throw std::invalid_argument("trainer: ema_decay must be in [0, 1]");
    if (guard_window < 1) throw std::invalid_argument("trainer: guard_window must be >= 1");
    if (probe_size < 1) throw std::invalid_argument("trainer: probe_size must be >= 1");
}

bool TrainData::paired() const {
    return !target_train.empty() && std::all_of(target_train.begin(), target_train.end(),
                                                [](const UnlabeledSample& s) { return s.partner.has_value(); });
}

void TrainData::validate() const {
    if (source_train.empty()) throw std::invalid_argument("train data: no labeled source training samples");
    const bool any_partner = std::any_of(target_train.begin(), target_train.end(),
                                         [](const UnlabeledSample& s) { return s.partner.has_value(); });
    if (any_partner && !paired()) throw std::invalid_argument("train data: only some target samples are paired");
}

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ULL;
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ULL;
        }
    }
    void str(const std::string& s) {
        const auto n = static_cast<std::uint64_t>(s.size());
        bytes(&n, sizeof n);
        bytes(s.data(), s.size());
    }
    void image(const Image2D& im) {
        const std::uint64_t dims[2] = {im.rows(), im.cols()};
        bytes(dims, sizeof dims);
        bytes(im.pixels().values().data(), im.pixels().size() * sizeof(double));
        const double sp[2] = {im.spacing().row_mm, im.spacing().col_mm};
        bytes(sp, sizeof sp);
    }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::uint64_t TrainData::fingerprint() const {
    Fnv f;
    auto labeled = [&](const std::vector<LabeledSample>& v) {
        f.u64(v.size());
        for (const auto& s : v) {
            f.str(s.id);
            f.image(s.image);
            f.bytes(s.mask.labels().values().data(), s.mask.labels().size());
        }
    };
    labeled(source_train);
    labeled(source_val);
    f.u64(target_train.size());
    for (const auto& s : target_train) {
        f.str(s.id);
        f.image(s.image);
        if (s.partner) f.image(*s.partner);
    }
    labeled(target_train_labeled);
    return f.h;
}

// ---------------------------------------------------------------- manifest

std::string RunManifest::to_jsonl() const {
    std::ostringstream os;
    os << Json{{"type", "header"},
               {"variant", variant},
               {"seed", seed},
               {"config_hash", hex64(config_hash)},
               {"data_fingerprint", hex64(data_fingerprint)},
               {"config", config}}
              .dump()
       << '\n';
    for (const auto& s : stages) {
        Json j = s;
        j["type"] = "stage";
        os << j.dump() << '\n';
    }
    for (const auto& e : epochs) {
        Json j = e;
        j["type"] = "epoch";
        os << j.dump() << '\n';
    }
    Json a = augment;
    a["type"] = "augment";
    os << a.dump() << '\n';
    os << Json{{"type", "checkpoints"}, {"paths", checkpoints}}.dump() << '\n';
    os << Json{{"type", "result"}, {"degenerate", degenerate}, {"stages", stages.size()}}.dump() << '\n';
    return os.str();
}

std::string RunManifest::metrics_jsonl() const {
    std::ostringstream os;
    for (const auto& s : steps) {
        Json j = s;
        j["type"] = "step";
        os << j.dump() << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- helpers

namespace {

void record_augment(AugmentSummary& s, const AppliedRecord& r) {
    ++s.records;
    s.affine += r.affine.has_value();
    s.bias += r.bias.has_value();
    s.motion += r.motion.has_value();
    Json j = r;
    s.hash = splitmix64(s.hash ^ fnv1a64(j.dump()));
}

void merge_augment(AugmentSummary& into, const AugmentSummary& from) {
    into.records += from.records;
    into.affine += from.affine;
    into.bias += from.bias;
    into.motion += from.motion;
    into.hash = splitmix64(into.hash ^ from.hash);
}

/// Reshuffled sampling without replacement over [0, n).
class Cursor {
public:
    Cursor(std::size_t n, SeededRng rng) : n_(n), rng_(rng) {
        if (n == 0) throw std::invalid_argument("Cursor: empty set");
        reshuffle();
    }
    std::vector<std::size_t> next(std::size_t k) {
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            if (pos_ == perm_.size()) reshuffle();
            out.push_back(perm_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        perm_.resize(n_);
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng_.below(i)]);
        pos_ = 0;
    }
    std::size_t n_;
    SeededRng rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
};

int steps_per_epoch(const TrainerConfig& cfg, std::size_t n_source) {
    const auto& s = cfg.schedule;
    if (s.steps_per_epoch > 0) return s.steps_per_epoch;
    return static_cast<int>((n_source + static_cast<std::size_t>(s.batch_size) - 1) /
                            static_cast<std::size_t>(s.batch_size));
}

std::size_t batch_of(const TrainerConfig& cfg, std::size_t n) {
    return std::min<std::size_t>(static_cast<std::size_t>(cfg.schedule.batch_size), n);
}

/// Draw source for one augmented sample.
SeededRng draw_rng(SeededRng& base, std::uint64_t batch, std::uint64_t sample, SeedPolicy policy) {
    const std::uint64_t key = policy == SeedPolicy::per_batch ? batch : (batch << 20) + sample;
    return base.child(key);
}

struct LabeledBatch {
    Tensor x, y;
};

LabeledBatch labeled_batch(const std::vector<LabeledSample>& pool, const std::vector<std::size_t>& idx,
                           const AugmentationSpec& aug, SeededRng& aug_rng, std::uint64_t batch_no,
                           AugmentSummary& summary) {
    std::vector<Image2D> images;
    std::vector<BinMask> masks;
    images.reserve(idx.size());
    masks.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& s = pool[idx[k]];
        if (aug.empty()) {
            images.push_back(s.image);
            masks.push_back(s.mask);
            continue;
        }
        SeededRng r = draw_rng(aug_rng, batch_no, k, aug.seed_policy);
        auto [im, rec] = compose_and_apply(s.image, aug, r);
        images.push_back(std::move(im));
        masks.push_back(rec.affine ? apply_affine_to_mask(s.mask, *rec.affine) : s.mask);
        record_augment(summary, rec);
    }
    return {nn::to_tensor(images), stack_masks(masks)};
}

Tensor concat_batch(const std::vector<const Tensor*>& parts) {
    int n = 0;
    for (const auto* p : parts) n += p->n();
    const auto& s = parts.front()->shape();
    Tensor out(n, s[1], s[2], s[3]);
    std::size_t off = 0;
    for (const auto* p : parts) {
        if (p->c() != s[1] || p->h() != s[2] || p->w() != s[3])
            throw std::invalid_argument("concat_batch: shape mismatch");
        std::copy(p->data(), p->data() + p->size(), out.data() + off);
        off += p->size();
    }
    return out;
}

Tensor slice_batch(const Tensor& t, int first, int count) {
    Tensor out(count, t.c(), t.h(), t.w());
    std::copy(t.sample(first), t.sample(first) + out.size(), out.data());
    return out;
}

std::vector<int> domain_labels(const std::vector<int>& counts) {
    std::vector<int> out;
    for (std::size_t d = 0; d < counts.size(); ++d) out.insert(out.end(), static_cast<std::size_t>(counts[d]), static_cast<int>(d));
    return out;
}

std::vector<Image2D> images_of(const std::vector<LabeledSample>& v) {
    std::vector<Image2D> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.image);
    return out;
}

/// Target images for domain-level work: in paired mode both acquisitions.
std::vector<Image2D> target_images(const std::vector<UnlabeledSample>& v) {
    std::vector<Image2D> out;
    for (const auto& s : v) {
        out.push_back(s.image);
        if (s.partner) out.push_back(*s.partner);
    }
    return out;
}

std::vector<Image2D> target_batch_images(const TrainData& data, const std::vector<std::size_t>& idx, bool paired) {
    std::vector<Image2D> out;
    for (auto i : idx) {
        out.push_back(data.target_train[i].image);
        if (paired) out.push_back(*data.target_train[i].partner);
    }
    return out;
}

/// Eval-mode features of a set of images, in chunks.
Tensor features_of(nn::Segmenter& f, std::span<const Image2D> images, int chunk) {
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(chunk)) {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(chunk), images.size() - i);
        parts.push_back(f.forward(nn::to_tensor(images.subspan(i, n)), Mode::eval).features);
    }
    std::vector<const Tensor*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat_batch(ptrs);
}

/// Two views of a target sample for the consistency term. The prediction on
/// view 1 is mapped onto view 2's grid by `map` (identity when absent).
struct ConsistencyViews {
    std::vector<Image2D> first, second;
    std::vector<std::optional<SamplingMap>> map;
};

ConsistencyViews make_views(const TrainData& data, const std::vector<std::size_t>& idx, const TrainerConfig& cfg,
                            SeededRng& aug_rng, std::uint64_t batch_no, AugmentSummary* summary) {
    const auto& spec = cfg.consistency_augmentation;
    const bool paired = data.paired();
    ConsistencyViews v;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& s = data.target_train[idx[k]];
        const auto rows = s.image.rows(), cols = s.image.cols();
        SeededRng r = draw_rng(aug_rng, batch_no, k, spec.seed_policy);
        if (!paired) {
            auto [aug, rec] = compose_and_apply(s.image, spec, r);
            if (summary) record_augment(*summary, rec);
            v.first.push_back(s.image);
            v.second.push_back(std::move(aug));
            v.map.push_back(cfg.align_spatial ? spatial_map(rec, rows, cols) : std::nullopt);
            continue;
        }
        // Paired: both acquisitions are augmented; view 1 is acquisition a.
        SeededRng ra = r.child("a"), rb = r.child("b");
        auto [aug_a, rec_a] = compose_and_apply(s.image, spec, ra);
        Image2D aug_b;
        AppliedRecord rec_b;
        if (cfg.paired_independent_geometry || !rec_a.affine) {
            std::tie(aug_b, rec_b) = compose_and_apply(*s.partner, spec, rb);
        } else {
            AugmentationSpec rest = spec;
            rest.geometric = false;
            std::tie(aug_b, rec_b) = compose_and_apply(apply_affine(*s.partner, *rec_a.affine), rest, rb);
            rec_b.affine = rec_a.affine;
        }
        if (summary) {
            record_augment(*summary, rec_a);
            record_augment(*summary, rec_b);
        }
        std::optional<SamplingMap> m;
        if (cfg.paired_independent_geometry && (rec_a.affine || rec_b.affine)) {
            const Mat3 ta = rec_a.affine ? rec_a.affine->matrix(rows, cols) : Mat3::identity();
            const Mat3 tb = rec_b.affine ? rec_b.affine->matrix(rows, cols) : Mat3::identity();
            m.emplace(rows, cols, tb * ta.inverse(), Interpolation::nearest);
        }
        v.first.push_back(std::move(aug_a));
        v.second.push_back(std::move(aug_b));
        v.map.push_back(std::move(m));
    }
    return v;
}

/// Applies per-sample maps to a [N,1,H,W] tensor.
Tensor map_forward(const Tensor& t, const std::vector<std::optional<SamplingMap>>& maps) {
    Tensor out = t;
    const auto plane = t.plane();
    for (int n = 0; n < t.n(); ++n) {
        const auto& m = maps[static_cast<std::size_t>(n)];
        if (!m) continue;
        m->apply({t.sample(n), plane}, {out.sample(n), plane});
    }
    return out;
}

Tensor map_transpose(const Tensor& g, const std::vector<std::optional<SamplingMap>>& maps) {
    Tensor out(g.shape());
    const auto plane = g.plane();
    for (int n = 0; n < g.n(); ++n) {
        const auto& m = maps[static_cast<std::size_t>(n)];
        if (!m) std::copy(g.sample(n), g.sample(n) + plane, out.sample(n));
        else m->apply_transpose({g.sample(n), plane}, {out.sample(n), plane});
    }
    return out;
}

void scale(Tensor& t, double s) {
    for (auto& v : t.values()) v *= s;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::array<int, 3> per_sample_feature_shape(const nn::Segmenter& f, const Image2D& im) {
    const auto s = f.feature_shape(1, static_cast<int>(im.rows()), static_cast<int>(im.cols()));
    return {s[1], s[2], s[3]};
}

/// One discriminator update on detached features, then the adversarial
/// gradient for the segmenter: returns (-beta * dL/dh, disc loss, adv loss).
struct AdversarialStep {
    Tensor d_features;
    double disc_loss = 0.0;
    double adv_loss = 0.0;
};

AdversarialStep adversarial_step(nn::Discriminator& d, nn::Adam& dopt, const Tensor& h, const std::vector<int>& dom,
                                 int disc_updates, double beta, SeededRng& drop) {
    AdversarialStep out;
    for (int u = 0; u < disc_updates; ++u) {
        auto dp = d.forward(h, Mode::train, &drop);
        Tensor g;
        out.disc_loss = adversarial_loss(dp.logits, dom, &g);
        d.zero_grad();
        d.backward(dp, g);
        dopt.step();
    }
    auto dp = d.forward(h, Mode::train, &drop);
    Tensor g;
    out.adv_loss = adversarial_loss(dp.logits, dom, &g);
    out.d_features = d.backward(dp, g);
    d.zero_grad();
    scale(out.d_features, -beta);
    return out;
}

}  // namespace

nn::Tensor stack_masks(std::span<const BinMask> masks) {
    if (masks.empty()) throw std::invalid_argument("stack_masks: no masks");
    const int H = static_cast<int>(masks[0].rows()), W = static_cast<int>(masks[0].cols());
    Tensor t(static_cast<int>(masks.size()), 1, H, W);
    for (std::size_t n = 0; n < masks.size(); ++n) {
        if (static_cast<int>(masks[n].rows()) != H || static_cast<int>(masks[n].cols()) != W)
            throw std::invalid_argument("stack_masks: masks differ in size");
        const auto& v = masks[n].labels().values();
        double* dst = t.sample(static_cast<int>(n));
        for (std::size_t i = 0; i < v.size(); ++i) dst[i] = v[i];
    }
    return t;
}

std::vector<ProbMask> predict(nn::Segmenter& f, std::span<const Image2D> images, int chunk) {
    std::vector<ProbMask> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(chunk)) {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(chunk), images.size() - i);
        auto pass = f.forward(nn::to_tensor(images.subspan(i, n)), Mode::eval);
        for (int k = 0; k < static_cast<int>(n); ++k) out.push_back(nn::to_prob_mask(pass.probs, k));
    }
    return out;
}

double mean_dice(nn::Segmenter& f, std::span<const LabeledSample> samples, int chunk) {
    if (samples.empty()) throw std::invalid_argument("mean_dice: no samples");
    std::vector<Image2D> images;
    for (const auto& s : samples) images.push_back(s.image);
    const auto preds = predict(f, images, chunk);
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) sum += eval::dice_score(binarize(preds[i]), samples[i].mask);
    return sum / static_cast<double>(samples.size());
}

double heldout_domain_accuracy(nn::Segmenter& f, nn::Discriminator& d, std::span<const Image2D> source,
                               std::span<const Image2D> target, int chunk) {
    if (source.empty() || target.empty()) throw std::invalid_argument("heldout_domain_accuracy: empty domain");
    // Class-balanced: a discriminator that always answers one domain scores 0.5.
    double acc = 0.0;
    int label = 0;
    for (auto set : {source, target}) {
        const Tensor h = features_of(f, set, chunk);
        const auto logits = d.forward(h, Mode::eval).logits;
        const std::vector<int> dom(static_cast<std::size_t>(h.n()), label);
        acc += domain_accuracy(logits, dom);
        ++label;
    }
    return acc / 2.0;
}

// ---------------------------------------------------------------- stage 1

Stage1Result run_stage1_supervised(nn::Segmenter& f, const std::vector<LabeledSample>& labeled,
                                   const std::vector<LabeledSample>& val, const TrainerConfig& cfg, SeededRng& rng) {
    if (labeled.empty()) throw std::invalid_argument("stage 1: no labeled training samples");
    if (val.empty()) throw std::invalid_argument("stage 1: validation set is empty");
    const auto& s1 = cfg.schedule.stage1;
    Stage1Result res;
    res.record.name = "stage1";
    res.best = f.snapshot();
    if (s1.epochs == 0) return res;

    nn::Adam opt(f, s1.lr);
    Cursor cursor(labeled.size(), rng.child("batches"));
    SeededRng drop = rng.child("dropout");
    SeededRng aug = rng.child("aug");
    const int steps = steps_per_epoch(cfg, labeled.size());
    const auto B = batch_of(cfg, labeled.size());

    // Fixed probe batch for the training-loss trace.
    std::vector<std::size_t> probe_idx(std::min<std::size_t>(static_cast<std::size_t>(cfg.probe_size), labeled.size()));
    std::iota(probe_idx.begin(), probe_idx.end(), std::size_t{0});
    AugmentSummary unused;
    SeededRng no_aug(0);
    const auto probe = labeled_batch(labeled, probe_idx, AugmentationSpec::none(), no_aug, 0, unused);

    double best = -1.0;
    int step_no = 0;
    std::uint64_t batch_no = 0;
    for (int epoch = 0; epoch < s1.epochs; ++epoch) {
        const double lr = nn::multistep_lr(s1.lr, s1.gamma, s1.milestones, epoch);
        opt.set_lr(lr);
        std::vector<double> sups;
        for (int st = 0; st < steps; ++st) {
            auto b = labeled_batch(labeled, cursor.next(B), cfg.supervised_augmentation, aug, batch_no++, res.augment);
            auto pass = f.forward(b.x, Mode::train, &drop);
            Tensor g;
            const double sup = soft_dice_loss(pass.probs, b.y, cfg.weights.epsilon, &g);
            f.zero_grad();
            f.backward(pass, g);
            opt.step();
            sups.push_back(sup);
            res.steps.push_back({"stage1", step_no++, sup, 0.0, 0.0, sup});
        }
        EpochRecord er;
        er.stage = "stage1";
        er.epoch = epoch;
        er.lr = lr;
        er.sup = er.total = mean_of(sups);
        er.val_dice = mean_dice(f, val);
        er.probe_objective =
            soft_dice_loss(f.forward(probe.x, Mode::eval).probs, probe.y, cfg.weights.epsilon, nullptr);
        res.epochs.push_back(er);
        if (*er.val_dice > best) {
            best = *er.val_dice;
            res.best = f.snapshot();
            res.record.best_epoch = epoch;
        }
        ++res.record.epochs_run;
    }
    f.load(res.best);
    return res;
}

// ---------------------------------------------------------------- stage 2

StageOutput run_stage2_adversarial(nn::Segmenter& f, nn::Discriminator& d, const TrainData& data,
                                   const TrainerConfig& cfg, SeededRng& rng) {
    if (data.target_train.empty()) throw std::invalid_argument("stage 2: no target training samples");
    if (data.source_val.empty()) throw std::invalid_argument("stage 2: source validation set is empty");
    const auto& s2 = cfg.schedule.stage2;
    const bool paired = data.paired();
    StageOutput out;
    out.record.name = "stage2";
    out.record.frozen = {"*"};

    Cursor src(data.source_train.size(), rng.child("source"));
    Cursor tgt(data.target_train.size(), rng.child("target"));
    SeededRng fdrop = rng.child("seg_dropout"), ddrop = rng.child("disc_dropout"), aug = rng.child("aug");
    const int steps = steps_per_epoch(cfg, data.source_train.size());
    const auto B = batch_of(cfg, data.source_train.size());
    // Paired batches hold both acquisitions of half as many subjects.
    const auto Bt = std::min<std::size_t>(paired ? (B + 1) / 2 : B, data.target_train.size());
    const auto val_images = images_of(data.source_val);
    const auto tgt_images = target_images(data.target_train);
    nn::Adam dopt(d, s2.disc_lr);

    // Phase A: frozen segmenter, eval-mode features.
    f.freeze_all();
    int step_no = 0;
    for (int epoch = 0; epoch < s2.warmup_epochs; ++epoch) {
        std::vector<double> losses;
        for (int st = 0; st < steps; ++st) {
            std::vector<Image2D> xs;
            for (auto i : src.next(B)) xs.push_back(data.source_train[i].image);
            const auto xt = target_batch_images(data, tgt.next(Bt), paired);
            const Tensor hs = f.forward(nn::to_tensor(xs), Mode::eval).features;
            const Tensor ht = f.forward(nn::to_tensor(xt), Mode::eval).features;
            const Tensor h = concat_batch({&hs, &ht});
            const auto dom = domain_labels({hs.n(), ht.n()});
            auto dp = d.forward(h, Mode::train, &ddrop);
            Tensor g;
            const double l = adversarial_loss(dp.logits, dom, &g);
            d.zero_grad();
            d.backward(dp, g);
            dopt.step();
            losses.push_back(l);
            out.steps.push_back({"stage2_warmup", step_no++, 0.0, 0.0, l, 0.0});
        }
        EpochRecord er;
        er.stage = "stage2_warmup";
        er.epoch = epoch;
        er.lr = s2.disc_lr;
        er.adv = mean_of(losses);
        er.disc_accuracy = heldout_domain_accuracy(f, d, val_images, tgt_images);
        out.epochs.push_back(er);
    }
    const double warm = heldout_domain_accuracy(f, d, val_images, tgt_images);
    out.record.accuracy_after_warmup = warm;
    f.unfreeze_all();
    if (warm <= 0.5 + s2.delta) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "stage 2: discriminator accuracy %.3f after warmup does not exceed %.3f; the features are "
                      "already domain-invariant or the feature tap is misconfigured",
                      warm, 0.5 + s2.delta);
        throw Stage2Diagnostic(buf, warm);
    }

    // Phase B: alternating updates until fooled.
    nn::Adam fopt(f, s2.segmenter_lr);
    double acc = warm;
    for (int epoch = 0; epoch < s2.joint_epochs; ++epoch) {
        std::vector<double> sups, advs, totals;
        for (int st = 0; st < steps; ++st) {
            auto b = labeled_batch(data.source_train, src.next(B), cfg.supervised_augmentation, aug,
                                   static_cast<std::uint64_t>(step_no), out.augment);
            const auto xt = target_batch_images(data, tgt.next(Bt), paired);
            auto ps = f.forward(b.x, Mode::train, &fdrop);
            auto pt = f.forward(nn::to_tensor(xt), Mode::train, &fdrop);
            const Tensor h = concat_batch({&ps.features, &pt.features});
            const auto dom = domain_labels({ps.features.n(), pt.features.n()});
            auto as = adversarial_step(d, dopt, h, dom, s2.disc_updates, s2.beta, ddrop);

            Tensor gs;
            const double sup = soft_dice_loss(ps.probs, b.y, cfg.weights.epsilon, &gs);
            const Tensor dhs = slice_batch(as.d_features, 0, ps.features.n());
            const Tensor dht = slice_batch(as.d_features, ps.features.n(), pt.features.n());
            f.zero_grad();
            f.backward(ps, gs, &dhs);
            f.backward(pt, Tensor(pt.probs.shape()), &dht);
            fopt.step();
            const double total = sup - s2.beta * as.adv_loss;
            sups.push_back(sup);
            advs.push_back(as.adv_loss);
            totals.push_back(total);
            out.steps.push_back({"stage2", step_no++, sup, 0.0, as.adv_loss, total});
        }
        acc = heldout_domain_accuracy(f, d, val_images, tgt_images);
        EpochRecord er;
        er.stage = "stage2";
        er.epoch = epoch;
        er.lr = s2.segmenter_lr;
        er.sup = mean_of(sups);
        er.adv = mean_of(advs);
        er.total = mean_of(totals);
        er.disc_accuracy = acc;
        out.epochs.push_back(er);
        ++out.record.epochs_run;
        if (std::abs(acc - 0.5) <= s2.delta) {
            out.record.fooled = true;
            break;
        }
    }
    out.record.accuracy_final = acc;
    return out;
}

// ---------------------------------------------------------------- stage 3

namespace {

struct Probe {
    LabeledBatch source;
    ConsistencyViews views;
    std::vector<Image2D> guard_images;
};

Probe make_probe(const TrainData& data, const TrainerConfig& cfg, SeededRng& rng) {
    Probe p;
    const auto ns = std::min<std::size_t>(static_cast<std::size_t>(cfg.probe_size), data.source_train.size());
    const auto nt = std::min<std::size_t>(static_cast<std::size_t>(cfg.probe_size), data.target_train.size());
    std::vector<std::size_t> si(ns), ti(nt);
    std::iota(si.begin(), si.end(), std::size_t{0});
    std::iota(ti.begin(), ti.end(), std::size_t{0});
    AugmentSummary unused;
    p.source = labeled_batch(data.source_train, si, AugmentationSpec::none(), rng, 0, unused);
    SeededRng vr = rng.child("views");
    p.views = make_views(data, ti, cfg, vr, 0, nullptr);
    for (auto i : ti) p.guard_images.push_back(data.target_train[i].image);
    return p;
}

/// sup + alpha * cons - beta * adv on the fixed probe, all in eval mode.
double probe_objective(nn::Segmenter& f, nn::Discriminator* d, const Probe& p, const TrainerConfig& cfg,
                       double beta) {
    const double eps = cfg.weights.epsilon;
    auto ps = f.forward(p.source.x, Mode::eval);
    const double sup = soft_dice_loss(ps.probs, p.source.y, eps, nullptr);
    auto p1 = f.forward(nn::to_tensor(p.views.first), Mode::eval);
    auto p2 = f.forward(nn::to_tensor(p.views.second), Mode::eval);
    const double cons = consistency_loss(map_forward(p1.probs, p.views.map), p2.probs, eps, nullptr, nullptr);
    double adv = 0.0;
    if (d) {
        const Tensor h = concat_batch({&ps.features, &p1.features});
        adv = adversarial_loss(d->forward(h, Mode::eval).logits, domain_labels({ps.features.n(), p1.features.n()}));
    }
    return sup + cfg.weights.alpha * cons - beta * adv;
}

}  // namespace

StageOutput run_stage3_consistency(nn::Segmenter& f, nn::Discriminator* d, const TrainData& data,
                                   const TrainerConfig& cfg, SeededRng& rng) {
    if (data.target_train.empty()) throw std::invalid_argument("stage 3: no target training samples");
    const auto& s3 = cfg.schedule.stage3;
    const double alpha = cfg.weights.alpha;
    const double beta = d ? cfg.weights.beta : 0.0;
    const double eps = cfg.weights.epsilon;
    const bool paired = data.paired();
    StageOutput out;
    out.record.name = "stage3";

    Cursor src(data.source_train.size(), rng.child("source"));
    Cursor tgt(data.target_train.size(), rng.child("target"));
    SeededRng fdrop = rng.child("seg_dropout"), ddrop = rng.child("disc_dropout");
    SeededRng sup_aug = rng.child("sup_aug"), cons_aug = rng.child("cons_aug");
    SeededRng probe_rng = rng.child("probe");
    const int steps = steps_per_epoch(cfg, data.source_train.size());
    const auto B = batch_of(cfg, data.source_train.size());
    const auto Bt = std::min<std::size_t>(B, data.target_train.size());
    const Probe probe = make_probe(data, cfg, probe_rng);
    std::vector<Image2D> val_images, tgt_images;
    if (d) {
        val_images = data.source_val.empty() ? images_of(data.source_train) : images_of(data.source_val);
        tgt_images = target_images(data.target_train);
    }

    nn::Adam fopt(f, s3.lr);
    std::optional<nn::Adam> dopt;
    if (d) dopt.emplace(*d, cfg.schedule.stage2.disc_lr);
    DegenerateGuard guard(cfg.guard_window);
    int step_no = 0;
    for (int epoch = 0; epoch < s3.epochs; ++epoch) {
        const double lr = nn::multistep_lr(s3.lr, s3.gamma, s3.milestones, epoch);
        fopt.set_lr(lr);
        std::vector<double> sups, conss, advs, totals;
        for (int st = 0; st < steps; ++st) {
            const auto batch_no = static_cast<std::uint64_t>(step_no);
            auto b = labeled_batch(data.source_train, src.next(B), cfg.supervised_augmentation, sup_aug, batch_no,
                                   out.augment);
            const auto views = make_views(data, tgt.next(Bt), cfg, cons_aug, batch_no, &out.augment);
            auto ps = f.forward(b.x, Mode::train, &fdrop);
            auto p1 = f.forward(nn::to_tensor(views.first), Mode::train, &fdrop);
            auto p2 = f.forward(nn::to_tensor(views.second), Mode::train, &fdrop);

            Tensor gs, g_al, g2;
            const double sup = soft_dice_loss(ps.probs, b.y, eps, &gs);
            const double cons = consistency_loss(map_forward(p1.probs, views.map), p2.probs, eps, &g_al, &g2);
            Tensor g1 = map_transpose(g_al, views.map);
            scale(g1, alpha);
            scale(g2, alpha);

            double adv = 0.0;
            std::optional<Tensor> dhs, dh1, dh2;
            if (d) {
                std::vector<const Tensor*> parts{&ps.features, &p1.features};
                std::vector<int> counts{ps.features.n(), p1.features.n()};
                if (paired) {
                    parts.push_back(&p2.features);
                    counts[1] += p2.features.n();
                }
                const Tensor h = concat_batch(parts);
                auto as = adversarial_step(*d, *dopt, h, domain_labels(counts), cfg.schedule.stage2.disc_updates,
                                           beta, ddrop);
                adv = as.adv_loss;
                const int ns = ps.features.n(), n1 = p1.features.n();
                dhs = slice_batch(as.d_features, 0, ns);
                dh1 = slice_batch(as.d_features, ns, n1);
                if (paired) dh2 = slice_batch(as.d_features, ns + n1, p2.features.n());
            }
            const double total = total_loss(sup, cons, adv, LossWeights{alpha, beta, eps});
            f.zero_grad();
            f.backward(ps, gs, dhs ? &*dhs : nullptr);
            f.backward(p1, g1, dh1 ? &*dh1 : nullptr);
            f.backward(p2, g2, dh2 ? &*dh2 : nullptr);
            fopt.step();
            sups.push_back(sup);
            conss.push_back(cons);
            advs.push_back(adv);
            totals.push_back(total);
            out.steps.push_back({"stage3", step_no++, sup, cons, adv, total});
        }
        EpochRecord er;
        er.stage = "stage3";
        er.epoch = epoch;
        er.lr = lr;
        er.sup = mean_of(sups);
        er.cons = mean_of(conss);
        er.adv = mean_of(advs);
        er.total = mean_of(totals);
        er.probe_objective = probe_objective(f, d, probe, cfg, beta);
        if (d) er.disc_accuracy = heldout_domain_accuracy(f, *d, val_images, tgt_images);
        const auto preds = predict(f, probe.guard_images);
        er.fg_fraction = DegenerateGuard::foreground_fraction(preds);
        out.epochs.push_back(er);
        ++out.record.epochs_run;
        if (guard.observe_fraction(*er.fg_fraction)) {
            out.record.degenerate = true;
            break;
        }
    }
    if (d) out.record.accuracy_final = out.epochs.empty() ? std::nullopt : out.epochs.back().disc_accuracy;
    return out;
}

// ---------------------------------------------------------------- mean teacher

StepRecord mean_teacher_step(nn::Segmenter& student, nn::Adam& opt, nn::Segmenter& teacher_net, EmaTeacher& teacher,
                             std::span<const LabeledSample> source_batch, std::span<const UnlabeledSample> target_batch,
                             const TrainerConfig& cfg, SeededRng& rng, AugmentSummary* summary) {
    if (source_batch.empty() || target_batch.empty()) throw std::invalid_argument("mean_teacher_step: empty batch");
    const double eps = cfg.weights.epsilon, alpha = cfg.weights.alpha;
    TrainData view_data;
    view_data.target_train.assign(target_batch.begin(), target_batch.end());
    std::vector<std::size_t> idx(target_batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SeededRng vr = rng.child("views");
    const auto views = make_views(view_data, idx, cfg, vr, 0, summary);

    std::vector<Image2D> xs;
    std::vector<BinMask> ys;
    for (const auto& s : source_batch) {
        xs.push_back(s.image);
        ys.push_back(s.mask);
    }
    SeededRng drop = rng.child("dropout");
    auto ps = student.forward(nn::to_tensor(xs), Mode::train, &drop);
    Tensor gs;
    const double sup = soft_dice_loss(ps.probs, stack_masks(ys), eps, &gs);

    // Teacher sees view 1; its aligned prediction is a constant target.
    const Tensor t_aligned = map_forward(teacher_net.forward(nn::to_tensor(views.first), Mode::eval).probs, views.map);
    auto p2 = student.forward(nn::to_tensor(views.second), Mode::train, &drop);
    Tensor g2;
    const double cons = consistency_loss(t_aligned, p2.probs, eps, nullptr, &g2);
    scale(g2, alpha);
    student.zero_grad();
    student.backward(ps, gs);
    student.backward(p2, g2);
    opt.step();

    teacher.update(student.snapshot());
    teacher_net.load(teacher.snapshot());
    return {"mean_teacher", 0, sup, cons, 0.0, sup + alpha * cons};
}

StageOutput run_mean_teacher(nn::Segmenter& f, const TrainData& data, const TrainerConfig& cfg, SeededRng& rng) {
    if (data.target_train.empty()) throw std::invalid_argument("mean teacher: no target training samples");
    const auto& s3 = cfg.schedule.stage3;
    StageOutput out;
    out.record.name = "mean_teacher";
    SeededRng init(0);
    nn::Segmenter teacher_net(cfg.segmenter, init);
    teacher_net.load(f.snapshot());
    EmaTeacher teacher(f.snapshot(), cfg.ema_decay);

    Cursor src(data.source_train.size(), rng.child("source"));
    Cursor tgt(data.target_train.size(), rng.child("target"));
    SeededRng step_rng = rng.child("steps");
    const int steps = steps_per_epoch(cfg, data.source_train.size());
    const auto B = batch_of(cfg, data.source_train.size());
    const auto Bt = std::min<std::size_t>(B, data.target_train.size());
    std::vector<Image2D> guard_images;
    for (std::size_t i = 0; i < std::min<std::size_t>(static_cast<std::size_t>(cfg.probe_size), data.target_train.size()); ++i)
        guard_images.push_back(data.target_train[i].image);

    nn::Adam opt(f, s3.lr);
    DegenerateGuard guard(cfg.guard_window);
    int step_no = 0;
    for (int epoch = 0; epoch < s3.epochs; ++epoch) {
        const double lr = nn::multistep_lr(s3.lr, s3.gamma, s3.milestones, epoch);
        opt.set_lr(lr);
        std::vector<double> sups, conss, totals;
        for (int st = 0; st < steps; ++st) {
            std::vector<LabeledSample> sb;
            std::vector<UnlabeledSample> tb;
            for (auto i : src.next(B)) sb.push_back(data.source_train[i]);
            for (auto i : tgt.next(Bt)) tb.push_back(data.target_train[i]);
            if (!cfg.supervised_augmentation.empty()) {
                SeededRng ar = step_rng.child("sup_aug").child(static_cast<std::uint64_t>(step_no));
                for (std::size_t k = 0; k < sb.size(); ++k) {
                    SeededRng r = draw_rng(ar, 0, k, cfg.supervised_augmentation.seed_policy);
                    auto [im, rec] = compose_and_apply(sb[k].image, cfg.supervised_augmentation, r);
                    if (rec.affine) sb[k].mask = apply_affine_to_mask(sb[k].mask, *rec.affine);
                    sb[k].image = std::move(im);
                    record_augment(out.augment, rec);
                }
            }
            SeededRng r = step_rng.child(static_cast<std::uint64_t>(step_no));
            auto rec = mean_teacher_step(f, opt, teacher_net, teacher, sb, tb, cfg, r, &out.augment);
            rec.step = step_no++;
            sups.push_back(rec.sup);
            conss.push_back(rec.cons);
            totals.push_back(rec.total);
            out.steps.push_back(rec);
        }
        EpochRecord er;
        er.stage = "mean_teacher";
        er.epoch = epoch;
        er.lr = lr;
        er.sup = mean_of(sups);
        er.cons = mean_of(conss);
        er.total = mean_of(totals);
        er.fg_fraction = DegenerateGuard::foreground_fraction(predict(teacher_net, guard_images));
        out.epochs.push_back(er);
        ++out.record.epochs_run;
        if (guard.observe_fraction(*er.fg_fraction)) {
            out.record.degenerate = true;
            break;
        }
    }
    // The EMA teacher is the model that is evaluated.
    f.load(teacher.snapshot());
    return out;
}

// ---------------------------------------------------------------- stage-1 cache

namespace {

Json stage1_json(const Stage1Result& r) {
    Json steps = Json::array();
    for (const auto& s : r.steps) steps.push_back(s);
    Json epochs = Json::array();
    for (const auto& e : r.epochs) epochs.push_back(e);
    return {{"record", r.record}, {"epochs", epochs}, {"steps", steps}, {"augment", r.augment}};
}

}  // namespace

std::optional<Stage1Result> Stage1Cache::get(std::uint64_t key) {
    if (auto it = mem_.find(key); it != mem_.end()) {
        ++hits_;
        return it->second;
    }
    if (dir_.empty()) return std::nullopt;
    const auto base = dir_ / ("stage1_" + hex64(key));
    if (!std::filesystem::exists(base.string() + ".ckpt") || !std::filesystem::exists(base.string() + ".json"))
        return std::nullopt;
    Stage1Result r;
    r.best = nn::load_checkpoint(base.string() + ".ckpt", key).segmenter;
    std::ifstream in(base.string() + ".json");
    const Json j = Json::parse(in);
    r.record = j.at("record").get<StageRecord>();
    for (const auto& e : j.at("epochs")) r.epochs.push_back(e.get<EpochRecord>());
    for (const auto& s : j.at("steps")) r.steps.push_back(s.get<StepRecord>());
    r.augment = j.at("augment").get<AugmentSummary>();
    mem_[key] = r;
    ++hits_;
    return r;
}

void Stage1Cache::put(std::uint64_t key, const Stage1Result& r) {
    mem_[key] = r;
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    const auto base = (dir_ / ("stage1_" + hex64(key))).string();
    nn::Checkpoint ck;
    ck.stage = "stage1";
    ck.config_hash = key;
    ck.segmenter = r.best;
    // Write-then-rename so concurrent readers never see partial files.
    save_checkpoint(base + ".ckpt.tmp", ck);
    std::filesystem::rename(base + ".ckpt.tmp", base + ".ckpt");
    {
        std::ofstream os(base + ".json.tmp");
        os << stage1_json(r).dump() << '\n';
    }
    std::filesystem::rename(base + ".json.tmp", base + ".json");
}

std::uint64_t stage1_key(const TrainerConfig& cfg, const TrainData& data, MethodVariant v, std::uint64_t seed) {
    const bool pooled = plan_of(v).pooled_target_labels;
    Json j = {{"segmenter", cfg.segmenter},
              {"stage1", cfg.schedule.stage1},
              {"batch_size", cfg.schedule.batch_size},
              {"steps_per_epoch", cfg.schedule.steps_per_epoch},
              {"epsilon", cfg.weights.epsilon},
              {"supervised_augmentation", cfg.supervised_augmentation},
              {"probe_size", cfg.probe_size},
              {"pooled", pooled},
              {"seed", seed}};
    TrainData d;
    d.source_train = data.source_train;
    d.source_val = data.source_val;
    if (pooled) d.target_train_labeled = data.target_train_labeled;
    return splitmix64(fnv1a64(j.dump()) ^ d.fingerprint());
}

// ---------------------------------------------------------------- dispatch

TrainResult train_method(MethodVariant v, const TrainData& data, const TrainerConfig& cfg, std::uint64_t seed,
                         Stage1Cache* cache) {
    cfg.validate();
    data.validate();
    const VariantPlan plan = plan_of(v);
    if (plan.pooled_target_labels && data.target_train_labeled.empty())
        throw std::invalid_argument("supervised_upper needs target-train labels");
    if ((plan.stage2 || plan.stage3 || plan.mean_teacher) && data.target_train.empty())
        throw std::invalid_argument(variant_name(v) + " needs target training images");

    TrainResult res;
    auto& m = res.manifest;
    m.variant = variant_name(v);
    m.seed = seed;
    m.config = cfg;
    m.data_fingerprint = data.fingerprint();
    m.config_hash = splitmix64(fnv1a64(m.config.dump()) ^ m.data_fingerprint);

    const SeededRng root(seed);
    SeededRng init = root.child("init");
    nn::Segmenter f(cfg.segmenter, init);

    auto absorb = [&](const StageRecord& rec, const std::vector<EpochRecord>& ep, const std::vector<StepRecord>& st,
                      const AugmentSummary& aug) {
        m.stages.push_back(rec);
        m.epochs.insert(m.epochs.end(), ep.begin(), ep.end());
        m.steps.insert(m.steps.end(), st.begin(), st.end());
        merge_augment(m.augment, aug);
        m.degenerate = m.degenerate || rec.degenerate;
    };

    // Stage 1, shared across variants with the same inputs.
    {
        const auto key = stage1_key(cfg, data, v, seed);
        std::optional<Stage1Result> s1 = cache ? cache->get(key) : std::nullopt;
        if (!s1) {
            std::vector<LabeledSample> labeled = data.source_train;
            if (plan.pooled_target_labels)
                labeled.insert(labeled.end(), data.target_train_labeled.begin(), data.target_train_labeled.end());
            SeededRng r = root.child("stage1");
            s1 = run_stage1_supervised(f, labeled, data.source_val, cfg, r);
            if (cache) cache->put(key, *s1);
        }
        f.load(s1->best);
        absorb(s1->record, s1->epochs, s1->steps, s1->augment);
    }

    std::optional<nn::Discriminator> d;
    if (plan.stage2) {
        nn::DiscriminatorConfig dc = cfg.discriminator;
        SeededRng dinit = root.child("disc_init");
        d.emplace(dc, per_sample_feature_shape(f, data.source_train.front().image), dinit);
        SeededRng r = root.child("stage2");
        auto o = run_stage2_adversarial(f, *d, data, cfg, r);
        absorb(o.record, o.epochs, o.steps, o.augment);
    }
    if (plan.stage3) {
        SeededRng r = root.child("stage3");
        auto o = run_stage3_consistency(f, plan.adversarial_in_stage3 ? &*d : nullptr, data, cfg, r);
        absorb(o.record, o.epochs, o.steps, o.augment);
    }
    if (plan.mean_teacher) {
        SeededRng r = root.child("mean_teacher");
        auto o = run_mean_teacher(f, data, cfg, r);
        absorb(o.record, o.epochs, o.steps, o.augment);
    }

    res.checkpoint.stage = m.stages.back().name;
    res.checkpoint.config_hash = m.config_hash;
    res.checkpoint.segmenter = f.snapshot();
    if (d) res.checkpoint.discriminator = d->snapshot();
    return res;
}

}  // namespace augda::train
