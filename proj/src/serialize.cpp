#include "augda/serialize.hpp"

#include "json_reader.hpp"

namespace augda {

using detail::Reader;
using detail::put_optional;

void to_json(Json& j, const Interval& v) { j = Json::array({v.lo, v.hi}); }
void from_json(const Json& j, Interval& v) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ConfigError("interval must be [lo, hi]");
    v.lo = j[0].get<double>();
    v.hi = j[1].get<double>();
    if (!(v.lo <= v.hi)) throw ConfigError("interval lo > hi");
}

void to_json(Json& j, const AffineRanges& v) {
    j = {{"rotation_deg", v.rotation_deg}, {"shear", v.shear}, {"scale", v.scale}, {"translation", v.translation}};
}
void from_json(const Json& j, AffineRanges& v) {
    Reader r(j, "affine");
    r("rotation_deg", v.rotation_deg);
    r("shear", v.shear);
    r("scale", v.scale);
    r("translation", v.translation);
}

void to_json(Json& j, const BiasRanges& v) { j = {{"order", v.order}, {"coefficient", v.coefficient}}; }
void from_json(const Json& j, BiasRanges& v) {
    Reader r(j, "bias");
    r("order", v.order);
    r("coefficient", v.coefficient);
}

void to_json(Json& j, const MotionRanges& v) {
    j = {{"min_events", v.min_events},
         {"max_events", v.max_events},
         {"onset", v.onset},
         {"rotation_deg", v.rotation_deg},
         {"translation", v.translation}};
}
void from_json(const Json& j, MotionRanges& v) {
    Reader r(j, "motion");
    r("min_events", v.min_events);
    r("max_events", v.max_events);
    r("onset", v.onset);
    r("rotation_deg", v.rotation_deg);
    r("translation", v.translation);
}

void to_json(Json& j, const AugmentationSpec& v) {
    j = {{"geometric", v.geometric},
         {"bias", v.bias},
         {"motion", v.motion},
         {"affine_ranges", v.affine},
         {"bias_ranges", v.bias_ranges},
         {"motion_ranges", v.motion_ranges},
         {"seed_policy", v.seed_policy == SeedPolicy::per_sample ? "per_sample" : "per_batch"}};
}
void from_json(const Json& j, AugmentationSpec& v) {
    Reader r(j, "augmentation");
    r("geometric", v.geometric);
    r("bias", v.bias);
    r("motion", v.motion);
    r("affine_ranges", v.affine);
    r("bias_ranges", v.bias_ranges);
    r("motion_ranges", v.motion_ranges);
    std::string policy = v.seed_policy == SeedPolicy::per_sample ? "per_sample" : "per_batch";
    r("seed_policy", policy);
    if (policy == "per_sample") v.seed_policy = SeedPolicy::per_sample;
    else if (policy == "per_batch") v.seed_policy = SeedPolicy::per_batch;
    else throw ConfigError("augmentation.seed_policy: expected per_sample or per_batch");
}

AugmentationSpec augmentation_from_json(const Json& j) {
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "none") return AugmentationSpec::none();
        if (name == "geometric") return AugmentationSpec::geometric_only();
        if (name == "mri") return AugmentationSpec::mri_only();
        if (name == "all") return AugmentationSpec::all();
        throw ConfigError("unknown augmentation arm '" + name + "'");
    }
    AugmentationSpec s;
    from_json(j, s);
    return s;
}

void to_json(Json& j, const AppliedRecord& v) {
    j = Json::object();
    if (v.affine) {
        const auto& a = *v.affine;
        j["affine"] = {{"rotation_deg", a.rotation_deg},
                       {"shear", a.shear},
                       {"scale", a.scale},
                       {"translation", a.translation},
                       {"interpolation", a.interpolation == Interpolation::linear ? "linear" : "nearest"}};
    }
    if (v.bias) j["bias"] = {{"order", v.bias->order}, {"coefficients", v.bias->coefficients}};
    if (v.motion) {
        Json ev = Json::array();
        for (const auto& e : v.motion->events)
            ev.push_back({{"onset", e.onset}, {"rotation_deg", e.rotation_deg}, {"translation", e.translation}});
        j["motion"] = ev;
    }
}

void to_json(Json& j, const LossWeights& v) { j = {{"alpha", v.alpha}, {"beta", v.beta}, {"epsilon", v.epsilon}}; }
void from_json(const Json& j, LossWeights& v) {
    Reader r(j, "weights");
    r("alpha", v.alpha);
    r("beta", v.beta);
    r("epsilon", v.epsilon);
}

void to_json(Json& j, const Spacing& v) { j = Json::array({v.row_mm, v.col_mm}); }
void from_json(const Json& j, Spacing& v) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("spacing must be [row_mm, col_mm]");
    v.row_mm = j[0].get<double>();
    v.col_mm = j[1].get<double>();
}

void to_json(Json& j, const SplitFractions& v) { j = Json::array({v.train, v.val, v.test}); }
void from_json(const Json& j, SplitFractions& v) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("split fractions must be [train, val, test]");
    v.train = j[0].get<double>();
    v.val = j[1].get<double>();
    v.test = j[2].get<double>();
}

}  // namespace augda

namespace augda::nn {

void to_json(Json& j, const SegmenterConfig& v) {
    j = {{"depth", v.depth},
         {"base_filters", v.base_filters},
         {"max_filters", v.max_filters},
         {"dropout", v.dropout},
         {"foreground_prior", v.foreground_prior},
         {"feature_tap", v.feature_tap}};
}
void from_json(const Json& j, SegmenterConfig& v) {
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "desk") v = SegmenterConfig::desk();
        else if (name == "paper") v = SegmenterConfig::paper();
        else if (name == "tiny") v = SegmenterConfig::tiny();
        else throw ConfigError("unknown segmenter profile '" + name + "'");
        return;
    }
    Reader r(j, "segmenter");
    r("depth", v.depth);
    r("base_filters", v.base_filters);
    r("max_filters", v.max_filters);
    r("dropout", v.dropout);
    r("foreground_prior", v.foreground_prior);
    r("feature_tap", v.feature_tap);
}

void to_json(Json& j, const DiscriminatorConfig& v) {
    j = {{"n_domains", v.n_domains},
         {"conv_channels", v.conv_channels},
         {"hidden", v.hidden},
         {"dropout", v.dropout},
         {"leaky_slope", v.leaky_slope},
         {"zero_head", v.zero_head}};
}
void from_json(const Json& j, DiscriminatorConfig& v) {
    Reader r(j, "discriminator");
    r("n_domains", v.n_domains);
    r("conv_channels", v.conv_channels);
    r("hidden", v.hidden);
    r("dropout", v.dropout);
    r("leaky_slope", v.leaky_slope);
    r("zero_head", v.zero_head);
}

}  // namespace augda::nn

namespace augda::synth {

void to_json(Json& j, const DomainSpec& v) {
    j = {{"name", v.name},
         {"gamma", v.gamma},
         {"noise_sigma", v.noise_sigma},
         {"blur_sigma", v.blur_sigma},
         {"bias_strength", v.bias_strength},
         {"spacing", v.spacing},
         {"lesion_contrast", v.lesion_contrast},
         {"gain", v.gain}};
}
void from_json(const Json& j, DomainSpec& v) {
    Reader r(j, "domain");
    r("name", v.name);
    r("gamma", v.gamma);
    r("noise_sigma", v.noise_sigma);
    r("blur_sigma", v.blur_sigma);
    r("bias_strength", v.bias_strength);
    r("spacing", v.spacing);
    r("lesion_contrast", v.lesion_contrast);
    r("gain", v.gain);
}

DomainSpec domain_from_json(const Json& j) {
    DomainSpec d;
    if (j.is_string()) {
        try {
            d = preset(j.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else {
        if (!j.is_object()) throw ConfigError("clinic must be a preset name or an object");
        Json rest = j;
        if (auto it = rest.find("preset"); it != rest.end()) {
            try {
                d = preset(it->get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            rest.erase("preset");
        }
        from_json(rest, d);
    }
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return d;
}

void to_json(Json& j, const BenchmarkOptions& v) {
    j = {{"subjects_per_clinic", v.subjects_per_clinic},
         {"slices_per_subject", v.slices_per_subject},
         {"rows", v.rows},
         {"cols", v.cols},
         {"source_fractions", v.source_fractions},
         {"target_fractions", v.target_fractions},
         {"seed", v.seed}};
}
void from_json(const Json& j, BenchmarkOptions& v) {
    Reader r(j, "benchmark");
    r("subjects_per_clinic", v.subjects_per_clinic);
    r("slices_per_subject", v.slices_per_subject);
    r("rows", v.rows);
    r("cols", v.cols);
    r("source_fractions", v.source_fractions);
    r("target_fractions", v.target_fractions);
    r("seed", v.seed);
}

}  // namespace augda::synth

namespace augda::train {

void to_json(Json& j, const Stage1Schedule& v) {
    j = {{"epochs", v.epochs}, {"milestones", v.milestones}, {"lr", v.lr}, {"gamma", v.gamma}};
}
void from_json(const Json& j, Stage1Schedule& v) {
    Reader r(j, "stage1");
    r("epochs", v.epochs);
    r("milestones", v.milestones);
    r("lr", v.lr);
    r("gamma", v.gamma);
}

void to_json(Json& j, const Stage2Schedule& v) {
    j = {{"warmup_epochs", v.warmup_epochs}, {"joint_epochs", v.joint_epochs}, {"beta", v.beta},
         {"delta", v.delta},                 {"disc_updates", v.disc_updates}, {"segmenter_lr", v.segmenter_lr},
         {"disc_lr", v.disc_lr}};
}
void from_json(const Json& j, Stage2Schedule& v) {
    Reader r(j, "stage2");
    r("warmup_epochs", v.warmup_epochs);
    r("joint_epochs", v.joint_epochs);
    r("beta", v.beta);
    r("delta", v.delta);
    r("disc_updates", v.disc_updates);
    r("segmenter_lr", v.segmenter_lr);
    r("disc_lr", v.disc_lr);
}

void to_json(Json& j, const Stage3Schedule& v) {
    j = {{"epochs", v.epochs}, {"milestones", v.milestones}, {"lr", v.lr}, {"gamma", v.gamma}};
}
void from_json(const Json& j, Stage3Schedule& v) {
    Reader r(j, "stage3");
    r("epochs", v.epochs);
    r("milestones", v.milestones);
    r("lr", v.lr);
    r("gamma", v.gamma);
}

void to_json(Json& j, const StageSchedule& v) {
    j = {{"stage1", v.stage1},
         {"stage2", v.stage2},
         {"stage3", v.stage3},
         {"batch_size", v.batch_size},
         {"steps_per_epoch", v.steps_per_epoch}};
}
void from_json(const Json& j, StageSchedule& v) {
    Reader r(j, "schedule");
    r("stage1", v.stage1);
    r("stage2", v.stage2);
    r("stage3", v.stage3);
    r("batch_size", v.batch_size);
    r("steps_per_epoch", v.steps_per_epoch);
}

void to_json(Json& j, const TrainerConfig& v) {
    j = {{"segmenter", v.segmenter},
         {"discriminator", v.discriminator},
         {"schedule", v.schedule},
         {"weights", v.weights},
         {"consistency_augmentation", v.consistency_augmentation},
         {"supervised_augmentation", v.supervised_augmentation},
         {"ema_decay", v.ema_decay},
         {"guard_window", v.guard_window},
         {"probe_size", v.probe_size},
         {"paired_independent_geometry", v.paired_independent_geometry},
         {"align_spatial", v.align_spatial}};
}
void from_json(const Json& j, TrainerConfig& v) {
    Reader r(j, "trainer");
    r("segmenter", v.segmenter);
    r("discriminator", v.discriminator);
    r("schedule", v.schedule);
    r("weights", v.weights);
    if (const Json* a = r.find("consistency_augmentation")) v.consistency_augmentation = augmentation_from_json(*a);
    if (const Json* a = r.find("supervised_augmentation")) v.supervised_augmentation = augmentation_from_json(*a);
    r("ema_decay", v.ema_decay);
    r("guard_window", v.guard_window);
    r("probe_size", v.probe_size);
    r("paired_independent_geometry", v.paired_independent_geometry);
    r("align_spatial", v.align_spatial);
}

void to_json(Json& j, const EpochRecord& v) {
    j = {{"stage", v.stage}, {"epoch", v.epoch}, {"lr", v.lr},       {"sup", v.sup},
         {"cons", v.cons},   {"adv", v.adv},     {"total", v.total}};
    put_optional(j, "val_dice", v.val_dice);
    put_optional(j, "disc_accuracy", v.disc_accuracy);
    put_optional(j, "probe_objective", v.probe_objective);
    put_optional(j, "fg_fraction", v.fg_fraction);
}
void from_json(const Json& j, EpochRecord& v) {
    Reader r(j, "epoch");
    r("stage", v.stage);
    r("epoch", v.epoch);
    r("lr", v.lr);
    r("sup", v.sup);
    r("cons", v.cons);
    r("adv", v.adv);
    r("total", v.total);
    r.optional("val_dice", v.val_dice);
    r.optional("disc_accuracy", v.disc_accuracy);
    r.optional("probe_objective", v.probe_objective);
    r.optional("fg_fraction", v.fg_fraction);
}

void to_json(Json& j, const StepRecord& v) {
    j = {{"stage", v.stage}, {"step", v.step}, {"sup", v.sup}, {"cons", v.cons}, {"adv", v.adv}, {"total", v.total}};
}
void from_json(const Json& j, StepRecord& v) {
    Reader r(j, "step");
    r("stage", v.stage);
    r("step", v.step);
    r("sup", v.sup);
    r("cons", v.cons);
    r("adv", v.adv);
    r("total", v.total);
}

void to_json(Json& j, const StageRecord& v) {
    j = {{"name", v.name}, {"epochs_run", v.epochs_run}, {"frozen", v.frozen},
         {"fooled", v.fooled}, {"degenerate", v.degenerate}};
    put_optional(j, "best_epoch", v.best_epoch);
    put_optional(j, "accuracy_after_warmup", v.accuracy_after_warmup);
    put_optional(j, "accuracy_final", v.accuracy_final);
}
void from_json(const Json& j, StageRecord& v) {
    Reader r(j, "stage");
    r("name", v.name);
    r("epochs_run", v.epochs_run);
    r("frozen", v.frozen);
    r("fooled", v.fooled);
    r("degenerate", v.degenerate);
    r.optional("best_epoch", v.best_epoch);
    r.optional("accuracy_after_warmup", v.accuracy_after_warmup);
    r.optional("accuracy_final", v.accuracy_final);
}

void to_json(Json& j, const AugmentSummary& v) {
    j = {{"records", v.records}, {"affine", v.affine}, {"bias", v.bias}, {"motion", v.motion}, {"hash", v.hash}};
}
void from_json(const Json& j, AugmentSummary& v) {
    Reader r(j, "augment");
    r("records", v.records);
    r("affine", v.affine);
    r("bias", v.bias);
    r("motion", v.motion);
    r("hash", v.hash);
}

}  // namespace augda::train
