#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "augda/augment.hpp"
#include "augda/losses.hpp"
#include "augda/nets.hpp"
#include "augda/optim.hpp"

namespace augda::train {

using Json = nlohmann::json;

struct Stage1Schedule {
    int epochs = 400;
    std::vector<int> milestones{30, 350};
    double lr = 1e-3;
    double gamma = 0.1;
    bool operator==(const Stage1Schedule&) const = default;
};

struct Stage2Schedule {
    int warmup_epochs = 30;  ///< discriminator only, segmenter frozen
    int joint_epochs = 100;
    double beta = 0.3;
    double delta = 0.15;  ///< fooled once accuracy is within 0.5 +- delta
    int disc_updates = 1;  ///< discriminator updates per segmenter update
    double segmenter_lr = 1e-3;
    double disc_lr = 1e-3;
    bool operator==(const Stage2Schedule&) const = default;
};

struct Stage3Schedule {
    int epochs = 300;
    std::vector<int> milestones{200, 250};
    double lr = 1e-3;
    double gamma = 0.1;
    bool operator==(const Stage3Schedule&) const = default;
};

/// An epoch is `steps_per_epoch` optimizer steps on batches of
/// `batch_size`; 0 steps means one pass over the source training set.
struct StageSchedule {
    Stage1Schedule stage1;
    Stage2Schedule stage2;
    Stage3Schedule stage3;
    int batch_size = 4;
    int steps_per_epoch = 0;

    static StageSchedule paper() { return {}; }
    /// `paper()` schedule with every epoch count and milestone divided by 10,
    /// rounding up.
    static StageSchedule desk() { return paper().scaled(10); }
    StageSchedule scaled(int divisor) const;
    void validate() const;
    bool operator==(const StageSchedule&) const = default;
};

enum class MethodVariant { no_adaptation, adversarial, mean_teacher, tc, tc_adversarial, supervised_upper };

std::string variant_name(MethodVariant v);
/// Throws std::invalid_argument on unknown names.
MethodVariant parse_variant(const std::string& name);
const std::vector<MethodVariant>& all_variants();

/// Stages and loss terms a variant runs.
struct VariantPlan {
    bool stage2 = false;
    bool stage3 = false;
    bool mean_teacher = false;
    bool adversarial_in_stage3 = false;
    bool pooled_target_labels = false;
};
VariantPlan plan_of(MethodVariant v);

/// Exponential moving average of a network's records (parameters and
/// buffers): teacher <- decay * teacher + (1 - decay) * student.
class EmaTeacher {
public:
    EmaTeacher(const nn::ParameterSnapshot& student, double decay);
    const nn::ParameterSnapshot& snapshot() const { return teacher_; }
    double decay() const { return decay_; }
    void update(const nn::ParameterSnapshot& student);

private:
    nn::ParameterSnapshot teacher_;
    double decay_;
};

/// Degenerate-solution guard over the per-epoch mean foreground fraction of
/// a fixed target probe batch.
class DegenerateGuard {
public:
    static constexpr double kMaxFraction = 0.5;
    static constexpr double kMinFraction = 1e-5;

    explicit DegenerateGuard(int window = 3);
    /// Mean over masks of the fraction of pixels >= 0.5.
    static double foreground_fraction(std::span<const ProbMask> preds);
    static bool out_of_range(double fraction) { return fraction > kMaxFraction || fraction < kMinFraction; }
    /// Records one epoch; returns true once `window` consecutive epochs were
    /// out of range (and stays true).
    bool observe(std::span<const ProbMask> preds);
    bool observe_fraction(double fraction);
    bool tripped() const { return tripped_; }
    int window() const { return window_; }
    int consecutive() const { return consecutive_; }

private:
    int window_;
    int consecutive_ = 0;
    bool tripped_ = false;
};

struct TrainerConfig {
    nn::SegmenterConfig segmenter = nn::SegmenterConfig::desk();
    nn::DiscriminatorConfig discriminator;
    StageSchedule schedule = StageSchedule::desk();
    LossWeights weights;
    /// Augmentation of target images for the consistency term.
    AugmentationSpec consistency_augmentation = AugmentationSpec::all();
    /// Augmentation of labeled batches for the supervised term (off by default).
    AugmentationSpec supervised_augmentation = AugmentationSpec::none();
    double ema_decay = 0.99;
    int guard_window = 3;
    int probe_size = 16;
    /// Paired mode: draw the two acquisitions' geometry independently and
    /// align the predictions, instead of sharing one geometric draw.
    bool paired_independent_geometry = false;
    /// Unpaired mode: warp the prediction on the original image onto the
    /// augmented grid before comparing. Off compares them unaligned.
    bool align_spatial = true;

    void validate() const;
    bool operator==(const TrainerConfig&) const = default;
};

/// Data of one run. Source domain label 0, target 1. In paired mode every
/// target sample carries a partner acquisition, and both get label 1.
struct TrainData {
    std::vector<LabeledSample> source_train;
    std::vector<LabeledSample> source_val;
    std::vector<UnlabeledSample> target_train;
    /// Target-train labels, only for supervised_upper.
    std::vector<LabeledSample> target_train_labeled;

    bool paired() const;
    void validate() const;
    /// Hash of ids and pixel data.
    std::uint64_t fingerprint() const;
};

struct EpochRecord {
    std::string stage;
    int epoch = 0;
    double lr = 0.0;
    double sup = 0.0;   ///< mean over steps
    double cons = 0.0;
    double adv = 0.0;
    double total = 0.0;
    std::optional<double> val_dice;      ///< stage 1
    std::optional<double> disc_accuracy; ///< stage 2 / adversarial stage 3
    std::optional<double> probe_objective;
    std::optional<double> fg_fraction;   ///< degenerate-guard probe
    bool operator==(const EpochRecord&) const = default;
};

/// One step of the metrics log.
struct StepRecord {
    std::string stage;
    int step = 0;
    double sup = 0.0, cons = 0.0, adv = 0.0, total = 0.0;
    bool operator==(const StepRecord&) const = default;
};

struct StageRecord {
    std::string name;  ///< "stage1", "stage2", "stage3", "mean_teacher"
    int epochs_run = 0;
    std::vector<std::string> frozen;  ///< freeze selectors active in the stage's first phase
    std::optional<int> best_epoch;    ///< stage 1
    std::optional<double> accuracy_after_warmup;
    std::optional<double> accuracy_final;
    bool fooled = false;
    bool degenerate = false;
    bool operator==(const StageRecord&) const = default;
};

struct AugmentSummary {
    std::size_t records = 0;
    std::size_t affine = 0, bias = 0, motion = 0;
    std::uint64_t hash = 0;  ///< over every AppliedRecord in draw order
    bool operator==(const AugmentSummary&) const = default;
};

/// Everything needed to replay a run.
struct RunManifest {
    std::string variant;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::uint64_t data_fingerprint = 0;
    Json config;
    std::vector<StageRecord> stages;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    AugmentSummary augment;
    std::map<std::string, std::string> checkpoints;  ///< written by the runner
    bool degenerate = false;

    /// Line-delimited JSON: header, stages, epochs, augment summary, result.
    std::string to_jsonl() const;
    /// Metrics log: one step per line.
    std::string metrics_jsonl() const;
    bool operator==(const RunManifest&) const = default;
};

/// Raised when the discriminator cannot separate the unadapted features.
class Stage2Diagnostic : public std::runtime_error {
public:
    Stage2Diagnostic(const std::string& what, double accuracy) : std::runtime_error(what), accuracy_(accuracy) {}
    double accuracy() const { return accuracy_; }

private:
    double accuracy_;
};

struct Stage1Result {
    nn::ParameterSnapshot best;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    StageRecord record;
    AugmentSummary augment;
};

/// Stage-1 results keyed on everything stage 1 depends on. Optionally
/// persisted under `dir` so separate processes share them.
class Stage1Cache {
public:
    explicit Stage1Cache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}
    std::optional<Stage1Result> get(std::uint64_t key);
    void put(std::uint64_t key, const Stage1Result& r);
    std::size_t hits() const { return hits_; }

private:
    std::filesystem::path dir_;
    std::map<std::uint64_t, Stage1Result> mem_;
    std::size_t hits_ = 0;
};

struct TrainResult {
    nn::Checkpoint checkpoint;
    RunManifest manifest;
};

/// Shared low-level helpers, exposed for tests.
nn::Tensor stack_masks(std::span<const BinMask> masks);
/// Mean Dice of binarised eval-mode predictions.
double mean_dice(nn::Segmenter& f, std::span<const LabeledSample> samples, int chunk = 8);
/// Eval-mode predictions of a set of images.
std::vector<ProbMask> predict(nn::Segmenter& f, std::span<const Image2D> images, int chunk = 8);
/// Eval-mode discriminator accuracy on features of source (label 0) and
/// target (label 1) images.
double heldout_domain_accuracy(nn::Segmenter& f, nn::Discriminator& d, std::span<const Image2D> source,
                               std::span<const Image2D> target, int chunk = 8);

/// Stage 1: supervised training on `labeled`; leaves `f` at the snapshot
/// with the best validation Dice (first best on ties).
Stage1Result run_stage1_supervised(nn::Segmenter& f, const std::vector<LabeledSample>& labeled,
                                   const std::vector<LabeledSample>& val, const TrainerConfig& cfg, SeededRng& rng);

struct StageOutput {
    StageRecord record;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    AugmentSummary augment;
};

/// Stage 2: discriminator warmup on frozen features, then alternating
/// updates until the discriminator is fooled or the budget ends.
StageOutput run_stage2_adversarial(nn::Segmenter& f, nn::Discriminator& d, const TrainData& data,
                                   const TrainerConfig& cfg, SeededRng& rng);

/// Stage 3: sup + alpha * cons (- beta * adv when `d` is given).
StageOutput run_stage3_consistency(nn::Segmenter& f, nn::Discriminator* d, const TrainData& data,
                                   const TrainerConfig& cfg, SeededRng& rng);

/// One mean-teacher step: a student update on sup + alpha * cons against
/// the teacher's aligned prediction, then the EMA update. `teacher_net`
/// must hold the teacher snapshot on entry and holds the new one on exit.
StepRecord mean_teacher_step(nn::Segmenter& student, nn::Adam& opt, nn::Segmenter& teacher_net, EmaTeacher& teacher,
                             std::span<const LabeledSample> source_batch, std::span<const UnlabeledSample> target_batch,
                             const TrainerConfig& cfg, SeededRng& rng, AugmentSummary* summary = nullptr);

StageOutput run_mean_teacher(nn::Segmenter& f, const TrainData& data, const TrainerConfig& cfg, SeededRng& rng);

/// Key of the stage-1 result for these inputs.
std::uint64_t stage1_key(const TrainerConfig& cfg, const TrainData& data, MethodVariant v, std::uint64_t seed);

TrainResult train_method(MethodVariant v, const TrainData& data, const TrainerConfig& cfg, std::uint64_t seed,
                         Stage1Cache* cache = nullptr);

}  // namespace augda::train
