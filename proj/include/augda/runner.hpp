#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "augda/eval.hpp"
#include "augda/synthdata.hpp"
#include "augda/trainer.hpp"

namespace augda::run {

using Json = nlohmann::json;

enum class Mode { matrix, ablation, paired };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

/// One trained configuration of an experiment: a method plus optional
/// augmentation overrides of the shared trainer config.
struct Arm {
    std::string name;
    train::MethodVariant method = train::MethodVariant::tc;
    std::optional<AugmentationSpec> consistency_augmentation;
    std::optional<AugmentationSpec> supervised_augmentation;
    bool operator==(const Arm&) const = default;
};

/// Default arms of each mode. Matrix uses one arm per listed method.
std::vector<Arm> ablation_arms();
std::vector<Arm> paired_arms();

struct PairedSetup {
    std::string source = "A";
    synth::DomainSpec acquisition_a = synth::preset("B");
    synth::DomainSpec acquisition_b = synth::preset("C");
    bool operator==(const PairedSetup&) const = default;
};

struct ExperimentConfig {
    std::string name = "experiment";
    Mode mode = Mode::matrix;
    std::vector<synth::DomainSpec> clinics{synth::preset("A"), synth::preset("B"), synth::preset("C")};
    synth::BenchmarkOptions benchmark;
    /// Directed (source, target) pairs; empty means all of them.
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::string> methods{"no_adaptation", "adversarial", "mean_teacher", "tc", "tc_adversarial"};
    /// Overrides the mode's default arms when non-empty.
    std::vector<Arm> arms;
    train::TrainerConfig trainer;
    PairedSetup paired;
    double p_threshold = 0.01;
    /// Example segmentations stored per cell for the report.
    int example_cases = 2;
    std::filesystem::path output_dir = "results";

    void validate() const;
    std::vector<Arm> resolved_arms() const;
    std::vector<std::pair<std::string, std::string>> resolved_pairs() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Full-scale sizes and schedules (256x256 slices, full epoch counts).
void apply_paper_profile(ExperimentConfig& cfg);

Json to_json(const ExperimentConfig& cfg);
/// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

enum class CellStatus { done, cached, failed };

/// One (experiment, arm, seed) training run.
struct CellResult {
    std::string experiment;  ///< "A->B" or "paired"
    std::string arm;
    std::uint64_t seed = 0;
    CellStatus status = CellStatus::done;
    std::uint64_t hash = 0;
    bool degenerate = false;
    std::string error;
    std::filesystem::path dir;  ///< relative to the bundle root
};

struct ResultsBundle {
    std::filesystem::path root;
    ExperimentConfig config;
    std::vector<CellResult> cells;

    bool any_failed() const;
    bool any_degenerate() const;
    std::size_t trained() const;
};

/// Exit status of a finished run: 4 when a cell failed, 3 when a run
/// tripped the degenerate guard, 0 otherwise.
int exit_code(const ResultsBundle& b);

/// Data of one directed clinic pair (or of the paired setup).
struct ExperimentData {
    std::string name;
    train::TrainData train;
    std::vector<LabeledSample> target_test;
    std::vector<LabeledSample> source_test;
    /// Paired mode: test subjects under both acquisitions, aligned by index.
    std::vector<std::pair<LabeledSample, LabeledSample>> paired_test;
};

ExperimentData make_pair_data(const synth::Benchmark& bm, const std::string& source, const std::string& target);
ExperimentData make_paired_data(const ExperimentConfig& cfg);

std::string cell_dir_name(const std::string& experiment, const std::string& arm, std::uint64_t seed);
train::TrainerConfig arm_config(const ExperimentConfig& cfg, const Arm& arm);
std::uint64_t cell_hash(const ExperimentConfig& cfg, const Arm& arm, const ExperimentData& data, std::uint64_t seed);

/// Evaluation of a trained segmenter. `agreement` compares the two
/// acquisitions' predictions of each paired test subject.
struct CellEvaluation {
    std::vector<eval::CaseMetrics> target;
    std::vector<eval::CaseMetrics> source;
    std::vector<eval::CaseMetrics> agreement;
};
CellEvaluation evaluate_cell(nn::Segmenter& f, const ExperimentData& data);

/// Trains and evaluates every cell, skipping cells whose stored hash
/// matches. A failing cell leaves a failure record and the run continues.
ResultsBundle run_matrix(const ExperimentConfig& cfg);
ResultsBundle run_ablation(const ExperimentConfig& cfg);
ResultsBundle run_paired(const ExperimentConfig& cfg);
/// Throws std::invalid_argument when the target data carries no partners.
ResultsBundle run_paired(const ExperimentConfig& cfg, const ExperimentData& data);
/// Dispatches on cfg.mode.
ResultsBundle run_experiment(const ExperimentConfig& cfg);

/// Reads the bundle index written by a run.
ResultsBundle load_bundle(const std::filesystem::path& root);

/// Which CaseMetrics file of a cell a table is built from.
enum class CaseSet { target, source, agreement };
std::string case_set_name(CaseSet s);
std::vector<eval::CaseMetrics> read_cases(const ResultsBundle& b, const CellResult& c, CaseSet s);

/// Table model shared by the report writer and verify.
struct Table {
    std::string title;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    bool operator==(const Table&) const = default;
};

struct ReportModel {
    std::vector<Table> tables;
    std::vector<std::string> warnings;
};

/// Tables of a bundle, recomputed from its CaseMetrics files.
ReportModel build_report_model(const ResultsBundle& b);
std::string render_report(const ReportModel& m, const std::vector<std::string>& figures);
/// Parses the tables of a rendered report.
std::vector<Table> parse_report_tables(const std::string& markdown);

/// Writes report.md, loss curves and example segmentations under
/// root/report. Pure: the same bundle yields byte-identical files.
std::filesystem::path make_report(const ResultsBundle& b);

struct VerifyResult {
    std::size_t cells_checked = 0;
    std::size_t numbers_checked = 0;
    std::vector<std::string> mismatches;
    bool ok() const { return mismatches.empty(); }
};
/// Recomputes every report number from the CaseMetrics files and checks
/// the stored file digests of every cell.
VerifyResult verify_bundle(const ResultsBundle& b);

/// Per-seed median target Dice of a cell, read back from the bundle.
double median_target_dice(const ResultsBundle& b, const CellResult& c);
/// Mean over seeds of the per-seed significance rank of each arm in one
/// experiment, ranked on the target cases.
std::vector<std::pair<std::string, double>> seed_averaged_ranks(const ResultsBundle& b, const std::string& experiment);

}  // namespace augda::run
