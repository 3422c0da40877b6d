// Command-line front end of the runner.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "augda/runner.hpp"
#include "augda/sample_io.hpp"
#include "augda/serialize.hpp"

namespace fs = std::filesystem;
using namespace augda;

namespace {

// Degenerate runs (3) are reported through run::exit_code.
constexpr int kOk = 0, kConfigError = 2, kPartial = 4;

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool paper_profile = false;
    std::optional<double> p_threshold;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", c.out, "output directory (overrides the config)");
    cmd->add_option("-s,--seed", c.seed, "run this single seed instead of the config's list");
    cmd->add_flag("--paper-profile", c.paper_profile, "full-scale images, network and schedules");
    cmd->add_option("-p,--p-threshold", c.p_threshold, "significance threshold of the ranking");
}

run::ExperimentConfig resolve(const Common& c) {
    run::ExperimentConfig cfg = c.config.empty() ? run::ExperimentConfig{} : run::load_config(c.config);
    if (c.paper_profile) run::apply_paper_profile(cfg);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.seeds = {*c.seed};
    if (c.p_threshold) cfg.p_threshold = *c.p_threshold;
    cfg.validate();
    return cfg;
}

int finish(const run::ResultsBundle& b) {
    const auto report = run::make_report(b);
    std::size_t failed = 0, degenerate = 0;
    for (const auto& c : b.cells) {
        failed += c.status == run::CellStatus::failed;
        degenerate += c.degenerate;
        if (c.status == run::CellStatus::failed) std::cerr << "failed: " << c.dir.string() << ": " << c.error << "\n";
    }
    std::cout << b.cells.size() << " cells, " << b.trained() << " trained, " << failed << " failed, " << degenerate
              << " degenerate\nreport: " << report.string() << "\n";
    return run::exit_code(b);
}

int gen_data(const run::ExperimentConfig& cfg) {
    const fs::path root = cfg.output_dir / "data";
    const auto bm = synth::build_benchmark(cfg.clinics, cfg.benchmark);
    auto dump = [&](const fs::path& dir, const std::vector<LabeledSample>& all, const std::vector<std::size_t>& idx) {
        for (auto i : idx) io::write_sample(dir, all[i]);
    };
    for (const auto& cl : bm.clinics) {
        const fs::path d = root / cl.spec.name;
        dump(d / "source_train", cl.samples, cl.source_split.train);
        dump(d / "source_val", cl.samples, cl.source_split.val);
        dump(d / "source_test", cl.samples, cl.source_split.test);
        dump(d / "target_train", cl.samples, cl.target_split.train);
        dump(d / "target_test", cl.samples, cl.target_split.test);
    }
    std::size_t pairs = 0;
    if (cfg.mode == run::Mode::paired) {
        const auto data = run::make_paired_data(cfg);
        for (const auto& s : data.train.target_train) io::write_sample(root / "paired" / "target_train", s);
        for (const auto& [a, b] : data.paired_test) {
            io::write_sample(root / "paired" / "target_test", a);
            io::write_sample(root / "paired" / "target_test", b);
        }
        pairs = data.train.target_train.size() + data.paired_test.size();
    }
    std::cout << bm.clinics.size() << " clinics, " << bm.total_subjects() << " subjects";
    if (pairs) std::cout << ", " << pairs << " paired slices";
    std::cout << " written to " << root.string() << "\n";
    return kOk;
}

int evaluate(const run::ExperimentConfig& cfg, const std::string& checkpoint, const std::string& source,
             const std::string& target) {
    const auto ckpt = nn::load_checkpoint(checkpoint);
    SeededRng init(0);
    nn::Segmenter f(cfg.trainer.segmenter, init);
    f.load(ckpt.segmenter);
    const auto data = cfg.mode == run::Mode::paired
                          ? run::make_paired_data(cfg)
                          : run::make_pair_data(synth::build_benchmark(cfg.clinics, cfg.benchmark), source, target);
    const auto ev = run::evaluate_cell(f, data);
    const fs::path dir = cfg.output_dir / "evaluation";
    fs::create_directories(dir);
    eval::write_case_metrics_csv(dir / "target_cases.csv", ev.target);
    eval::write_case_metrics_csv(dir / "source_cases.csv", ev.source);
    if (!ev.agreement.empty()) eval::write_case_metrics_csv(dir / "agreement_cases.csv", ev.agreement);
    auto med = [](const std::vector<eval::CaseMetrics>& v) {
        return eval::format_median_iqr(eval::median_iqr(eval::defined_values(v, eval::Metric::dice)));
    };
    std::cout << data.name << " target Dice " << med(ev.target) << ", source Dice " << med(ev.source);
    if (!ev.agreement.empty()) std::cout << ", agreement Dice " << med(ev.agreement);
    std::cout << "\nper-case metrics in " << dir.string() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain adaptation experiments on synthetic MR benchmarks"};
    app.require_subcommand(1);
    Common common;
    std::string method = "tc_adversarial", source = "A", target = "B", checkpoint, bundle;

    auto* gen = app.add_subcommand("gen-data", "render the benchmark to <out>/data");
    add_common(gen, common);
    auto* train = app.add_subcommand("train", "train one method on one clinic pair");
    add_common(train, common);
    train->add_option("-m,--method", method, "method variant");
    train->add_option("--source", source, "source clinic");
    train->add_option("--target", target, "target clinic");
    auto* matrix = app.add_subcommand("run-matrix", "every clinic pair and method");
    add_common(matrix, common);
    auto* ablation = app.add_subcommand("run-ablation", "consistency training under four augmentation arms");
    add_common(ablation, common);
    auto* paired = app.add_subcommand("run-paired", "paired-acquisition experiment");
    add_common(paired, common);
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a checkpoint on a clinic pair's test splits");
    add_common(evaluate_cmd, common);
    evaluate_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--source", source, "source clinic");
    evaluate_cmd->add_option("--target", target, "target clinic");
    auto* report = app.add_subcommand("report", "render tables and figures of a bundle");
    report->add_option("bundle", bundle, "bundle directory")->required();
    auto* verify = app.add_subcommand("verify", "recompute every report number from the stored case metrics");
    verify->add_option("bundle", bundle, "bundle directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*report) {
            const auto b = run::load_bundle(bundle);
            std::cout << run::make_report(b).string() << "\n";
            return kOk;
        }
        if (*verify) {
            const auto b = run::load_bundle(bundle);
            const auto v = run::verify_bundle(b);
            for (const auto& m : v.mismatches) std::cout << "mismatch: " << m << "\n";
            std::cout << v.cells_checked << " cells, " << v.numbers_checked << " table numbers checked, "
                      << v.mismatches.size() << " mismatches\n";
            return v.ok() ? kOk : kPartial;
        }
        auto cfg = resolve(common);
        if (*gen) return gen_data(cfg);
        if (*evaluate_cmd) return evaluate(cfg, checkpoint, source, target);
        if (*train) {
            cfg.mode = run::Mode::matrix;
            cfg.pairs = {{source, target}};
            cfg.arms = {};
            cfg.methods = {method};
            cfg.validate();
            return finish(run::run_matrix(cfg));
        }
        if (*matrix) return finish(run::run_matrix(cfg));
        if (*ablation) return finish(run::run_ablation(cfg));
        if (*paired) return finish(run::run_paired(cfg));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kPartial;
    }
    return kOk;
}
