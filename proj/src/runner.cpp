#include "augda/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "augda/plot.hpp"
#include "augda/rng.hpp"
#include "augda/sample_io.hpp"
#include "augda/serialize.hpp"
#include "json_reader.hpp"

namespace augda::run {

namespace fs = std::filesystem;
using detail::Reader;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Write-then-rename, so a reader sees either the old file or the new one.
void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::uint64_t file_digest(const fs::path& p) { return fnv1a64(read_text(p)); }

std::vector<std::pair<std::string, std::string>> all_pairs(const std::vector<synth::DomainSpec>& clinics) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : clinics)
        for (const auto& t : clinics)
            if (s.name != t.name) out.emplace_back(s.name, t.name);
    return out;
}

std::string sanitize(std::string s) {
    for (std::size_t p; (p = s.find("->")) != std::string::npos;) s.replace(p, 2, "_to_");
    std::string out;
    for (char c : s) {
        const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                          c == '_' || c == '.';
        out += keep ? c : '_';
    }
    return out;
}

Json arm_to_json(const Arm& a) {
    Json j = {{"name", a.name}, {"method", train::variant_name(a.method)}};
    if (a.consistency_augmentation) j["consistency_augmentation"] = *a.consistency_augmentation;
    if (a.supervised_augmentation) j["supervised_augmentation"] = *a.supervised_augmentation;
    return j;
}

Arm arm_from_json(const Json& j) {
    Arm a;
    Reader r(j, "arm");
    std::string method;
    r("name", a.name);
    r("method", method);
    if (method.empty()) throw ConfigError("arm: missing method");
    try {
        a.method = train::parse_variant(method);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("arm.method: ") + e.what());
    }
    if (a.name.empty()) a.name = method;
    if (const Json* v = r.find("consistency_augmentation")) a.consistency_augmentation = augmentation_from_json(*v);
    if (const Json* v = r.find("supervised_augmentation")) a.supervised_augmentation = augmentation_from_json(*v);
    return a;
}

std::vector<LabeledSample> gather_samples(const std::vector<LabeledSample>& all, const std::vector<std::size_t>& idx) {
    std::vector<LabeledSample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(all[i]);
    return out;
}

}  // namespace

std::string mode_name(Mode m) {
    switch (m) {
    case Mode::matrix: return "matrix";
    case Mode::ablation: return "ablation";
    case Mode::paired: return "paired";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    if (name == "matrix") return Mode::matrix;
    if (name == "ablation") return Mode::ablation;
    if (name == "paired") return Mode::paired;
    throw ConfigError("unknown mode '" + name + "' (matrix, ablation, paired)");
}

std::vector<Arm> ablation_arms() {
    using train::MethodVariant;
    return {{"TC + all-aug", MethodVariant::tc, AugmentationSpec::all(), std::nullopt},
            {"TC Geo", MethodVariant::tc, AugmentationSpec::geometric_only(), std::nullopt},
            {"TC + MRI-aug", MethodVariant::tc, AugmentationSpec::mri_only(), std::nullopt},
            {"TC No-aug", MethodVariant::tc, AugmentationSpec::none(), std::nullopt}};
}

std::vector<Arm> paired_arms() {
    using train::MethodVariant;
    const auto all = AugmentationSpec::all(), none = AugmentationSpec::none();
    return {{"TC&adversarial", MethodVariant::tc_adversarial, all, std::nullopt},
            {"TC", MethodVariant::tc, all, std::nullopt},
            // The partner acquisition is the only perturbation left.
            {"TC No-Aug", MethodVariant::tc, none, std::nullopt},
            {"mean teacher", MethodVariant::mean_teacher, all, std::nullopt},
            {"no adaptation", MethodVariant::no_adaptation, std::nullopt, none},
            {"no adaptation + aug", MethodVariant::no_adaptation, std::nullopt, all},
            {"adversarial", MethodVariant::adversarial, std::nullopt, none},
            {"adversarial + aug", MethodVariant::adversarial, std::nullopt, all}};
}

std::vector<Arm> ExperimentConfig::resolved_arms() const {
    if (!arms.empty()) return arms;
    if (mode == Mode::ablation) return ablation_arms();
    if (mode == Mode::paired) return paired_arms();
    std::vector<Arm> out;
    for (const auto& m : methods) out.push_back({m, train::parse_variant(m), std::nullopt, std::nullopt});
    return out;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::resolved_pairs() const {
    if (mode == Mode::paired) return {};
    return pairs.empty() ? all_pairs(clinics) : pairs;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("experiment: " + m); };
    if (name.empty()) fail("empty name");
    if (clinics.empty()) fail("no clinics");
    std::set<std::string> names;
    for (const auto& c : clinics) {
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            fail(std::string("clinic ") + c.name + ": " + e.what());
        }
        if (!names.insert(c.name).second) fail("duplicate clinic '" + c.name + "'");
    }
    try {
        benchmark.validate();
        trainer.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    for (const auto& [s, t] : pairs) {
        if (!names.count(s) || !names.count(t)) fail("pair " + s + "->" + t + " names an unknown clinic");
        if (s == t) fail("pair " + s + "->" + t + " has equal source and target");
    }
    if (mode != Mode::paired && pairs.empty() && clinics.size() < 2) fail("need two clinics for a clinic pair");
    if (seeds.empty()) fail("no seeds");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("duplicate seeds");
    if (arms.empty() && mode == Mode::matrix) {
        if (methods.empty()) fail("no methods");
        for (const auto& m : methods) {
            try {
                train::parse_variant(m);
            } catch (const std::invalid_argument& e) {
                fail(e.what());
            }
        }
    }
    std::vector<Arm> resolved = resolved_arms();
    std::set<std::string> arm_dirs;
    for (const auto& a : resolved) {
        if (a.name.empty()) fail("arm without a name");
        if (!arm_dirs.insert(sanitize(a.name)).second) fail("arm names collide: '" + a.name + "'");
        try {
            arm_config(*this, a).validate();
        } catch (const std::invalid_argument& e) {
            fail("arm '" + a.name + "': " + e.what());
        }
    }
    if (mode != Mode::matrix && resolved.size() < 2) fail("need at least two arms");
    if (mode == Mode::paired) {
        if (!names.count(paired.source)) fail("paired source '" + paired.source + "' is not a clinic");
        try {
            paired.acquisition_a.validate();
            paired.acquisition_b.validate();
        } catch (const std::invalid_argument& e) {
            fail(std::string("paired acquisition: ") + e.what());
        }
        if (paired.acquisition_a.name == paired.acquisition_b.name) fail("paired acquisitions need distinct names");
    }
    if (!(p_threshold > 0.0 && p_threshold < 1.0)) fail("p_threshold must be in (0, 1)");
    if (example_cases < 0) fail("example_cases must be >= 0");
    if (output_dir.empty()) fail("empty output_dir");
}

void apply_paper_profile(ExperimentConfig& cfg) {
    cfg.benchmark.rows = 256;
    cfg.benchmark.cols = 256;
    cfg.benchmark.subjects_per_clinic = 20;
    cfg.trainer.segmenter = nn::SegmenterConfig::paper();
    cfg.trainer.schedule = train::StageSchedule::paper();
}

Json to_json(const ExperimentConfig& c) {
    Json clinics = Json::array();
    for (const auto& d : c.clinics) clinics.push_back(d);
    Json pairs = Json::array();
    for (const auto& [s, t] : c.pairs) pairs.push_back({s, t});
    Json arms = Json::array();
    for (const auto& a : c.arms) arms.push_back(arm_to_json(a));
    return {{"name", c.name},
            {"mode", mode_name(c.mode)},
            {"clinics", clinics},
            {"benchmark", c.benchmark},
            {"pairs", pairs},
            {"seeds", c.seeds},
            {"methods", c.methods},
            {"arms", arms},
            {"trainer", c.trainer},
            {"paired",
             {{"source", c.paired.source},
              {"acquisition_a", c.paired.acquisition_a},
              {"acquisition_b", c.paired.acquisition_b}}},
            {"eval", {{"p_threshold", c.p_threshold}, {"example_cases", c.example_cases}}},
            {"output_dir", c.output_dir.string()}};
}

ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c;
    {
        Reader r(j, "experiment");
        r("name", c.name);
        std::string mode = mode_name(c.mode);
        r("mode", mode);
        c.mode = parse_mode(mode);
        if (const Json* v = r.find("clinics")) {
            if (!v->is_array()) throw ConfigError("experiment.clinics: expected a list");
            c.clinics.clear();
            for (const auto& e : *v) c.clinics.push_back(synth::domain_from_json(e));
        }
        r("benchmark", c.benchmark);
        if (const Json* v = r.find("pairs")) {
            if (!v->is_array()) throw ConfigError("experiment.pairs: expected a list");
            for (const auto& e : *v) {
                if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
                    throw ConfigError("experiment.pairs: each pair is [source, target]");
                c.pairs.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
            }
        }
        if (const Json* v = r.find("seeds")) {
            if (!v->is_array()) throw ConfigError("experiment.seeds: expected a list");
            c.seeds.clear();
            for (const auto& e : *v) {
                if (!e.is_number_unsigned()) throw ConfigError("experiment.seeds: expected non-negative integers");
                c.seeds.push_back(e.get<std::uint64_t>());
            }
        }
        r("methods", c.methods);
        if (const Json* v = r.find("arms")) {
            if (!v->is_array()) throw ConfigError("experiment.arms: expected a list");
            for (const auto& e : *v) c.arms.push_back(arm_from_json(e));
        }
        r("trainer", c.trainer);
        if (const Json* v = r.find("paired")) {
            Reader p(*v, "experiment.paired");
            p("source", c.paired.source);
            if (const Json* a = p.find("acquisition_a")) c.paired.acquisition_a = synth::domain_from_json(*a);
            if (const Json* b = p.find("acquisition_b")) c.paired.acquisition_b = synth::domain_from_json(*b);
        }
        if (const Json* v = r.find("eval")) {
            Reader e(*v, "experiment.eval");
            e("p_threshold", c.p_threshold);
            e("example_cases", c.example_cases);
        }
        std::string out = c.output_dir.string();
        r("output_dir", out);
        c.output_dir = out;
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    Json j;
    try {
        j = Json::parse(read_text(path));
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

bool ResultsBundle::any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.status == CellStatus::failed; });
}
bool ResultsBundle::any_degenerate() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.degenerate; });
}
std::size_t ResultsBundle::trained() const {
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return c.status == CellStatus::done; }));
}

int exit_code(const ResultsBundle& b) {
    if (b.any_failed()) return 4;
    if (b.any_degenerate()) return 3;
    return 0;
}

ExperimentData make_pair_data(const synth::Benchmark& bm, const std::string& source, const std::string& target) {
    const auto& S = bm.clinic(source);
    const auto& T = bm.clinic(target);
    ExperimentData d;
    d.name = source + "->" + target;
    d.train.source_train = gather_samples(S.samples, S.source_split.train);
    d.train.source_val = gather_samples(S.samples, S.source_split.val);
    for (auto i : T.target_split.train) d.train.target_train.emplace_back(T.samples[i].id, T.samples[i].image);
    d.train.target_train_labeled = gather_samples(T.samples, T.target_split.train);
    d.target_test = gather_samples(T.samples, T.target_split.test);
    d.source_test = gather_samples(S.samples, S.source_split.test);
    return d;
}

ExperimentData make_paired_data(const ExperimentConfig& cfg) {
    const auto bm = synth::build_benchmark(cfg.clinics, cfg.benchmark);
    const auto& S = bm.clinic(cfg.paired.source);
    const auto ps = synth::build_paired(cfg.paired.acquisition_a, cfg.paired.acquisition_b, cfg.benchmark, 1);
    ExperimentData d;
    d.name = "paired";
    d.train.source_train = gather_samples(S.samples, S.source_split.train);
    d.train.source_val = gather_samples(S.samples, S.source_split.val);
    for (auto i : ps.split.train) {
        const auto& [a, b] = ps.pairs[i];
        d.train.target_train.emplace_back(a.id, a.image, b.image);
        d.train.target_train_labeled.push_back(a);
        d.train.target_train_labeled.push_back(b);
    }
    for (auto i : ps.split.test) {
        d.paired_test.push_back(ps.pairs[i]);
        d.target_test.push_back(ps.pairs[i].first);
    }
    for (auto i : ps.split.test) d.target_test.push_back(ps.pairs[i].second);
    d.source_test = gather_samples(S.samples, S.source_split.test);
    return d;
}

std::string cell_dir_name(const std::string& experiment, const std::string& arm, std::uint64_t seed) {
    return sanitize(experiment) + "/" + sanitize(arm) + "/seed" + std::to_string(seed);
}

train::TrainerConfig arm_config(const ExperimentConfig& cfg, const Arm& arm) {
    train::TrainerConfig t = cfg.trainer;
    if (arm.consistency_augmentation) t.consistency_augmentation = *arm.consistency_augmentation;
    if (arm.supervised_augmentation) t.supervised_augmentation = *arm.supervised_augmentation;
    return t;
}

std::uint64_t cell_hash(const ExperimentConfig& cfg, const Arm& arm, const ExperimentData& data, std::uint64_t seed) {
    const Json key = {{"experiment", data.name},
                      {"arm", arm_to_json(arm)},
                      {"trainer", arm_config(cfg, arm)},
                      {"seed", seed},
                      {"example_cases", cfg.example_cases}};
    train::TrainData tests;
    tests.source_train = data.target_test;
    tests.source_val = data.source_test;
    return splitmix64(fnv1a64(key.dump()) ^ data.train.fingerprint() ^ splitmix64(tests.fingerprint()));
}

CellEvaluation evaluate_cell(nn::Segmenter& f, const ExperimentData& data) {
    auto score = [&](const std::vector<LabeledSample>& v) {
        std::vector<Image2D> images;
        for (const auto& s : v) images.push_back(s.image);
        const auto probs = train::predict(f, images);
        std::vector<eval::CaseMetrics> out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(eval::evaluate_case(v[i].id, binarize(probs[i]), v[i].mask, v[i].image.spacing()));
        return out;
    };
    CellEvaluation ev;
    ev.target = score(data.target_test);
    ev.source = score(data.source_test);
    if (!data.paired_test.empty()) {
        std::vector<Image2D> a, b;
        for (const auto& [x, y] : data.paired_test) {
            a.push_back(x.image);
            b.push_back(y.image);
        }
        const auto pa = train::predict(f, a), pb = train::predict(f, b);
        for (std::size_t i = 0; i < a.size(); ++i) {
            // Agreement between the two acquisitions, with the first as reference.
            const auto& id = data.paired_test[i].first.id;
            ev.agreement.push_back(eval::evaluate_case(id, binarize(pb[i]), binarize(pa[i]), a[i].spacing()));
        }
    }
    return ev;
}

namespace {

const char* kIndex = "bundle.json";
const char* kDone = "done.json";
const char* kFailure = "failure.json";

struct CellPlan {
    std::string experiment;
    Arm arm;
    std::uint64_t seed;
    const ExperimentData* data;
};

std::string status_name(CellStatus s) {
    switch (s) {
    case CellStatus::done:
    case CellStatus::cached: return "ok";
    case CellStatus::failed: return "failed";
    }
    return "?";
}

void write_index(const ResultsBundle& b) {
    Json cells = Json::array();
    for (const auto& c : b.cells)
        cells.push_back({{"experiment", c.experiment},
                         {"arm", c.arm},
                         {"seed", c.seed},
                         {"dir", c.dir.string()},
                         {"status", status_name(c.status)},
                         {"hash", hex64(c.hash)},
                         {"degenerate", c.degenerate},
                         {"error", c.error}});
    // The index is relocatable: the root is wherever it is read from.
    Json config = to_json(b.config);
    config.erase("output_dir");
    write_text(b.root / kIndex, Json{{"config", config}, {"cells", cells}}.dump(1) + "\n");
}

// A cell is complete when done.json exists and matches the expected hash.
std::optional<Json> completed(const fs::path& dir, std::uint64_t hash) {
    const fs::path p = dir / kDone;
    if (!fs::exists(p)) return std::nullopt;
    try {
        Json j = Json::parse(read_text(p));
        if (j.at("hash").get<std::string>() == hex64(hash)) return j;
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

void write_examples(const fs::path& dir, nn::Segmenter& f, const ExperimentData& data, int count) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), data.target_test.size());
    std::vector<Image2D> images;
    for (std::size_t i = 0; i < n; ++i) images.push_back(data.target_test[i].image);
    const auto probs = train::predict(f, images);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string k = std::to_string(i);
        io::write_npy(dir / ("example" + k + "_image.npy"), images[i].pixels());
        io::write_npy(dir / ("example" + k + "_mask.npy"), data.target_test[i].mask.labels());
        io::write_npy(dir / ("example" + k + "_pred.npy"), binarize(probs[i]).labels());
    }
}

CellResult run_cell(const ResultsBundle& b, const CellPlan& plan, train::Stage1Cache& cache) {
    CellResult r;
    r.experiment = plan.experiment;
    r.arm = plan.arm.name;
    r.seed = plan.seed;
    r.dir = fs::path("cells") / cell_dir_name(plan.experiment, plan.arm.name, plan.seed);
    r.hash = cell_hash(b.config, plan.arm, *plan.data, plan.seed);
    const fs::path dir = b.root / r.dir;
    if (auto done = completed(dir, r.hash)) {
        r.status = CellStatus::cached;
        r.degenerate = done->at("degenerate").get<bool>();
        return r;
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    try {
        const auto tcfg = arm_config(b.config, plan.arm);
        auto result = train::train_method(plan.arm.method, plan.data->train, tcfg, plan.seed, &cache);
        nn::save_checkpoint(dir / "checkpoint.ckpt", result.checkpoint);
        result.manifest.checkpoints["final"] = "checkpoint.ckpt";
        write_text(dir / "manifest.jsonl", result.manifest.to_jsonl());
        write_text(dir / "metrics.jsonl", result.manifest.metrics_jsonl());
        SeededRng init(0);
        nn::Segmenter f(tcfg.segmenter, init);
        f.load(result.checkpoint.segmenter);
        const auto ev = evaluate_cell(f, *plan.data);
        eval::write_case_metrics_csv(dir / "target_cases.csv", ev.target);
        eval::write_case_metrics_csv(dir / "source_cases.csv", ev.source);
        if (!ev.agreement.empty()) eval::write_case_metrics_csv(dir / "agreement_cases.csv", ev.agreement);
        write_examples(dir, f, *plan.data, b.config.example_cases);
        Json digests = Json::object();
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) digests[e.path().filename().string()] = hex64(file_digest(e.path()));
        r.degenerate = result.manifest.degenerate;
        write_text(dir / kDone, Json{{"hash", hex64(r.hash)},
                                     {"experiment", r.experiment},
                                     {"arm", r.arm},
                                     {"method", train::variant_name(plan.arm.method)},
                                     {"seed", r.seed},
                                     {"degenerate", r.degenerate},
                                     {"files", digests}}
                                    .dump(1) + "\n");
        r.status = CellStatus::done;
    } catch (const std::exception& e) {
        r.status = CellStatus::failed;
        r.error = e.what();
        write_text(dir / kFailure, Json{{"hash", hex64(r.hash)}, {"error", r.error}}.dump(1) + "\n");
    }
    return r;
}

ResultsBundle execute(const ExperimentConfig& cfg, const std::vector<ExperimentData>& data) {
    ResultsBundle b;
    b.root = cfg.output_dir;
    b.config = cfg;
    fs::create_directories(b.root);
    train::Stage1Cache cache(b.root / "stage1_cache");
    const auto arms = cfg.resolved_arms();
    for (const auto& d : data)
        for (auto seed : cfg.seeds)
            for (const auto& arm : arms) {
                b.cells.push_back(run_cell(b, {d.name, arm, seed, &d}, cache));
                write_index(b);
            }
    write_index(b);
    return b;
}

ResultsBundle run_pairs(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto bm = synth::build_benchmark(cfg.clinics, cfg.benchmark);
    std::vector<ExperimentData> data;
    for (const auto& p : cfg.resolved_pairs()) data.push_back(make_pair_data(bm, p.first, p.second));
    return execute(cfg, data);
}

}  // namespace

ResultsBundle run_matrix(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.mode = Mode::matrix;
    return run_pairs(c);
}

ResultsBundle run_ablation(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.mode = Mode::ablation;
    return run_pairs(c);
}

ResultsBundle run_paired(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.mode = Mode::paired;
    c.validate();
    return run_paired(c, make_paired_data(c));
}

ResultsBundle run_paired(const ExperimentConfig& cfg, const ExperimentData& data) {
    if (!data.train.paired() || data.paired_test.empty())
        throw std::invalid_argument("run_paired: target data of '" + data.name + "' is not paired");
    ExperimentConfig c = cfg;
    c.mode = Mode::paired;
    c.validate();
    return execute(c, {data});
}

ResultsBundle run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.mode) {
    case Mode::matrix: return run_matrix(cfg);
    case Mode::ablation: return run_ablation(cfg);
    case Mode::paired: return run_paired(cfg);
    }
    throw std::logic_error("run_experiment: bad mode");
}

ResultsBundle load_bundle(const fs::path& root) {
    const fs::path p = root / kIndex;
    if (!fs::exists(p)) throw std::runtime_error("no bundle index at " + p.string());
    const Json j = Json::parse(read_text(p));
    ResultsBundle b;
    b.root = root;
    Json config = j.at("config");
    config["output_dir"] = root.string();
    b.config = config_from_json(config);
    for (const auto& c : j.at("cells")) {
        CellResult r;
        r.experiment = c.at("experiment").get<std::string>();
        r.arm = c.at("arm").get<std::string>();
        r.seed = c.at("seed").get<std::uint64_t>();
        r.dir = c.at("dir").get<std::string>();
        r.status = c.at("status").get<std::string>() == "ok" ? CellStatus::cached : CellStatus::failed;
        r.hash = parse_hex64(c.at("hash").get<std::string>());
        r.degenerate = c.at("degenerate").get<bool>();
        r.error = c.at("error").get<std::string>();
        b.cells.push_back(std::move(r));
    }
    return b;
}

std::string case_set_name(CaseSet s) {
    switch (s) {
    case CaseSet::target: return "target";
    case CaseSet::source: return "source";
    case CaseSet::agreement: return "agreement";
    }
    return "?";
}

std::vector<eval::CaseMetrics> read_cases(const ResultsBundle& b, const CellResult& c, CaseSet s) {
    return eval::read_case_metrics_csv(b.root / c.dir / (case_set_name(s) + "_cases.csv"));
}

double median_target_dice(const ResultsBundle& b, const CellResult& c) {
    return eval::median_iqr(eval::defined_values(read_cases(b, c, CaseSet::target), eval::Metric::dice)).median;
}

namespace {

std::vector<std::string> experiments_of(const ResultsBundle& b) {
    std::vector<std::string> out;
    for (const auto& c : b.cells)
        if (std::find(out.begin(), out.end(), c.experiment) == out.end()) out.push_back(c.experiment);
    return out;
}

std::vector<std::string> arms_of(const ResultsBundle& b, const std::string& experiment) {
    std::vector<std::string> out;
    for (const auto& c : b.cells)
        if (c.experiment == experiment && std::find(out.begin(), out.end(), c.arm) == out.end()) out.push_back(c.arm);
    return out;
}

const CellResult* find_cell(const ResultsBundle& b, const std::string& e, const std::string& arm, std::uint64_t seed) {
    for (const auto& c : b.cells)
        if (c.experiment == e && c.arm == arm && c.seed == seed) return &c;
    return nullptr;
}

std::vector<std::uint64_t> seeds_of(const ResultsBundle& b, const std::string& e) {
    std::vector<std::uint64_t> seeds;
    for (const auto& c : b.cells)
        if (c.experiment == e && std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
    return seeds;
}

// Arms of an experiment that finished on every seed; a failed arm is left
// out of the tables rather than the seed.
std::vector<std::string> complete_arms(const ResultsBundle& b, const std::string& e) {
    const auto seeds = seeds_of(b, e);
    std::vector<std::string> out;
    for (const auto& a : arms_of(b, e)) {
        const bool ok = std::all_of(seeds.begin(), seeds.end(), [&](std::uint64_t s) {
            const auto* c = find_cell(b, e, a, s);
            return c && c->status != CellStatus::failed;
        });
        if (ok) out.push_back(a);
    }
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string metric_label(eval::Metric m) {
    switch (m) {
    case eval::Metric::dice: return "Dice";
    case eval::Metric::hd95: return "HD95 (mm)";
    case eval::Metric::vd: return "VD";
    case eval::Metric::recall: return "Recall";
    }
    return eval::metric_name(m);
}

std::string bold(const std::string& s) { return "**" + s + "**"; }

// Cases of one arm pooled over seeds; ids carry the seed so that the
// ranking pairs the same case of the same seed.
std::vector<eval::CaseMetrics> pooled(const ResultsBundle& b, const std::string& e, const std::string& arm,
                                      const std::vector<std::uint64_t>& seeds, CaseSet s) {
    std::vector<eval::CaseMetrics> out;
    for (auto seed : seeds) {
        for (auto c : read_cases(b, *find_cell(b, e, arm, seed), s)) {
            c.case_id = "s" + std::to_string(seed) + "/" + c.case_id;
            out.push_back(std::move(c));
        }
    }
    return out;
}

Table metric_table(const ResultsBundle& b, const std::string& e, CaseSet set) {
    const auto arms = complete_arms(b, e);
    const auto seeds = seeds_of(b, e);
    std::vector<eval::MethodCases> methods;
    for (const auto& a : arms) methods.push_back({a, pooled(b, e, a, seeds, set)});
    const auto t = eval::significance_ranking(methods, b.config.p_threshold);
    Table tab;
    tab.title = e + " " + case_set_name(set);
    tab.header = {"Method"};
    for (auto m : t.metrics) tab.header.push_back(metric_label(m));
    tab.header.push_back("Rank");
    if (set == CaseSet::target) tab.header.push_back("Guard");
    const double best_final = *std::min_element(t.final_rank.begin(), t.final_rank.end());
    const double worst_final = *std::max_element(t.final_rank.begin(), t.final_rank.end());
    for (std::size_t i = 0; i < arms.size(); ++i) {
        std::vector<std::string> row{arms[i]};
        for (std::size_t m = 0; m < t.metrics.size(); ++m) {
            const auto& r = t.rank[m];
            const int best = *std::min_element(r.begin(), r.end()), worst = *std::max_element(r.begin(), r.end());
            std::string cell = eval::format_median_iqr(eval::median_iqr(eval::defined_values(methods[i].cases, t.metrics[m])));
            row.push_back(r[i] == best && best < worst ? bold(cell) : cell);
        }
        const std::string rank = fmt("%.3f", t.final_rank[i]);
        row.push_back(t.final_rank[i] == best_final && best_final < worst_final ? bold(rank) : rank);
        if (set == CaseSet::target) {
            int tripped = 0;
            for (auto seed : seeds) tripped += find_cell(b, e, arms[i], seed)->degenerate ? 1 : 0;
            row.push_back(tripped ? "tripped " + std::to_string(tripped) + "/" + std::to_string(seeds.size()) : "ok");
        }
        tab.rows.push_back(std::move(row));
    }
    return tab;
}

}  // namespace

std::vector<std::pair<std::string, double>> seed_averaged_ranks(const ResultsBundle& b, const std::string& e) {
    const auto arms = complete_arms(b, e);
    std::vector<eval::RankTable> tables;
    if (arms.size() < 2) return {};
    const auto seeds = seeds_of(b, e);
    for (auto seed : seeds) {
        std::vector<eval::MethodCases> methods;
        for (const auto& a : arms) methods.push_back({a, read_cases(b, *find_cell(b, e, a, seed), CaseSet::target)});
        tables.push_back(eval::significance_ranking(methods, b.config.p_threshold));
    }
    std::vector<std::pair<std::string, double>> out;
    if (tables.empty()) return out;
    const auto mean = eval::aggregate_ranks(tables);
    for (std::size_t i = 0; i < arms.size(); ++i) out.emplace_back(arms[i], mean[i]);
    return out;
}

ReportModel build_report_model(const ResultsBundle& b) {
    ReportModel m;
    const auto exps = experiments_of(b);
    std::vector<std::string> ranked;
    for (const auto& e : exps) {
        if (complete_arms(b, e).size() < 2) {
            m.warnings.push_back(e + ": fewer than two complete arms, nothing to rank");
            continue;
        }
        m.tables.push_back(metric_table(b, e, CaseSet::target));
        m.tables.push_back(metric_table(b, e, CaseSet::source));
        if (b.config.mode == Mode::paired) m.tables.push_back(metric_table(b, e, CaseSet::agreement));
        ranked.push_back(e);
    }
    for (const auto& c : b.cells)
        if (c.status == CellStatus::failed) m.warnings.push_back(c.dir.string() + ": failed: " + c.error);
    if (b.cells.empty()) m.warnings.push_back("empty bundle: no cells");
    if (ranked.empty()) return m;

    // Per-seed significance ranks, averaged over seeds, then over experiments.
    Table avg;
    avg.title = "Average significance rank";
    avg.header = {"Method"};
    for (const auto& e : ranked) avg.header.push_back(e);
    avg.header.push_back("Mean");
    std::map<std::string, std::vector<double>> per_arm;
    std::vector<std::string> arm_order;
    for (const auto& e : ranked)
        for (const auto& [arm, r] : seed_averaged_ranks(b, e)) {
            if (!per_arm.count(arm)) arm_order.push_back(arm);
            per_arm[arm].push_back(r);
        }
    std::vector<double> means;
    for (const auto& a : arm_order) {
        double s = 0;
        for (double v : per_arm[a]) s += v;
        means.push_back(s / static_cast<double>(per_arm[a].size()));
    }
    const double best = *std::min_element(means.begin(), means.end());
    const double worst = *std::max_element(means.begin(), means.end());
    for (std::size_t i = 0; i < arm_order.size(); ++i) {
        std::vector<std::string> row{arm_order[i]};
        for (const auto& e : ranked) {
            std::string cell = "n/a";
            for (const auto& [arm, r] : seed_averaged_ranks(b, e))
                if (arm == arm_order[i]) cell = fmt("%.3f", r);
            row.push_back(cell);
        }
        const std::string mean = fmt("%.3f", means[i]);
        row.push_back(means[i] == best && best < worst ? bold(mean) : mean);
        avg.rows.push_back(std::move(row));
    }
    m.tables.push_back(std::move(avg));
    return m;
}

std::string render_report(const ReportModel& m, const std::vector<std::string>& figures) {
    std::ostringstream os;
    os << "# Results\n\n";
    os << "Cells show median(IQR) over test cases pooled across seeds. Bold marks the best significance rank "
          "in a column when it is not shared by every method.\n\n";
    for (const auto& w : m.warnings) os << "> warning: " << w << "\n";
    if (!m.warnings.empty()) os << "\n";
    for (const auto& t : m.tables) {
        os << "### " << t.title << "\n\n";
        os << "|";
        for (const auto& h : t.header) os << " " << h << " |";
        os << "\n|";
        for (std::size_t i = 0; i < t.header.size(); ++i) os << "---|";
        os << "\n";
        for (const auto& r : t.rows) {
            os << "|";
            for (const auto& c : r) os << " " << c << " |";
            os << "\n";
        }
        os << "\n";
    }
    for (const auto& f : figures) os << f << "\n";
    return os.str();
}

std::vector<Table> parse_report_tables(const std::string& markdown) {
    std::vector<Table> out;
    std::istringstream in(markdown);
    std::string line;
    Table* cur = nullptr;
    int row_index = 0;
    auto cells = [](const std::string& l) {
        std::vector<std::string> v;
        std::size_t p = 1;
        while (p < l.size()) {
            const std::size_t q = l.find('|', p);
            if (q == std::string::npos) break;
            std::string c = l.substr(p, q - p);
            const auto a = c.find_first_not_of(' '), z = c.find_last_not_of(' ');
            v.push_back(a == std::string::npos ? "" : c.substr(a, z - a + 1));
            p = q + 1;
        }
        return v;
    };
    while (std::getline(in, line)) {
        if (line.rfind("### ", 0) == 0) {
            out.push_back({line.substr(4), {}, {}});
            cur = &out.back();
            row_index = 0;
        } else if (cur && !line.empty() && line[0] == '|') {
            if (row_index == 0) cur->header = cells(line);
            else if (row_index > 1) cur->rows.push_back(cells(line));
            ++row_index;
        } else if (line.empty() && row_index > 0) {
            cur = nullptr;
        }
    }
    return out;
}

namespace {

std::vector<double> epoch_losses(const fs::path& manifest) {
    std::vector<double> y;
    std::istringstream in(read_text(manifest));
    std::string line;
    while (std::getline(in, line)) {
        const Json j = Json::parse(line);
        if (j.value("type", "") == "epoch") y.push_back(j.at("total").get<double>());
    }
    return y;
}

const char* colour_name(std::size_t k) {
    static const char* names[] = {"blue", "orange", "green", "red", "purple", "brown", "pink", "grey"};
    return names[k % std::size(names)];
}

}  // namespace

fs::path make_report(const ResultsBundle& b) {
    const fs::path dir = b.root / "report";
    fs::create_directories(dir);
    const ReportModel m = build_report_model(b);
    std::vector<std::string> figures;
    for (const auto& e : experiments_of(b)) {
        const auto arms = complete_arms(b, e);
        if (arms.empty()) continue;
        const std::uint64_t seed = seeds_of(b, e).front();
        std::vector<plot::Series> series;
        std::string legend;
        for (std::size_t k = 0; k < arms.size(); ++k) {
            const auto* c = find_cell(b, e, arms[k], seed);
            series.push_back({arms[k], epoch_losses(b.root / c->dir / "manifest.jsonl")});
            legend += (k ? ", " : "") + arms[k] + " " + colour_name(k);
        }
        const std::string stem = sanitize(e);
        plot::write_png(dir / ("loss_" + stem + ".png"), plot::line_chart(series));
        figures.push_back("## " + e + " figures\n\n![training objective per epoch, seed " + std::to_string(seed) +
                          "](loss_" + stem + ".png)\n\nTraining objective per epoch over all stages: " + legend + ".\n");

        // Example strip: one row per stored case, the image with its
        // reference outline first, then each arm's prediction.
        const auto* first = find_cell(b, e, arms.front(), seed);
        std::vector<int> cases;
        for (int i = 0; fs::exists(b.root / first->dir / ("example" + std::to_string(i) + "_image.npy")); ++i)
            cases.push_back(i);
        if (cases.empty()) continue;
        const int zoom = 3, gap = 4;
        const auto probe = io::read_npy_f8(b.root / first->dir / "example0_image.npy");
        const int tw = static_cast<int>(probe.cols()) * zoom, th = static_cast<int>(probe.rows()) * zoom;
        plot::Canvas strip(static_cast<int>(arms.size() + 1) * (tw + gap) + gap,
                           static_cast<int>(cases.size()) * (th + gap) + gap, {255, 255, 255});
        for (std::size_t r = 0; r < cases.size(); ++r) {
            const std::string k = std::to_string(cases[r]);
            const auto image = io::read_npy_f8(b.root / first->dir / ("example" + k + "_image.npy"));
            const BinMask ref(io::read_npy_u1(b.root / first->dir / ("example" + k + "_mask.npy")));
            const int y = gap + static_cast<int>(r) * (th + gap);
            strip.blit(plot::render_slice(image, &ref, nullptr, zoom), gap, y);
            for (std::size_t a = 0; a < arms.size(); ++a) {
                const auto* c = find_cell(b, e, arms[a], seed);
                const BinMask pred(io::read_npy_u1(b.root / c->dir / ("example" + k + "_pred.npy")));
                strip.blit(plot::render_slice(image, &ref, &pred, zoom), gap + static_cast<int>(a + 1) * (tw + gap), y);
            }
        }
        plot::write_png(dir / ("examples_" + stem + ".png"), strip);
        std::string cols = "image";
        for (const auto& a : arms) cols += ", " + a;
        figures.push_back("![example segmentations](examples_" + stem + ".png)\n\nColumns: " + cols +
                          ". Reference outline green, prediction red.\n");
    }
    write_text(dir / "report.md", render_report(m, figures));
    if (!m.warnings.empty()) {
        std::string w;
        for (const auto& s : m.warnings) w += s + "\n";
        write_text(dir / "warnings.txt", w);
    } else {
        fs::remove(dir / "warnings.txt");
    }
    return dir / "report.md";
}

VerifyResult verify_bundle(const ResultsBundle& b) {
    VerifyResult v;
    for (const auto& c : b.cells) {
        if (c.status == CellStatus::failed) continue;
        ++v.cells_checked;
        const fs::path dir = b.root / c.dir;
        Json done;
        try {
            done = Json::parse(read_text(dir / kDone));
        } catch (const std::exception& e) {
            v.mismatches.push_back(c.dir.string() + ": " + e.what());
            continue;
        }
        if (done.at("hash").get<std::string>() != hex64(c.hash))
            v.mismatches.push_back(c.dir.string() + ": hash differs from the bundle index");
        for (const auto& [name, digest] : done.at("files").items()) {
            const fs::path p = dir / name;
            if (!fs::exists(p)) v.mismatches.push_back(c.dir.string() + "/" + name + ": missing");
            else if (hex64(file_digest(p)) != digest.get<std::string>())
                v.mismatches.push_back(c.dir.string() + "/" + name + ": digest mismatch");
        }
    }
    const fs::path report = b.root / "report" / "report.md";
    if (!fs::exists(report)) {
        v.mismatches.push_back("report/report.md: missing");
        return v;
    }
    const auto expected = build_report_model(b).tables;
    const auto found = parse_report_tables(read_text(report));
    if (expected.size() != found.size())
        v.mismatches.push_back("report has " + std::to_string(found.size()) + " tables, expected " +
                               std::to_string(expected.size()));
    for (std::size_t t = 0; t < std::min(expected.size(), found.size()); ++t) {
        const auto& e = expected[t];
        const auto& f = found[t];
        if (e.title != f.title) v.mismatches.push_back("table " + std::to_string(t) + ": title '" + f.title + "'");
        if (e.header != f.header) v.mismatches.push_back(e.title + ": header differs");
        if (e.rows.size() != f.rows.size()) {
            v.mismatches.push_back(e.title + ": row count differs");
            continue;
        }
        for (std::size_t r = 0; r < e.rows.size(); ++r) {
            if (e.rows[r].size() != f.rows[r].size()) {
                v.mismatches.push_back(e.title + " row " + std::to_string(r) + ": column count differs");
                continue;
            }
            for (std::size_t k = 1; k < e.rows[r].size(); ++k) {
                ++v.numbers_checked;
                if (e.rows[r][k] != f.rows[r][k])
                    v.mismatches.push_back(e.title + " / " + e.rows[r][0] + " / " + e.header[k] + ": report '" +
                                           f.rows[r][k] + "', recomputed '" + e.rows[r][k] + "'");
            }
        }
    }
    return v;
}

}  // namespace augda::run
