#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "augda/augment.hpp"
#include "augda/eval.hpp"
#include "augda/losses.hpp"
#include "augda/runner.hpp"
#include "augda/serialize.hpp"
#include "augda/synthdata.hpp"

namespace py = pybind11;
using namespace augda;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Grid<double> to_grid(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Grid<double>(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Grid<double>& g) {
    Array out({g.rows(), g.cols()});
    std::copy(g.values().begin(), g.values().end(), out.mutable_data());
    return out;
}

py::array_t<std::uint8_t> to_array(const BinMask& m) {
    py::array_t<std::uint8_t> out({m.rows(), m.cols()});
    std::copy(m.labels().values().begin(), m.labels().values().end(), out.mutable_data());
    return out;
}

// Any non-zero value is foreground.
BinMask to_mask(const Array& a) {
    const auto g = to_grid(a);
    BinMask m(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) m.set(r, c, g(r, c) != 0.0);
    return m;
}

Spacing to_spacing(std::pair<double, double> s) { return {s.first, s.second}; }

Interpolation parse_interp(const std::string& s) {
    if (s == "linear") return Interpolation::linear;
    if (s == "nearest") return Interpolation::nearest;
    throw std::invalid_argument("interpolation must be 'linear' or 'nearest'");
}

py::dict case_dict(const eval::CaseMetrics& c) {
    py::dict d;
    d["case_id"] = c.case_id;
    d["dice"] = c.dice;
    d["hd95_mm"] = c.hd95_mm;
    d["vd"] = c.vd;
    d["recall"] = c.recall;
    return d;
}

eval::CaseMetrics case_from(const py::dict& d) {
    eval::CaseMetrics c;
    c.case_id = d["case_id"].cast<std::string>();
    c.dice = d["dice"].cast<double>();
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!d.contains(k) || d[k].is_none()) return std::nullopt;
        return d[k].cast<double>();
    };
    c.hd95_mm = opt("hd95_mm");
    c.vd = opt("vd");
    c.recall = opt("recall");
    return c;
}

py::dict domain_dict(const synth::DomainSpec& d) {
    py::dict o;
    o["name"] = d.name;
    o["gamma"] = d.gamma;
    o["noise_sigma"] = d.noise_sigma;
    o["blur_sigma"] = d.blur_sigma;
    o["bias_strength"] = d.bias_strength;
    o["spacing"] = py::make_tuple(d.spacing.row_mm, d.spacing.col_mm);
    o["lesion_contrast"] = d.lesion_contrast;
    o["gain"] = d.gain;
    return o;
}

}  // namespace

PYBIND11_MODULE(_augda, m) {
    m.doc() = "augda native bindings";

    m.def(
        "soft_dice_loss", [](const Array& p, const Array& t, double eps) {
            return soft_dice_loss(ProbMask(to_grid(p)), ProbMask(to_grid(t)), eps);
        },
        py::arg("pred"), py::arg("target"), py::arg("eps") = 1e-5);
    m.def(
        "consistency_loss", [](const Array& a, const Array& b, double eps) {
            return consistency_loss(ProbMask(to_grid(a)), ProbMask(to_grid(b)), eps);
        },
        py::arg("pred_orig_aligned"), py::arg("pred_aug"), py::arg("eps") = 1e-5);
    m.def(
        "total_loss", [](double sup, double cons, double adv, double alpha, double beta) {
            LossWeights w;
            w.alpha = alpha;
            w.beta = beta;
            return total_loss(sup, cons, adv, w);
        },
        py::arg("sup"), py::arg("cons"), py::arg("adv"), py::arg("alpha") = 0.2, py::arg("beta") = 0.3);

    m.def(
        "apply_affine",
        [](const Array& img, double rotation_deg, std::array<double, 2> shear, std::array<double, 2> scale,
           std::array<double, 2> translation, const std::string& interp) {
            AffineParams p;
            p.rotation_deg = rotation_deg;
            p.shear = shear;
            p.scale = scale;
            p.translation = translation;
            p.interpolation = parse_interp(interp);
            return to_array(apply_affine(Image2D(to_grid(img)), p).pixels());
        },
        py::arg("image"), py::arg("rotation_deg") = 0.0, py::arg("shear") = std::array<double, 2>{0, 0},
        py::arg("scale") = std::array<double, 2>{1, 1}, py::arg("translation") = std::array<double, 2>{0, 0},
        py::arg("interpolation") = "linear");
    m.def(
        "apply_bias_field", [](const Array& img, std::vector<double> coefficients, int order) {
            BiasFieldParams b;
            b.order = order;
            b.coefficients = std::move(coefficients);
            return to_array(apply_bias_field(Image2D(to_grid(img)), b).pixels());
        },
        py::arg("image"), py::arg("coefficients"), py::arg("order") = 3);
    m.def(
        "apply_kspace_motion",
        [](const Array& img, const std::vector<std::tuple<double, double, std::array<double, 2>>>& events) {
            MotionParams mp;
            for (const auto& [onset, rot, tr] : events) mp.events.push_back({onset, rot, tr});
            return to_array(apply_kspace_motion(Image2D(to_grid(img)), mp).pixels());
        },
        py::arg("image"), py::arg("events") = std::vector<std::tuple<double, double, std::array<double, 2>>>{},
        "events: (onset, rotation_deg, (drow, dcol)) with strictly increasing onsets");

    m.def(
        "dice_score", [](const Array& a, const Array& b) { return eval::dice_score(to_mask(a), to_mask(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "hd95", [](const Array& a, const Array& b, std::pair<double, double> spacing) {
            return eval::hd95(to_mask(a), to_mask(b), to_spacing(spacing));
        },
        py::arg("a"), py::arg("b"), py::arg("spacing") = std::pair<double, double>{1.0, 1.0});
    m.def(
        "evaluate_case",
        [](const std::string& id, const Array& pred, const Array& gt, std::pair<double, double> spacing) {
            return case_dict(eval::evaluate_case(id, to_mask(pred), to_mask(gt), to_spacing(spacing)));
        },
        py::arg("case_id"), py::arg("pred"), py::arg("gt"), py::arg("spacing") = std::pair<double, double>{1.0, 1.0});
    m.def(
        "wilcoxon_signed_rank",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto r = eval::wilcoxon_signed_rank(x, y);
            py::dict d;
            d["p"] = r.p;
            d["n"] = r.n;
            d["w_plus"] = r.w_plus;
            d["w_minus"] = r.w_minus;
            d["exact"] = r.exact;
            return d;
        },
        py::arg("x"), py::arg("y"));
    m.def("significance_ranking",
          [](const std::vector<std::string>& names, const std::vector<std::vector<py::dict>>& cases, double p) {
              std::vector<eval::MethodCases> methods;
              for (std::size_t i = 0; i < names.size(); ++i) {
                  eval::MethodCases mc{names[i], {}};
                  for (const auto& c : cases.at(i)) mc.cases.push_back(case_from(c));
                  methods.push_back(std::move(mc));
              }
              const auto t = eval::significance_ranking(methods, p);
              py::dict d;
              std::vector<std::string> metrics;
              for (auto mt : t.metrics) metrics.push_back(eval::metric_name(mt));
              d["methods"] = t.methods;
              d["metrics"] = metrics;
              d["rank"] = t.rank;
              d["final_rank"] = t.final_rank;
              d["notes"] = t.notes;
              return d;
          });

    m.def("preset", [](const std::string& name) { return domain_dict(synth::preset(name)); }, py::arg("name"));
    m.def("preset_names", &synth::preset_names);
    m.def(
        "render_subject",
        [](std::uint64_t seed, const std::string& domain, std::size_t rows, std::size_t cols) {
            const auto s = synth::render(synth::sample_phantom(seed, rows, cols), synth::preset(domain));
            return py::make_tuple(to_array(s.image.pixels()), to_array(s.mask));
        },
        py::arg("seed"), py::arg("domain") = "A", py::arg("rows") = 64, py::arg("cols") = 64,
        "(image, lesion mask) of one synthetic subject under a preset acquisition");

    m.def("load_config_json", [](const std::string& path) { return run::to_json(run::load_config(path)).dump(); });
    m.def("run_experiment_json", [](const std::string& config, const std::string& out) {
        auto cfg = run::config_from_json(run::Json::parse(config));
        if (!out.empty()) cfg.output_dir = out;
        py::gil_scoped_release release;
        const auto b = run::run_experiment(cfg);
        run::make_report(b);
        return run::exit_code(b);
    });
    m.def(
        "make_report", [](const std::string& bundle) { return run::make_report(run::load_bundle(bundle)).string(); },
        py::arg("bundle"));
    m.def(
        "verify",
        [](const std::string& bundle) {
            const auto v = run::verify_bundle(run::load_bundle(bundle));
            py::dict d;
            d["cells_checked"] = v.cells_checked;
            d["numbers_checked"] = v.numbers_checked;
            d["mismatches"] = v.mismatches;
            return d;
        },
        py::arg("bundle"));

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
