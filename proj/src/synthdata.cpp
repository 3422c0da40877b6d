#include "augda/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace augda::synth {

void DomainSpec::validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("DomainSpec " + name + ": gamma must be > 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("DomainSpec " + name + ": noise sigma must be >= 0");
    if (!(blur_sigma >= 0.0)) throw std::invalid_argument("DomainSpec " + name + ": blur must be >= 0");
    if (!(bias_strength >= 0.0)) throw std::invalid_argument("DomainSpec " + name + ": bias strength must be >= 0");
    if (!(spacing.row_mm > 0.0) || !(spacing.col_mm > 0.0))
        throw std::invalid_argument("DomainSpec " + name + ": spacing must be > 0");
    if (!(lesion_contrast > 0.0)) throw std::invalid_argument("DomainSpec " + name + ": lesion contrast must be > 0");
    if (!(gain > 0.0)) throw std::invalid_argument("DomainSpec " + name + ": gain must be > 0");
}

DomainSpec preset(const std::string& name) {
    DomainSpec d;
    d.name = name;
    if (name == "A") {
        d.gamma = 1.0;
        d.noise_sigma = 0.03;
        d.blur_sigma = 0.5;
        d.bias_strength = 0.1;
        d.spacing = {1.0, 1.0};
        d.lesion_contrast = 2.0;
        d.gain = 1.0;
    } else if (name == "B") {
        d.gamma = 1.2;
        d.noise_sigma = 0.05;
        d.blur_sigma = 0.8;
        d.bias_strength = 0.2;
        d.spacing = {1.2, 1.2};
        d.lesion_contrast = 1.9;
        d.gain = 0.85;
    } else if (name == "C") {
        d.gamma = 0.8;
        d.noise_sigma = 0.04;
        d.blur_sigma = 1.0;
        d.bias_strength = 0.25;
        d.spacing = {1.0, 0.9};
        d.lesion_contrast = 1.8;
        d.gain = 1.2;
    } else if (name == "extreme") {
        d.gamma = 2.2;
        d.noise_sigma = 0.1;
        d.blur_sigma = 1.4;
        d.bias_strength = 0.4;
        d.spacing = {1.0, 1.0};
        d.lesion_contrast = 1.45;
        d.gain = 0.5;
    } else {
        throw std::invalid_argument("unknown domain preset '" + name + "'");
    }
    return d;
}

std::vector<std::string> preset_names() { return {"A", "B", "C", "extreme"}; }

namespace {

// Ellipse membership value: < 1 inside.
double ellipse_value(const SubjectPhantom& s, double r, double c, double scale) {
    const double t = s.angle_deg * std::numbers::pi / 180.0;
    const double dr = r - s.center_row, dc = c - s.center_col;
    const double a = std::cos(t) * dr + std::sin(t) * dc;
    const double b = -std::sin(t) * dr + std::cos(t) * dc;
    const double sr = s.semi_row * scale, sc = s.semi_col * scale;
    return (a * a) / (sr * sr) + (b * b) / (sc * sc);
}

double lesion_profile(const SubjectPhantom& s, double r, double c) {
    double g = 0.0;
    for (const auto& l : s.lesions) {
        const double d2 = (r - l.row) * (r - l.row) + (c - l.col) * (c - l.col);
        g = std::max(g, std::exp(-d2 / (2.0 * l.radius * l.radius)));
    }
    return g;
}

bool valid_phantom(const SubjectPhantom& s) {
    const auto anatomy = anatomy_mask(s);
    const auto lesion = lesion_mask(s);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c)
            if (lesion.at(r, c) && !anatomy.at(r, c)) return false;
    const double f = static_cast<double>(lesion.count()) / static_cast<double>(anatomy.count());
    return f >= 1e-3 && f <= 0.1;
}

Grid<double> gaussian_blur(const Grid<double>& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
    double sum = 0.0;
    for (int i = -rad; i <= rad; ++i) sum += k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    const long R = static_cast<long>(in.rows()), C = static_cast<long>(in.cols());
    Grid<double> tmp(in.rows(), in.cols(), 0.0), out(in.rows(), in.cols(), 0.0);
    for (long r = 0; r < R; ++r)
        for (long c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const long cc = c + i;
                if (cc >= 0 && cc < C) acc += k[static_cast<std::size_t>(i + rad)] * in(r, cc);
            }
            tmp(r, c) = acc;
        }
    for (long r = 0; r < R; ++r)
        for (long c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const long rr = r + i;
                if (rr >= 0 && rr < R) acc += k[static_cast<std::size_t>(i + rad)] * tmp(rr, c);
            }
            out(r, c) = acc;
        }
    return out;
}

}  // namespace

SubjectPhantom sample_phantom(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    if (rows < 16 || cols < 16) throw std::invalid_argument("sample_phantom: image must be at least 16x16");
    SeededRng rng(seed);
    const double sr = rows / 64.0, sc = cols / 64.0;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        SubjectPhantom s;
        s.seed = seed;
        s.rows = rows;
        s.cols = cols;
        s.center_row = (rows - 1) / 2.0 + rng.uniform(-2.0, 2.0) * sr;
        s.center_col = (cols - 1) / 2.0 + rng.uniform(-2.0, 2.0) * sc;
        s.semi_row = rng.uniform(21.0, 26.0) * sr;
        s.semi_col = rng.uniform(17.0, 22.0) * sc;
        s.angle_deg = rng.uniform(-15.0, 15.0);
        s.ventricle_scale = rng.uniform(0.18, 0.3);
        for (int k = 0; k < 3; ++k) {
            s.texture.push_back(rng.uniform(0.02, 0.05));
            s.texture.push_back(rng.uniform(0.1, 0.4) / sr);
            s.texture.push_back(rng.uniform(0.1, 0.4) / sc);
            s.texture.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
        const int n = 1 + static_cast<int>(rng.below(8));
        const double rmin = std::min(sr, sc);
        while (static_cast<int>(s.lesions.size()) < n) {
            Lesion l;
            l.row = rng.uniform(0.0, rows - 1.0);
            l.col = rng.uniform(0.0, cols - 1.0);
            l.radius = rng.uniform(0.9, 2.6) * rmin;
            if (ellipse_value(s, l.row, l.col, 0.75) < 1.0 && ellipse_value(s, l.row, l.col, s.ventricle_scale * 1.3) > 1.0)
                s.lesions.push_back(l);
        }
        if (valid_phantom(s)) return s;
    }
    throw std::runtime_error("sample_phantom: no valid phantom after 1000 draws");
}

BinMask anatomy_mask(const SubjectPhantom& s) {
    BinMask m(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) m.set(r, c, ellipse_value(s, r, c, 1.0) < 1.0);
    return m;
}

BinMask lesion_mask(const SubjectPhantom& s) {
    BinMask m(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) m.set(r, c, lesion_profile(s, r, c) >= 0.5);
    return m;
}

double lesion_fraction(const SubjectPhantom& s) {
    return static_cast<double>(lesion_mask(s).count()) / static_cast<double>(anatomy_mask(s).count());
}

Grid<double> canonical_image(const SubjectPhantom& s, double lesion_contrast) {
    const double T0 = kTissueLevel;
    const double lesion_level = lesion_contrast * T0;
    Grid<double> g(s.rows, s.cols, 0.0);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) {
            const double e = ellipse_value(s, r, c, 1.0);
            if (e >= 1.0) {
                // thin bright rim just outside the anatomy
                if (ellipse_value(s, r, c, 1.12) < 1.0) g(r, c) = 1.3 * T0;
                continue;
            }
            double tex = 0.0;
            for (std::size_t k = 0; k + 3 < s.texture.size(); k += 4)
                tex += s.texture[k] * std::sin(s.texture[k + 1] * r + s.texture[k + 2] * c + s.texture[k + 3]);
            double v = T0 * (1.0 + tex);
            if (ellipse_value(s, r, c, s.ventricle_scale) < 1.0) v = 0.35 * T0;
            const double p = lesion_profile(s, r, c);
            if (p >= 0.5)
                v = lesion_level;
            else
                v += (lesion_level - v) * (p / 0.5);
            g(r, c) = v;
        }
    return g;
}

LabeledSample render(const SubjectPhantom& subject, const DomainSpec& d, const std::string& id, int domain_id) {
    d.validate();
    SeededRng rng = SeededRng(subject.seed).child("render:" + d.name);
    Grid<double> img = gaussian_blur(canonical_image(subject, d.lesion_contrast), d.blur_sigma);
    // smooth field exp(strength * P), P quadratic with coefficients in [-1, 1]
    std::array<double, 5> coef{};
    for (auto& k : coef) k = rng.uniform(-1.0, 1.0);
    for (std::size_t r = 0; r < img.rows(); ++r)
        for (std::size_t c = 0; c < img.cols(); ++c) {
            const double u = img.cols() > 1 ? 2.0 * c / (img.cols() - 1.0) - 1.0 : 0.0;
            const double v = img.rows() > 1 ? 2.0 * r / (img.rows() - 1.0) - 1.0 : 0.0;
            const double P =
                (coef[0] * u + coef[1] * v + coef[2] * u * u + coef[3] * u * v + coef[4] * v * v) / 2.5;
            double x = std::max(img(r, c), 0.0);
            if (d.gamma != 1.0) x = std::pow(x, d.gamma);
            x *= d.gain;
            if (d.bias_strength > 0.0) x *= std::exp(d.bias_strength * P);
            if (d.noise_sigma > 0.0) x += d.noise_sigma * rng.normal();
            img(r, c) = x;
        }
    return LabeledSample(id, Image2D(std::move(img), d.spacing, domain_id), lesion_mask(subject));
}

std::pair<LabeledSample, LabeledSample> render_paired(const SubjectPhantom& subject, const DomainSpec& a,
                                                      const DomainSpec& b, const std::string& id) {
    if (a == b) throw std::invalid_argument("render_paired: the two domain specs must differ");
    return {render(subject, a, id + "_a", 0), render(subject, b, id + "_b", 1)};
}

void BenchmarkOptions::validate() const {
    if (subjects_per_clinic < 4) throw std::invalid_argument("benchmark: need at least 4 subjects per clinic");
    if (slices_per_subject < 1) throw std::invalid_argument("benchmark: need at least one slice per subject");
    if (rows < 16 || cols < 16) throw std::invalid_argument("benchmark: images must be at least 16x16");
}

const Clinic& Benchmark::clinic(const std::string& name) const {
    for (const auto& c : clinics)
        if (c.spec.name == name) return c;
    throw std::invalid_argument("benchmark has no clinic '" + name + "'");
}

namespace {

// Expands a split over subjects to the samples of those subjects.
DatasetSplit expand(const DatasetSplit& by_subject, int slices) {
    DatasetSplit out;
    out.fractions = by_subject.fractions;
    auto grow = [&](const std::vector<std::size_t>& subj, std::vector<std::size_t>& dst) {
        for (auto s : subj)
            for (int k = 0; k < slices; ++k) dst.push_back(s * static_cast<std::size_t>(slices) + k);
    };
    grow(by_subject.train, out.train);
    grow(by_subject.val, out.val);
    grow(by_subject.test, out.test);
    return out;
}

std::string subject_id(const std::string& clinic, int subject, int slice) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s_s%02d_z%d", clinic.c_str(), subject, slice);
    return buf;
}

}  // namespace

Benchmark build_benchmark(const std::vector<DomainSpec>& clinic_specs, const BenchmarkOptions& opts) {
    opts.validate();
    if (clinic_specs.size() < 2) throw std::invalid_argument("build_benchmark: need at least two clinics");
    for (std::size_t i = 0; i < clinic_specs.size(); ++i) {
        clinic_specs[i].validate();
        for (std::size_t j = 0; j < i; ++j)
            if (clinic_specs[i].name == clinic_specs[j].name)
                throw std::invalid_argument("build_benchmark: duplicate clinic name '" + clinic_specs[i].name + "'");
    }
    Benchmark b;
    b.options = opts;
    const SeededRng root(opts.seed);
    for (std::size_t k = 0; k < clinic_specs.size(); ++k) {
        Clinic cl;
        cl.spec = clinic_specs[k];
        cl.domain_id = static_cast<int>(k);
        const SeededRng crng = root.child("clinic:" + cl.spec.name);
        for (int s = 0; s < opts.subjects_per_clinic; ++s) {
            const SeededRng srng = crng.child(static_cast<std::uint64_t>(s));
            for (int z = 0; z < opts.slices_per_subject; ++z) {
                const auto phantom = sample_phantom(srng.child(static_cast<std::uint64_t>(z)).next_u64(), opts.rows, opts.cols);
                cl.samples.push_back(render(phantom, cl.spec, subject_id(cl.spec.name, s, z), cl.domain_id));
                cl.subject_of.push_back(s);
            }
        }
        SeededRng src = crng.child("source_split"), tgt = crng.child("target_split");
        const auto n = static_cast<std::size_t>(opts.subjects_per_clinic);
        cl.source_split = expand(make_splits(n, opts.source_fractions, src), opts.slices_per_subject);
        cl.target_split = expand(make_splits(n, opts.target_fractions, tgt), opts.slices_per_subject);
        b.clinics.push_back(std::move(cl));
    }
    return b;
}

PairedSet build_paired(const DomainSpec& a, const DomainSpec& b, const BenchmarkOptions& opts, int first_domain) {
    opts.validate();
    a.validate();
    b.validate();
    PairedSet ps;
    ps.a = a;
    ps.b = b;
    const SeededRng prng = SeededRng(opts.seed).child("paired:" + a.name + "+" + b.name);
    for (int s = 0; s < opts.subjects_per_clinic; ++s) {
        const SeededRng srng = prng.child(static_cast<std::uint64_t>(s));
        for (int z = 0; z < opts.slices_per_subject; ++z) {
            const auto phantom = sample_phantom(srng.child(static_cast<std::uint64_t>(z)).next_u64(), opts.rows, opts.cols);
            const std::string id = subject_id("pair", s, z);
            ps.pairs.emplace_back(render(phantom, a, id + "_a", first_domain),
                                  render(phantom, b, id + "_b", first_domain + 1));
            ps.subject_of.push_back(s);
        }
    }
    SeededRng split = prng.child("split");
    ps.split = expand(make_splits(static_cast<std::size_t>(opts.subjects_per_clinic), opts.target_fractions, split),
                      opts.slices_per_subject);
    return ps;
}

}  // namespace augda::synth
