#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "augda/core.hpp"

namespace augda::synth {

/// Acquisition characteristics of one synthetic "clinic".
struct DomainSpec {
    std::string name = "A";
    double gamma = 1.0;            ///< intensity exponent, applied after blur
    double noise_sigma = 0.0;      ///< additive Gaussian noise
    double blur_sigma = 0.0;       ///< Gaussian PSF width in pixels (resolution proxy)
    double bias_strength = 0.0;    ///< amplitude of the smooth multiplicative field
    Spacing spacing{};
    double lesion_contrast = 2.0;  ///< lesion / mean tissue intensity
    double gain = 1.0;             ///< global intensity scale

    void validate() const;
    bool operator==(const DomainSpec&) const = default;
};

/// Graded presets. "B" is the moderate shift from "A" used by default;
/// "C" is a different-direction shift; "extreme" is built so that
/// intensity augmentation cannot bridge it.
DomainSpec preset(const std::string& name);
std::vector<std::string> preset_names();

struct Lesion {
    double row = 0.0;
    double col = 0.0;
    double radius = 1.0;  ///< Gaussian sigma in pixels; mask is profile >= 0.5
    bool operator==(const Lesion&) const = default;
};

/// Geometry of one slice. Everything a rendering needs except the domain.
struct SubjectPhantom {
    std::uint64_t seed = 0;
    std::size_t rows = 64;
    std::size_t cols = 64;
    double center_row = 32.0, center_col = 32.0;
    double semi_row = 24.0, semi_col = 20.0;  ///< brain ellipse
    double angle_deg = 0.0;
    double ventricle_scale = 0.25;            ///< dark central ellipse, fraction of the brain
    std::vector<double> texture;              ///< (amplitude, freq_r, freq_c, phase) quads
    std::vector<Lesion> lesions;

    bool operator==(const SubjectPhantom&) const = default;
};

/// Draws a valid phantom (lesions inside the anatomy, lesion fraction in
/// [1e-3, 0.1] of the anatomy area). Invalid draws are redrawn.
SubjectPhantom sample_phantom(std::uint64_t seed, std::size_t rows = 64, std::size_t cols = 64);

BinMask anatomy_mask(const SubjectPhantom& s);
BinMask lesion_mask(const SubjectPhantom& s);
/// Lesion pixels over anatomy pixels.
double lesion_fraction(const SubjectPhantom& s);

/// Reference tissue intensity of the canonical rendering.
inline constexpr double kTissueLevel = 0.5;

/// Noise-free, domain-free rendering (what DomainSpec{} with zero knobs
/// produces).
Grid<double> canonical_image(const SubjectPhantom& s, double lesion_contrast);

/// Rendering under a domain. Deterministic in (subject.seed, spec).
LabeledSample render(const SubjectPhantom& subject, const DomainSpec& d, const std::string& id = "", int domain_id = 0);
/// Same geometry under two domains; masks are identical.
std::pair<LabeledSample, LabeledSample> render_paired(const SubjectPhantom& subject, const DomainSpec& a,
                                                      const DomainSpec& b, const std::string& id = "");

/// One clinic of a benchmark. Splits are by subject; `source_split` and
/// `target_split` index `samples` (all slices of a subject stay together).
struct Clinic {
    DomainSpec spec;
    int domain_id = 0;
    std::vector<LabeledSample> samples;
    std::vector<int> subject_of;  ///< subject index per sample
    DatasetSplit source_split;    ///< fractions used when this clinic is the source
    DatasetSplit target_split;    ///< fractions used when it is the target
};

struct BenchmarkOptions {
    int subjects_per_clinic = 20;
    int slices_per_subject = 8;
    std::size_t rows = 64;
    std::size_t cols = 64;
    SplitFractions source_fractions{0.5, 0.25, 0.25};
    SplitFractions target_fractions{0.5, 0.0, 0.5};
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const BenchmarkOptions&) const = default;
};

struct Benchmark {
    BenchmarkOptions options;
    std::vector<Clinic> clinics;

    std::size_t total_subjects() const { return clinics.size() * static_cast<std::size_t>(options.subjects_per_clinic); }
    const Clinic& clinic(const std::string& name) const;
};

/// Subjects of clinic k are seeded from child streams of the benchmark
/// seed, so clinics never share anatomy.
Benchmark build_benchmark(const std::vector<DomainSpec>& clinic_specs, const BenchmarkOptions& opts);

/// Paired-acquisition set: every subject rendered under both `a` and `b`.
/// `pairs[i].first` has domain_id `first_domain`, `.second` `first_domain + 1`.
struct PairedSet {
    DomainSpec a, b;
    std::vector<std::pair<LabeledSample, LabeledSample>> pairs;
    std::vector<int> subject_of;
    DatasetSplit split;  ///< target fractions (train / test)
};

PairedSet build_paired(const DomainSpec& a, const DomainSpec& b, const BenchmarkOptions& opts, int first_domain);

}  // namespace augda::synth
