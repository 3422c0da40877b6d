#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "augda/augment.hpp"
#include "augda/losses.hpp"
#include "augda/nets.hpp"
#include "augda/synthdata.hpp"
#include "augda/trainer.hpp"

// JSON mapping of the configuration types. Readers start from the
// target's current value, so absent keys keep their defaults, and reject
// keys they do not know.

namespace augda {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

void to_json(Json& j, const Interval& v);
void from_json(const Json& j, Interval& v);
void to_json(Json& j, const AffineRanges& v);
void from_json(const Json& j, AffineRanges& v);
void to_json(Json& j, const BiasRanges& v);
void from_json(const Json& j, BiasRanges& v);
void to_json(Json& j, const MotionRanges& v);
void from_json(const Json& j, MotionRanges& v);
void to_json(Json& j, const AugmentationSpec& v);
void from_json(const Json& j, AugmentationSpec& v);
void to_json(Json& j, const AppliedRecord& v);
void to_json(Json& j, const LossWeights& v);
void from_json(const Json& j, LossWeights& v);
void to_json(Json& j, const Spacing& v);
void from_json(const Json& j, Spacing& v);
void to_json(Json& j, const SplitFractions& v);
void from_json(const Json& j, SplitFractions& v);

/// Named augmentation arm ("none", "geometric", "mri", "all") or an object.
AugmentationSpec augmentation_from_json(const Json& j);

}  // namespace augda

namespace augda::nn {
void to_json(Json& j, const SegmenterConfig& v);
void from_json(const Json& j, SegmenterConfig& v);
void to_json(Json& j, const DiscriminatorConfig& v);
void from_json(const Json& j, DiscriminatorConfig& v);
}  // namespace augda::nn

namespace augda::synth {
void to_json(Json& j, const DomainSpec& v);
void from_json(const Json& j, DomainSpec& v);
void to_json(Json& j, const BenchmarkOptions& v);
void from_json(const Json& j, BenchmarkOptions& v);
/// A preset name, or an object with optional "preset" base and overrides.
DomainSpec domain_from_json(const Json& j);
}  // namespace augda::synth

namespace augda::train {
void to_json(Json& j, const Stage1Schedule& v);
void from_json(const Json& j, Stage1Schedule& v);
void to_json(Json& j, const Stage2Schedule& v);
void from_json(const Json& j, Stage2Schedule& v);
void to_json(Json& j, const Stage3Schedule& v);
void from_json(const Json& j, Stage3Schedule& v);
void to_json(Json& j, const StageSchedule& v);
void from_json(const Json& j, StageSchedule& v);
void to_json(Json& j, const TrainerConfig& v);
void from_json(const Json& j, TrainerConfig& v);
void to_json(Json& j, const EpochRecord& v);
void from_json(const Json& j, EpochRecord& v);
void to_json(Json& j, const StepRecord& v);
void from_json(const Json& j, StepRecord& v);
void to_json(Json& j, const StageRecord& v);
void from_json(const Json& j, StageRecord& v);
void to_json(Json& j, const AugmentSummary& v);
void from_json(const Json& j, AugmentSummary& v);
}  // namespace augda::train
