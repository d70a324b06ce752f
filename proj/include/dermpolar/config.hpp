#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dermpolar/diagnosis_blocks.hpp"
#include "dermpolar/structure_layers.hpp"
#include "dermpolar/view_augmentation.hpp"

namespace dermpolar {

/// Everything the batch pipeline needs, with working defaults for every
/// field. Parsed from a single JSON file; unknown keys are rejected so a
/// typo cannot silently fall back to a default.
struct PipelineConfig {
    double gamma = 20.0;
    std::uint64_t seed = 0;
    std::string output_dir;
    int backbone_channels = 16;
    std::string head_params_path;

    PolarPoolSpec polar;
    BoundConfig bounds;
    ProjectionOptions projection;
    AugmentOptions augment;
    std::map<int, RegionSpec> structure_regions = default_structure_regions();

    static PipelineConfig from_json_text(const std::string& text);
    static PipelineConfig from_file(const std::string& path);

    /// Throws ConfigError when any field violates a module precondition.
    void validate() const;
};

} // namespace dermpolar
