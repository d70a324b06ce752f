#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dermpolar/config.hpp"
#include "dermpolar/diagnosis_blocks.hpp"
#include "dermpolar/structure_layers.hpp"

namespace dermpolar {

/// One clinical case as listed in the input directory's cases.json.
struct CaseRecord {
    std::string case_id;
    std::string image_path;
    std::string mask_path;
    std::optional<StructureWeakLabels> labels;
    std::vector<int> label_levels;  // raw 0/1/2 levels when labels is set
    std::string metadata_json;      // verbatim metadata, empty when absent
    std::string load_error;         // non-empty marks the case as unusable
};

/// Parses <input_dir>/cases.json. A malformed individual entry yields a
/// CaseRecord with load_error set; an unreadable or malformed file
/// throws ConfigError.
std::vector<CaseRecord> load_cases(const std::string& input_dir);

/// Keeps the cases whose id appears in the comma-separated list; an
/// empty list keeps everything.
std::vector<CaseRecord> filter_cases(std::vector<CaseRecord> cases,
                                     const std::string& comma_list);

struct StageReport {
    int succeeded = 0;
    int failed = 0;

    /// 0 when at least one case succeeded (or there was nothing to do),
    /// 2 when every case failed.
    int exit_code() const { return failed > 0 && succeeded == 0 ? 2 : 0; }
};

StageReport run_augment(const PipelineConfig& config, const std::string& input_dir,
                        const std::string& output_dir, const std::string& case_filter,
                        std::ostream& log);

StageReport run_structures(const PipelineConfig& config, const std::string& input_dir,
                           const std::string& output_dir, const std::string& case_filter,
                           std::ostream& log);

StageReport run_diagnose(const PipelineConfig& config, const std::string& input_dir,
                         const std::string& output_dir, const std::string& case_filter,
                         std::ostream& log);

/// Finite-difference report over every differentiable block; returns 0
/// when all blocks pass the 1e-5 gate, 1 otherwise.
int run_gradcheck(const PipelineConfig& config, std::ostream& out);

HeadParams load_head_params(const std::string& path);
void save_head_params(const std::string& path, const HeadParams& params);

} // namespace dermpolar
