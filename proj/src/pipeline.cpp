#include "dermpolar/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "dermpolar/errors.hpp"
#include "dermpolar/gradcheck_blocks.hpp"
#include "dermpolar/image_io.hpp"
#include "dermpolar/tensor_io.hpp"
#include "dermpolar/toy_models.hpp"
#include "dermpolar/view_augmentation.hpp"

namespace dermpolar {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool safe_case_id(const std::string& id) {
    if (id.empty() || id.size() > 128 || id.front() == '.') {
        return false;
    }
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '-' || c == '.';
    });
}

std::string view_stem(int index) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "view_%02d", index);
    return buf;
}

json load_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(std::string("cannot open ") + what + " '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + " '" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const std::string& path, const ordered_json& body) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << body.dump(2) << '\n';
    if (!out) {
        throw IoError("failed while writing '" + path + "'");
    }
}

/// Grayscale photos become RGB by channel replication so every view
/// tensor is H x W x 3.
ValueGrid photo_to_rgb_grid(const ImageU8& image) {
    if (image.channels == 3) {
        return image_to_grid(image);
    }
    ValueGrid grid({image.height, image.width, 3}, 0.0);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double v = image.at(y, x, 0) / 255.0;
            grid.at(y, x, 0) = v;
            grid.at(y, x, 1) = v;
            grid.at(y, x, 2) = v;
        }
    }
    return grid;
}

void write_npc_file(const std::string& path, const NormalizedPolarMap& npc) {
    std::vector<TensorRecord> records;
    records.push_back({"rho", npc.rho});
    records.push_back({"theta", npc.theta});
    ValueGrid affine({6}, 0.0);
    for (int i = 0; i < 6; ++i) {
        affine[static_cast<std::size_t>(i)] = npc.affine.m[static_cast<std::size_t>(i)];
    }
    records.push_back({"affine", std::move(affine)});
    write_tensor_file(path, records);
}

NormalizedPolarMap read_npc_file(const std::string& path) {
    const auto records = read_tensor_file(path);
    NormalizedPolarMap npc;
    npc.rho = find_record(records, "rho").grid;
    npc.theta = find_record(records, "theta").grid;
    const ValueGrid& affine = find_record(records, "affine").grid;
    if (affine.size() != 6 || !npc.rho.same_shape(npc.theta) || npc.rho.rank() != 2) {
        throw IoError("'" + path + "' does not hold a polar map");
    }
    for (int i = 0; i < 6; ++i) {
        npc.affine.m[static_cast<std::size_t>(i)] = affine[static_cast<std::size_t>(i)];
    }
    return npc;
}

struct ManifestCase {
    std::string case_id;
    bool ok = false;
    json body; // the case's manifest entry
};

std::vector<ManifestCase> manifest_cases(const json& manifest, const std::string& path) {
    if (!manifest.contains("cases") || !manifest["cases"].is_array()) {
        throw ConfigError("manifest '" + path + "' lacks a cases array");
    }
    std::vector<ManifestCase> cases;
    for (const auto& entry : manifest["cases"]) {
        ManifestCase c;
        c.case_id = entry.value("case_id", std::string());
        c.ok = entry.value("status", std::string()) == "ok";
        c.body = entry;
        cases.push_back(std::move(c));
    }
    return cases;
}

std::set<std::string> parse_filter(const std::string& comma_list) {
    std::set<std::string> wanted;
    std::stringstream stream(comma_list);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) {
            wanted.insert(item);
        }
    }
    return wanted;
}

ordered_json labels_json(const std::vector<int>& levels) {
    ordered_json body = ordered_json::object();
    for (int s = 0; s < kStructureCount; ++s) {
        body[kStructureNames[static_cast<std::size_t>(s)]] =
            levels[static_cast<std::size_t>(s)];
    }
    return body;
}

} // namespace

std::vector<CaseRecord> load_cases(const std::string& input_dir) {
    const std::string path = (fs::path(input_dir) / "cases.json").string();
    const json root = load_json_file(path, "case list");
    if (!root.is_array()) {
        throw ConfigError("case list '" + path + "' must be a JSON array");
    }
    std::vector<CaseRecord> cases;
    int index = 0;
    for (const auto& entry : root) {
        CaseRecord record;
        record.case_id = "case_" + std::to_string(index);
        ++index;
        if (!entry.is_object()) {
            record.load_error = "case entry is not an object";
            cases.push_back(std::move(record));
            continue;
        }
        if (entry.contains("case_id") && entry["case_id"].is_string()) {
            record.case_id = entry["case_id"].get<std::string>();
        }
        if (!safe_case_id(record.case_id)) {
            record.load_error = "case_id must be a short name over [A-Za-z0-9._-]";
            cases.push_back(std::move(record));
            continue;
        }
        if (!entry.contains("image") || !entry["image"].is_string() ||
            !entry.contains("mask") || !entry["mask"].is_string()) {
            record.load_error = "case needs 'image' and 'mask' path strings";
            cases.push_back(std::move(record));
            continue;
        }
        record.image_path = (fs::path(input_dir) / entry["image"].get<std::string>()).string();
        record.mask_path = (fs::path(input_dir) / entry["mask"].get<std::string>()).string();
        if (entry.contains("metadata")) {
            record.metadata_json = entry["metadata"].dump();
        }
        if (entry.contains("labels")) {
            std::vector<int> levels;
            const json& raw = entry["labels"];
            if (raw.is_array()) {
                for (const auto& v : raw) {
                    levels.push_back(v.is_number_integer() ? v.get<int>() : -1);
                }
            } else if (raw.is_object()) {
                levels.assign(kStructureCount, -1);
                bool known = true;
                for (const auto& [name, v] : raw.items()) {
                    int s = -1;
                    for (int i = 0; i < kStructureCount; ++i) {
                        if (name == kStructureNames[static_cast<std::size_t>(i)]) {
                            s = i;
                        }
                    }
                    if (s < 0) {
                        record.load_error = "unknown structure '" + name + "' in labels";
                        known = false;
                        break;
                    }
                    levels[static_cast<std::size_t>(s)] =
                        v.is_number_integer() ? v.get<int>() : -1;
                }
                if (!known) {
                    cases.push_back(std::move(record));
                    continue;
                }
            } else {
                record.load_error = "labels must be an array or an object";
                cases.push_back(std::move(record));
                continue;
            }
            try {
                record.labels = StructureWeakLabels::from_ints(levels);
                record.label_levels = levels;
            } catch (const Error& e) {
                record.load_error = e.what();
            }
        }
        cases.push_back(std::move(record));
    }
    return cases;
}

std::vector<CaseRecord> filter_cases(std::vector<CaseRecord> cases,
                                     const std::string& comma_list) {
    const std::set<std::string> wanted = parse_filter(comma_list);
    if (wanted.empty()) {
        return cases;
    }
    std::vector<CaseRecord> kept;
    for (auto& c : cases) {
        if (wanted.contains(c.case_id)) {
            kept.push_back(std::move(c));
        }
    }
    return kept;
}

StageReport run_augment(const PipelineConfig& config, const std::string& input_dir,
                        const std::string& output_dir, const std::string& case_filter,
                        std::ostream& log) {
    const std::vector<CaseRecord> cases =
        filter_cases(load_cases(input_dir), case_filter);
    fs::create_directories(output_dir);

    StageReport report;
    ordered_json manifest;
    manifest["stage"] = "augment";
    manifest["generated_at"] = timestamp_utc();
    manifest["seed"] = config.seed;
    manifest["output_side"] = config.augment.output_side;
    manifest["cases"] = ordered_json::array();

    for (const CaseRecord& record : cases) {
        ordered_json entry;
        entry["case_id"] = record.case_id;
        if (!record.metadata_json.empty()) {
            log << "case " << record.case_id << " metadata: " << record.metadata_json
                << "\n";
            entry["metadata"] = json::parse(record.metadata_json);
        }
        if (record.labels) {
            entry["labels"] = labels_json(record.label_levels);
        }
        try {
            if (!record.load_error.empty()) {
                throw Error(record.load_error);
            }
            const ImageU8 photo = read_image(record.image_path);
            const ImageU8 mask_img = read_image(record.mask_path);
            if (photo.height != mask_img.height || photo.width != mask_img.width) {
                throw Error("image and mask extents differ");
            }
            const ValueGrid image = photo_to_rgb_grid(photo);
            const LesionMask mask = LesionMask::from_grid(mask_from_image(mask_img));
            const ViewSet views = augment_case(record.case_id, image, mask, config.augment);

            const fs::path case_dir = fs::path(output_dir) / record.case_id;
            fs::create_directories(case_dir);
            entry["views"] = ordered_json::array();
            for (std::size_t i = 0; i < views.views.size(); ++i) {
                const View& view = views.views[i];
                const std::string stem = view_stem(static_cast<int>(i));
                const std::string image_rel = record.case_id + "/" + stem + "_image.ppm";
                const std::string mask_rel = record.case_id + "/" + stem + "_mask.pgm";
                const std::string npc_rel = record.case_id + "/" + stem + "_npc.t32";
                write_pnm((fs::path(output_dir) / image_rel).string(),
                          grid_to_image(view.image));
                write_pnm((fs::path(output_dir) / mask_rel).string(),
                          mask_to_image(view.mask.grid));
                write_npc_file((fs::path(output_dir) / npc_rel).string(), view.npc);

                ordered_json v;
                v["index"] = static_cast<int>(i);
                v["rotation_deg"] = view.spec.rotation_deg;
                v["rotation_index"] = view.spec.rotation_index;
                v["crop_index"] = view.spec.crop_index;
                v["crop"] = {{"x", view.spec.crop.x},
                             {"y", view.spec.crop.y},
                             {"w", view.spec.crop.w},
                             {"h", view.spec.crop.h}};
                v["fallback"] = view.spec.fallback;
                v["image"] = image_rel;
                v["mask"] = mask_rel;
                v["npc"] = npc_rel;
                entry["views"].push_back(std::move(v));
            }
            entry["status"] = "ok";
            ++report.succeeded;
        } catch (const std::exception& e) {
            entry["status"] = "failed";
            entry["error"] = e.what();
            ++report.failed;
            log << "case " << record.case_id << " failed: " << e.what() << "\n";
        }
        manifest["cases"].push_back(std::move(entry));
    }

    write_json_file((fs::path(output_dir) / "augment_manifest.json").string(), manifest);
    return report;
}

StageReport run_structures(const PipelineConfig& config, const std::string& input_dir,
                           const std::string& output_dir, const std::string& case_filter,
                           std::ostream& log) {
    const std::string upstream_path =
        (fs::path(input_dir) / "augment_manifest.json").string();
    const json upstream = load_json_file(upstream_path, "augment manifest");
    std::vector<ManifestCase> cases = manifest_cases(upstream, upstream_path);
    const std::set<std::string> wanted = parse_filter(case_filter);
    fs::create_directories(output_dir);

    const ToyScoreNet score_net = ToyScoreNet::seeded(config.seed);

    StageReport report;
    ordered_json manifest;
    manifest["stage"] = "structures";
    manifest["generated_at"] = timestamp_utc();
    manifest["seed"] = config.seed;
    manifest["gamma"] = config.gamma;
    manifest["cases"] = ordered_json::array();

    for (const ManifestCase& upstream_case : cases) {
        if (!wanted.empty() && !wanted.contains(upstream_case.case_id)) {
            continue;
        }
        ordered_json entry;
        entry["case_id"] = upstream_case.case_id;
        try {
            if (!upstream_case.ok) {
                throw Error("case failed during augmentation");
            }
            std::optional<StructureWeakLabels> labels;
            if (upstream_case.body.contains("labels")) {
                std::vector<int> levels(kStructureCount, 0);
                for (int s = 0; s < kStructureCount; ++s) {
                    levels[static_cast<std::size_t>(s)] =
                        upstream_case.body.at("labels")
                            .value(kStructureNames[static_cast<std::size_t>(s)], 0);
                }
                labels = StructureWeakLabels::from_ints(levels);
                entry["labels"] = upstream_case.body.at("labels");
            }

            const fs::path case_dir = fs::path(output_dir) / upstream_case.case_id;
            fs::create_directories(case_dir);
            entry["views"] = ordered_json::array();
            for (const auto& view : upstream_case.body.at("views")) {
                const int index = view.at("index").get<int>();
                const std::string stem = view_stem(index);
                const std::string npc_path =
                    (fs::path(input_dir) / view.at("npc").get<std::string>()).string();
                const NormalizedPolarMap npc_full = read_npc_file(npc_path);

                // Raw scores come from a sibling scores file when one
                // exists, otherwise from the seeded stand-in scorer.
                const std::string scores_path =
                    (fs::path(input_dir) / upstream_case.case_id /
                     (stem + "_scores.t32"))
                        .string();
                ValueGrid scores;
                bool scores_from_file = false;
                if (fs::exists(scores_path)) {
                    scores = load_tensor(scores_path);
                    scores_from_file = true;
                } else {
                    const std::string image_path =
                        (fs::path(input_dir) / view.at("image").get<std::string>()).string();
                    scores = score_net.forward(photo_to_rgb_grid(read_image(image_path)));
                }
                const int side = npc_full.height() / 4;
                if (scores.rank() != 3 || scores.extent(0) != side ||
                    scores.extent(1) != side || scores.extent(2) != kStructureCount) {
                    throw ShapeError("scores for " + stem + " must be " +
                                     std::to_string(side) + "x" + std::to_string(side) +
                                     "x" + std::to_string(kStructureCount));
                }

                const ValueGrid probabilities = parametric_softmax(scores, config.gamma);
                std::vector<TensorRecord> records;
                records.push_back({"probabilities", probabilities});

                ordered_json v;
                v["index"] = index;
                v["scores_from_file"] = scores_from_file;
                if (labels) {
                    const NormalizedPolarMap npc = downsample_npc(npc_full, 4);
                    const ConstraintSet constraints = constraints_from_labels(
                        *labels, npc, config.structure_regions, config.bounds);
                    ProjectionResult projection = project_onto_constraints(
                        probabilities, constraints, config.projection);
                    double worst = 0.0;
                    for (double r : projection.residuals) {
                        worst = std::max(worst, r);
                    }
                    v["projected"] = true;
                    v["iterations"] = projection.iterations;
                    v["max_residual"] = worst;
                    records.push_back({"projected", std::move(projection.maps)});
                    if (!projection.residuals.empty()) {
                        records.push_back(
                            {"residuals",
                             ValueGrid::from_data(
                                 {static_cast<int>(projection.residuals.size())},
                                 projection.residuals)});
                    }
                } else {
                    v["projected"] = false;
                }

                const std::string maps_rel =
                    upstream_case.case_id + "/" + stem + "_structures.t32";
                write_tensor_file((fs::path(output_dir) / maps_rel).string(), records);
                v["maps"] = maps_rel;
                entry["views"].push_back(std::move(v));
            }
            entry["status"] = "ok";
            ++report.succeeded;
        } catch (const NotConverged& e) {
            entry["status"] = "failed";
            entry["error"] = e.what();
            ordered_json residuals = ordered_json::array();
            for (double r : e.residuals()) {
                residuals.push_back(r);
            }
            entry["residuals"] = std::move(residuals);
            ++report.failed;
            log << "case " << upstream_case.case_id << " failed: " << e.what() << "\n";
        } catch (const std::exception& e) {
            entry["status"] = "failed";
            entry["error"] = e.what();
            ++report.failed;
            log << "case " << upstream_case.case_id << " failed: " << e.what() << "\n";
        }
        manifest["cases"].push_back(std::move(entry));
    }

    write_json_file((fs::path(output_dir) / "structures_manifest.json").string(), manifest);
    return report;
}

StageReport run_diagnose(const PipelineConfig& config, const std::string& input_dir,
                         const std::string& output_dir, const std::string& case_filter,
                         std::ostream& log) {
    const std::string augment_path =
        (fs::path(input_dir) / "augment_manifest.json").string();
    const std::string structures_path =
        (fs::path(input_dir) / "structures_manifest.json").string();
    const json augment_manifest = load_json_file(augment_path, "augment manifest");
    const json structures_manifest = load_json_file(structures_path, "structures manifest");
    const std::vector<ManifestCase> augment_cases =
        manifest_cases(augment_manifest, augment_path);
    const std::vector<ManifestCase> structure_cases =
        manifest_cases(structures_manifest, structures_path);
    const std::set<std::string> wanted = parse_filter(case_filter);
    fs::create_directories(output_dir);

    const ToyBackbone backbone =
        ToyBackbone::seeded(config.backbone_channels, config.seed + 1);
    const int modulated = (1 + kStructureCount) * config.backbone_channels;
    HeadParams params;
    if (!config.head_params_path.empty()) {
        params = load_head_params(config.head_params_path);
    } else {
        Rng rng(config.seed + 2);
        params = HeadParams::seeded_init(modulated, config.polar, rng);
    }
    params.check_shapes(modulated, config.polar);

    StageReport report;
    ordered_json reportdoc;
    reportdoc["stage"] = "diagnose";
    reportdoc["generated_at"] = timestamp_utc();
    reportdoc["seed"] = config.seed;
    reportdoc["classes"] = ordered_json::array();
    for (const char* name : kDiagnosisClassNames) {
        reportdoc["classes"].push_back(name);
    }
    reportdoc["cases"] = ordered_json::array();

    for (const ManifestCase& structure_case : structure_cases) {
        if (!wanted.empty() && !wanted.contains(structure_case.case_id)) {
            continue;
        }
        ordered_json entry;
        entry["case_id"] = structure_case.case_id;
        try {
            if (!structure_case.ok) {
                throw Error("case failed during structure scoring");
            }
            const ManifestCase* augment_case = nullptr;
            for (const ManifestCase& c : augment_cases) {
                if (c.case_id == structure_case.case_id) {
                    augment_case = &c;
                }
            }
            if (augment_case == nullptr || !augment_case->ok) {
                throw Error("augmented views are missing for this case");
            }

            std::vector<std::array<double, 3>> per_view;
            entry["views"] = ordered_json::array();
            for (const auto& view : structure_case.body.at("views")) {
                const int index = view.at("index").get<int>();
                const json* augment_view = nullptr;
                for (const auto& candidate : augment_case->body.at("views")) {
                    if (candidate.at("index").get<int>() == index) {
                        augment_view = &candidate;
                    }
                }
                if (augment_view == nullptr) {
                    throw Error("view " + std::to_string(index) +
                                " is missing from the augment manifest");
                }
                const std::string image_path =
                    (fs::path(input_dir) / augment_view->at("image").get<std::string>())
                        .string();
                const std::string npc_path =
                    (fs::path(input_dir) / augment_view->at("npc").get<std::string>())
                        .string();
                const std::string maps_path =
                    (fs::path(input_dir) / view.at("maps").get<std::string>()).string();

                const ValueGrid image = photo_to_rgb_grid(read_image(image_path));
                const ValueGrid features = backbone.forward(image);
                const auto records = read_tensor_file(maps_path);
                const bool projected = view.value("projected", false);
                const ValueGrid& structures =
                    find_record(records, projected ? "projected" : "probabilities").grid;
                const NormalizedPolarMap npc =
                    downsample_npc(read_npc_file(npc_path), image.extent(0) / features.extent(0));

                const auto scores =
                    head_forward(features, structures, npc, params, config.polar);
                const auto probs = softmax3(scores);
                per_view.push_back(probs);

                ordered_json v;
                v["index"] = index;
                v["probabilities"] = {probs[0], probs[1], probs[2]};
                entry["views"].push_back(std::move(v));
            }

            const auto fused = fuse_views(per_view);
            entry["fused"] = {fused[0], fused[1], fused[2]};
            const int argmax = static_cast<int>(
                std::max_element(fused.begin(), fused.end()) - fused.begin());
            entry["argmax_index"] = argmax;
            entry["argmax"] = kDiagnosisClassNames[static_cast<std::size_t>(argmax)];
            entry["status"] = "ok";
            ++report.succeeded;
        } catch (const std::exception& e) {
            entry["status"] = "failed";
            entry["error"] = e.what();
            ++report.failed;
            log << "case " << structure_case.case_id << " failed: " << e.what() << "\n";
        }
        reportdoc["cases"].push_back(std::move(entry));
    }

    write_json_file((fs::path(output_dir) / "diagnoses.json").string(), reportdoc);
    return report;
}

int run_gradcheck(const PipelineConfig& config, std::ostream& out) {
    constexpr double kGate = 1e-5;
    constexpr int kTrials = 10;
    bool all_ok = true;
    for (const GradcheckBlock& block : gradcheck_blocks()) {
        const double err = gradcheck_block_error(block, kTrials, config.seed + 1);
        char line[128];
        std::snprintf(line, sizeof(line), "%-24s max_rel_error=%.3e  %s", block.name.c_str(),
                      err, err <= kGate ? "ok" : "FAIL");
        out << line << "\n";
        all_ok = all_ok && err <= kGate;
    }
    out << (all_ok ? "gradient check passed" : "gradient check FAILED") << "\n";
    return all_ok ? 0 : 1;
}

HeadParams load_head_params(const std::string& path) {
    const auto records = read_tensor_file(path);
    HeadParams params;
    params.fc1_weight = find_record(records, "fc1_weight").grid;
    params.fc1_bias = find_record(records, "fc1_bias").grid;
    params.fc2_weight = find_record(records, "fc2_weight").grid;
    params.fc2_bias = find_record(records, "fc2_bias").grid;
    params.fc3_weight = find_record(records, "fc3_weight").grid;
    params.fc3_bias = find_record(records, "fc3_bias").grid;
    const ValueGrid& sums = find_record(records, "sum_weights").grid;
    if (sums.size() != 3) {
        throw IoError("sum_weights must hold 3 values");
    }
    params.sum_weights = {sums[0], sums[1], sums[2]};
    return params;
}

void save_head_params(const std::string& path, const HeadParams& params) {
    std::vector<TensorRecord> records;
    records.push_back({"fc1_weight", params.fc1_weight});
    records.push_back({"fc1_bias", params.fc1_bias});
    records.push_back({"fc2_weight", params.fc2_weight});
    records.push_back({"fc2_bias", params.fc2_bias});
    records.push_back({"fc3_weight", params.fc3_weight});
    records.push_back({"fc3_bias", params.fc3_bias});
    records.push_back({"sum_weights",
                       ValueGrid::from_data({3}, {params.sum_weights[0],
                                                  params.sum_weights[1],
                                                  params.sum_weights[2]})});
    write_tensor_file(path, records);
}

} // namespace dermpolar
