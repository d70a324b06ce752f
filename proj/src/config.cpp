#include "dermpolar/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dermpolar/errors.hpp"

namespace dermpolar {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& path) {
    throw ConfigError("unknown config key '" + path + "'");
}

void require_keys(const json& obj, const std::string& prefix,
                  const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) {
            bad_key(prefix.empty() ? key : prefix + "." + key);
        }
    }
}

double number_at(const json& obj, const char* key, double fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    if (!obj[key].is_number()) {
        throw ConfigError(std::string("config key '") + key + "' must be a number");
    }
    return obj[key].get<double>();
}

int int_at(const json& obj, const char* key, int fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    if (!obj[key].is_number_integer()) {
        throw ConfigError(std::string("config key '") + key + "' must be an integer");
    }
    return obj[key].get<int>();
}

std::string string_at(const json& obj, const char* key, const std::string& fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    if (!obj[key].is_string()) {
        throw ConfigError(std::string("config key '") + key + "' must be a string");
    }
    return obj[key].get<std::string>();
}

int structure_index(const std::string& name) {
    for (int s = 0; s < kStructureCount; ++s) {
        if (name == kStructureNames[static_cast<std::size_t>(s)]) {
            return s;
        }
    }
    throw ConfigError("'" + name + "' is not a structure name");
}

void parse_polar(const json& obj, PolarPoolSpec& spec) {
    require_keys(obj, "polar", {"rings", "angles", "mode", "overlap_frac", "ring_boundaries"});
    spec.rings = int_at(obj, "rings", spec.rings);
    spec.angles = int_at(obj, "angles", spec.angles);
    spec.overlap_frac = number_at(obj, "overlap_frac", spec.overlap_frac);
    const std::string mode = string_at(obj, "mode", "average");
    if (mode == "average") {
        spec.mode = PolarPoolSpec::Mode::Average;
    } else if (mode == "max") {
        spec.mode = PolarPoolSpec::Mode::Max;
    } else {
        throw ConfigError("polar.mode must be 'average' or 'max'");
    }
    if (obj.contains("ring_boundaries")) {
        if (!obj["ring_boundaries"].is_array()) {
            throw ConfigError("polar.ring_boundaries must be an array");
        }
        spec.ring_boundaries.clear();
        for (const auto& v : obj["ring_boundaries"]) {
            if (!v.is_number()) {
                throw ConfigError("polar.ring_boundaries entries must be numbers");
            }
            spec.ring_boundaries.push_back(v.get<double>());
        }
    }
}

void parse_bounds(const json& obj, BoundConfig& bounds) {
    require_keys(obj, "bounds", {"epsilon_absent", "alpha_low", "alpha_high", "beta_low"});
    bounds.epsilon_absent = number_at(obj, "epsilon_absent", bounds.epsilon_absent);
    bounds.alpha_low = number_at(obj, "alpha_low", bounds.alpha_low);
    bounds.alpha_high = number_at(obj, "alpha_high", bounds.alpha_high);
    bounds.beta_low = number_at(obj, "beta_low", bounds.beta_low);
}

void parse_projection(const json& obj, ProjectionOptions& options) {
    require_keys(obj, "projection", {"step", "max_iterations", "tolerance_fraction"});
    options.step = number_at(obj, "step", options.step);
    options.max_iterations = int_at(obj, "max_iterations", options.max_iterations);
    options.tolerance_fraction =
        number_at(obj, "tolerance_fraction", options.tolerance_fraction);
}

void parse_augment(const json& obj, AugmentOptions& options) {
    require_keys(obj, "augment",
                 {"rotation_angles", "crops_per_rotation", "output_side",
                  "min_view_lesion_px"});
    if (obj.contains("rotation_angles")) {
        if (!obj["rotation_angles"].is_array() || obj["rotation_angles"].empty()) {
            throw ConfigError("augment.rotation_angles must be a non-empty array");
        }
        options.rotation_angles_deg.clear();
        for (const auto& v : obj["rotation_angles"]) {
            if (!v.is_number()) {
                throw ConfigError("augment.rotation_angles entries must be numbers");
            }
            options.rotation_angles_deg.push_back(v.get<double>());
        }
    }
    options.crops_per_rotation = int_at(obj, "crops_per_rotation", options.crops_per_rotation);
    options.output_side = int_at(obj, "output_side", options.output_side);
    options.min_view_lesion_px = int_at(obj, "min_view_lesion_px", options.min_view_lesion_px);
}

void parse_regions(const json& obj, std::map<int, RegionSpec>& regions) {
    for (const auto& [name, body] : obj.items()) {
        const int index = structure_index(name);
        if (!body.is_object()) {
            throw ConfigError("structure_regions." + name + " must be an object");
        }
        require_keys(body, "structure_regions." + name,
                     {"rho_min", "rho_max", "theta_min", "theta_max"});
        RegionSpec spec = regions[index];
        spec.rho_min = number_at(body, "rho_min", spec.rho_min);
        spec.rho_max = number_at(body, "rho_max", spec.rho_max);
        if (body.contains("theta_min") != body.contains("theta_max")) {
            throw ConfigError("structure_regions." + name +
                              " needs both theta bounds or neither");
        }
        if (body.contains("theta_min")) {
            spec.theta = {number_at(body, "theta_min", 0.0),
                          number_at(body, "theta_max", 0.0)};
        }
        regions[index] = spec;
    }
}

} // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) {
        throw ConfigError("config root must be a JSON object");
    }
    require_keys(root, "",
                 {"gamma", "seed", "output_dir", "backbone_channels", "head_params",
                  "polar", "bounds", "projection", "augment", "structure_regions"});

    PipelineConfig config;
    config.gamma = number_at(root, "gamma", config.gamma);
    if (root.contains("seed")) {
        if (!root["seed"].is_number_unsigned() && !root["seed"].is_number_integer()) {
            throw ConfigError("config key 'seed' must be an integer");
        }
        config.seed = root["seed"].get<std::uint64_t>();
    }
    config.output_dir = string_at(root, "output_dir", config.output_dir);
    config.backbone_channels = int_at(root, "backbone_channels", config.backbone_channels);
    config.head_params_path = string_at(root, "head_params", config.head_params_path);
    if (root.contains("polar")) {
        parse_polar(root["polar"], config.polar);
    }
    if (root.contains("bounds")) {
        parse_bounds(root["bounds"], config.bounds);
    }
    if (root.contains("projection")) {
        parse_projection(root["projection"], config.projection);
    }
    if (root.contains("augment")) {
        parse_augment(root["augment"], config.augment);
    }
    if (root.contains("structure_regions")) {
        if (!root["structure_regions"].is_object()) {
            throw ConfigError("structure_regions must be an object keyed by structure name");
        }
        parse_regions(root["structure_regions"], config.structure_regions);
    }
    config.validate();
    return config;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return from_json_text(text.str());
}

void PipelineConfig::validate() const {
    if (!(gamma > 0.0)) {
        throw ConfigError("gamma must be positive");
    }
    if (backbone_channels < 1) {
        throw ConfigError("backbone_channels must be positive");
    }
    try {
        polar.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("polar: ") + e.what());
    }
    if (polar.angles % 2 != 0) {
        throw ConfigError("polar.angles must be even for the asymmetry block");
    }
    const auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!frac(bounds.epsilon_absent) || !frac(bounds.alpha_low) ||
        !frac(bounds.alpha_high) || !frac(bounds.beta_low)) {
        throw ConfigError("bounds fractions must lie in [0, 1]");
    }
    if (bounds.alpha_low > bounds.alpha_high) {
        throw ConfigError("bounds.alpha_low must not exceed bounds.alpha_high");
    }
    if (!(projection.step > 0.0) || projection.max_iterations < 1 ||
        !(projection.tolerance_fraction > 0.0)) {
        throw ConfigError("projection parameters must be positive");
    }
    if (augment.crops_per_rotation < 1) {
        throw ConfigError("augment.crops_per_rotation must be positive");
    }
    if (augment.output_side < 32 || augment.output_side % 32 != 0) {
        throw ConfigError("augment.output_side must be a positive multiple of 32");
    }
    if (augment.min_view_lesion_px < 1) {
        throw ConfigError("augment.min_view_lesion_px must be positive");
    }
    for (const auto& [index, region] : structure_regions) {
        if (!(region.rho_min >= 0.0) || !(region.rho_max > region.rho_min)) {
            throw ConfigError(std::string("region for ") +
                              kStructureNames[static_cast<std::size_t>(index)] +
                              " needs 0 <= rho_min < rho_max");
        }
        if (region.theta) {
            const double two_pi = 2.0 * std::numbers::pi;
            const auto [lo, hi] = *region.theta;
            if (lo < 0.0 || lo > two_pi || hi < 0.0 || hi > two_pi) {
                throw ConfigError(std::string("theta bounds for ") +
                                  kStructureNames[static_cast<std::size_t>(index)] +
                                  " must lie in [0, 2*pi]");
            }
        }
    }
}

} // namespace dermpolar
