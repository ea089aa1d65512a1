#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace pico {

/// Every pipeline hyperparameter. Defaults are the published settings.
struct ControlConfig {
    int total_steps = 50;          // T
    int fast_steps = 5;            // T_s
    int control_steps = 25;        // T_c: number of controlled timesteps
    int control_start = 0;         // denoising step index the control window opens at
    int candidate_ratio = 10;      // r_s
    double percentile = 90.0;      // q, shared by tau_r and rho_r
    double delta = 2.0;            // concept-score weight on v_max
    double alpha_l = 0.7;          // validity: max-logit floor
    double alpha_h = 1500.0;       // validity: dispersion ceiling
    double beta_l = 0.5;           // augmentation: suppress at or below
    double beta_h = 0.7;           // augmentation: amplify at or above
    double gamma = 15.0;           // augmentation strength
    double conflict_threshold = 0.5;
    int parallelism = 5;

    bool mask_control = true;
    bool mask_validation = true;
    bool conflict_elimination = true;
    bool concept_mask = true;
    bool exclusive_mask = true;

    friend bool operator==(const ControlConfig&, const ControlConfig&) = default;
};

/// Throws a config error naming the first violated constraint.
void validate(const ControlConfig& c);

/// Names accepted by set_parameter / config files.
const std::vector<std::string>& parameter_names();

/// Canonical name for a symbolic or long parameter name, if known.
std::optional<std::string> canonical_parameter(std::string_view key);

/// Assigns one "key = value" pair. Accepts symbolic names (T, T_s, T_c,
/// r_s, q, gamma, ...) and their long forms.
void set_parameter(ControlConfig& c, std::string_view key, std::string_view value);

/// Flat "key = value" text, '#' comments. Unknown keys are config errors.
/// Keys not handled by ControlConfig are returned untouched in `extra`.
struct ParsedConfig {
    ControlConfig control;
    std::vector<std::pair<std::string, std::string>> extra;
};
ParsedConfig parse_config(std::string_view text, const std::vector<std::string>& extra_keys = {});
ParsedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& extra_keys = {});

nlohmann::json to_json(const ControlConfig& c);

} // namespace pico
