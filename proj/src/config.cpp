#include "pico/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "pico/error.hpp"

namespace pico {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

Error config_error(const std::string& message)
{
    return Error(ErrorKind::config, message);
}

int parse_int(std::string_view key, std::string_view text)
{
    int v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw config_error("'" + std::string(key) + "' expects an integer, got '" + std::string(text) + "'");
    }
    return v;
}

double parse_double(std::string_view key, std::string_view text)
{
    // from_chars for double is missing on some toolchains; strtod with a
    // full-consumption check is equivalent here.
    std::string buf(text);
    char* end = nullptr;
    const double v = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size()) {
        throw config_error("'" + std::string(key) + "' expects a number, got '" + buf + "'");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text)
{
    if (text == "true" || text == "1" || text == "on" || text == "yes") {
        return true;
    }
    if (text == "false" || text == "0" || text == "off" || text == "no") {
        return false;
    }
    throw config_error("'" + std::string(key) + "' expects a boolean, got '" + std::string(text) + "'");
}

using Setter = std::function<void(ControlConfig&, std::string_view key, std::string_view value)>;

Setter int_field(int ControlConfig::*field)
{
    return [field](ControlConfig& c, std::string_view k, std::string_view v) { c.*field = parse_int(k, v); };
}

Setter double_field(double ControlConfig::*field)
{
    return [field](ControlConfig& c, std::string_view k, std::string_view v) { c.*field = parse_double(k, v); };
}

Setter bool_field(bool ControlConfig::*field)
{
    return [field](ControlConfig& c, std::string_view k, std::string_view v) { c.*field = parse_bool(k, v); };
}

struct Field {
    std::string name;
    std::vector<std::string> aliases;
    Setter set;
};

const std::vector<Field>& fields()
{
    static const std::vector<Field> table{
        {"T", {"total_steps"}, int_field(&ControlConfig::total_steps)},
        {"T_s", {"fast_steps"}, int_field(&ControlConfig::fast_steps)},
        {"T_c", {"control_steps"}, int_field(&ControlConfig::control_steps)},
        {"control_start", {}, int_field(&ControlConfig::control_start)},
        {"r_s", {"candidate_ratio"}, int_field(&ControlConfig::candidate_ratio)},
        {"q", {"percentile"}, double_field(&ControlConfig::percentile)},
        {"delta", {"sigma_weight"}, double_field(&ControlConfig::delta)},
        {"alpha_l", {}, double_field(&ControlConfig::alpha_l)},
        {"alpha_h", {}, double_field(&ControlConfig::alpha_h)},
        {"beta_l", {}, double_field(&ControlConfig::beta_l)},
        {"beta_h", {}, double_field(&ControlConfig::beta_h)},
        {"gamma", {}, double_field(&ControlConfig::gamma)},
        {"conflict_threshold", {}, double_field(&ControlConfig::conflict_threshold)},
        {"parallelism", {}, int_field(&ControlConfig::parallelism)},
        {"mask_control", {}, bool_field(&ControlConfig::mask_control)},
        {"mask_validation", {}, bool_field(&ControlConfig::mask_validation)},
        {"conflict_elimination", {}, bool_field(&ControlConfig::conflict_elimination)},
        {"concept_mask", {}, bool_field(&ControlConfig::concept_mask)},
        {"exclusive_mask", {}, bool_field(&ControlConfig::exclusive_mask)},
    };
    return table;
}

const Field* find_field(std::string_view key)
{
    for (const auto& f : fields()) {
        if (f.name == key || std::find(f.aliases.begin(), f.aliases.end(), key) != f.aliases.end()) {
            return &f;
        }
    }
    return nullptr;
}

} // namespace

void validate(const ControlConfig& c)
{
    if (c.total_steps < 1) {
        throw config_error("T must be at least 1");
    }
    if (c.control_steps < 1 || c.control_steps > c.total_steps) {
        throw config_error("T_c must satisfy 1 <= T_c <= T");
    }
    if (c.control_start < 0 || c.control_start >= c.total_steps) {
        throw config_error("control_start must lie in [0, T)");
    }
    if (c.fast_steps < 1 || c.fast_steps > c.total_steps) {
        throw config_error("T_s must satisfy 1 <= T_s <= T");
    }
    if (c.candidate_ratio < 1) {
        throw config_error("r_s must be at least 1");
    }
    if (!(c.percentile > 0.0 && c.percentile <= 100.0)) {
        throw config_error("q must lie in (0, 100]");
    }
    if (!(c.gamma > 0.0)) {
        throw config_error("gamma must be positive");
    }
    if (!(c.beta_l <= c.beta_h)) {
        throw config_error("beta_l must not exceed beta_h");
    }
    // With gamma >= 1 the three augmentation bands keep their order
    // (beta_l / gamma <= beta_l <= beta_h <= beta_h * gamma).
    if (c.gamma >= 1.0 && !(c.beta_l / c.gamma <= c.beta_l && c.beta_h <= c.beta_h * c.gamma)) {
        throw config_error("augmentation bands are not order preserving for this gamma");
    }
    if (c.delta < 0.0) {
        throw config_error("delta must be non-negative");
    }
    if (c.parallelism < 1) {
        throw config_error("parallelism must be at least 1");
    }
}

const std::vector<std::string>& parameter_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) {
            out.push_back(f.name);
        }
        return out;
    }();
    return names;
}

std::optional<std::string> canonical_parameter(std::string_view key)
{
    if (const auto* f = find_field(key)) {
        return f->name;
    }
    return std::nullopt;
}

void set_parameter(ControlConfig& c, std::string_view key, std::string_view value)
{
    const auto* f = find_field(key);
    if (f == nullptr) {
        std::string known;
        for (const auto& n : parameter_names()) {
            known += (known.empty() ? "" : ", ") + n;
        }
        throw config_error("unknown parameter '" + std::string(key) + "' (valid: " + known + ")");
    }
    f->set(c, key, value);
}

ParsedConfig parse_config(std::string_view text, const std::vector<std::string>& extra_keys)
{
    ParsedConfig out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw config_error("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw config_error("line " + std::to_string(line_no) + ": missing key");
        }
        if (std::find(extra_keys.begin(), extra_keys.end(), key) != extra_keys.end()) {
            out.extra.emplace_back(key, value);
            continue;
        }
        try {
            set_parameter(out.control, key, value);
        } catch (const Error& e) {
            throw config_error("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    validate(out.control);
    return out;
}

ParsedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& extra_keys)
{
    std::ifstream in(path);
    if (!in) {
        throw config_error("cannot read config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), extra_keys);
}

nlohmann::json to_json(const ControlConfig& c)
{
    return {
        {"T", c.total_steps},
        {"T_s", c.fast_steps},
        {"T_c", c.control_steps},
        {"control_start", c.control_start},
        {"r_s", c.candidate_ratio},
        {"q", c.percentile},
        {"delta", c.delta},
        {"alpha_l", c.alpha_l},
        {"alpha_h", c.alpha_h},
        {"beta_l", c.beta_l},
        {"beta_h", c.beta_h},
        {"gamma", c.gamma},
        {"conflict_threshold", c.conflict_threshold},
        {"parallelism", c.parallelism},
        {"mask_control", c.mask_control},
        {"mask_validation", c.mask_validation},
        {"conflict_elimination", c.conflict_elimination},
        {"concept_mask", c.concept_mask},
        {"exclusive_mask", c.exclusive_mask},
    };
}

} // namespace pico
