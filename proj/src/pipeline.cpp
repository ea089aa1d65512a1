#include "pico/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>

#include "pico/error.hpp"
#include "pico/grid_io.hpp"

namespace pico {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(stage) + ": " + e.what());
    }
}

struct Parsed {
    TokenizedPrompt tokens;
    std::vector<Concept> concepts;
};

Parsed parse_prompt(const RunConfig& config)
{
    Parsed p;
    p.tokens = tokenize(config.prompt);
    p.concepts = extract_concepts(p.tokens, config.lexicon);
    return p;
}

void check_backend(const Backend& backend)
{
    const auto d = backend.describe();
    if (d.token_alignment != "identity") {
        throw Error(ErrorKind::backend, "unsupported token alignment '" + d.token_alignment + "'");
    }
}

ScoringParams scoring_params(const ControlConfig& c)
{
    return {c.fast_steps, c.percentile, c.delta};
}

struct Selection {
    std::vector<NoiseCandidate> candidates;
    std::vector<ScoreReport> scores;
    std::vector<NoiseCandidate> selected;
};

Selection select_noises(const RunConfig& config, const Parsed& parsed, const Backend& backend)
{
    Selection s;
    s.candidates = build_candidate_set(config.n_images, static_cast<std::size_t>(config.control.candidate_ratio), config.master_seed);
    s.scores = score_candidates(s.candidates, config.prompt, parsed.concepts, backend, scoring_params(config.control),
                                config.control.parallelism);
    s.selected = select_top(s.candidates, s.scores, config.n_images);
    return s;
}

nlohmann::json scoring_of(const RunConfig& config, const Selection& s)
{
    return scoring_json(config.master_seed, config.n_images, static_cast<std::size_t>(config.control.candidate_ratio),
                        config.control.fast_steps, s.scores, s.selected);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    const std::string text = j.dump(2) + "\n";
    write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_image(const std::filesystem::path& dir, const ImageResult& r)
{
    const std::string stem = seed_stem(r.seed);
    const auto images = dir / "images";
    write_ppm(images / (stem + ".ppm"), r.image.channels);
    // Planar PGM: R, G and B planes stacked vertically.
    const std::size_t h = r.image.height();
    const std::size_t w = r.image.width();
    std::vector<double> planar;
    planar.reserve(3 * h * w);
    for (const auto& c : r.image.channels) {
        planar.insert(planar.end(), c.values().begin(), c.values().end());
    }
    const Grid2D stacked(r.image.channels.size() * h, w, std::move(planar), GridRole::probability);
    write_pgm(images / (stem + ".pgm"), stacked);
    write_pgrd(images / (stem + ".pgrd"), stacked);
}

nlohmann::json timing_json(const StageTiming& t)
{
    return {{"parse_ms", t.parse_ms},
            {"scoring_ms", t.scoring_ms},
            {"generation_ms", t.generation_ms},
            {"output_ms", t.output_ms}};
}

std::string value_label(std::string_view v)
{
    std::string out;
    for (char c : v) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
    }
    return out;
}

} // namespace

std::string seed_stem(std::uint64_t seed)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "seed_%016llx", static_cast<unsigned long long>(seed));
    return buf;
}

ImageResult generate_image(const Backend& backend, std::uint64_t seed, const TokenizedPrompt& tokens,
                           std::span<const Concept> concepts, const ControlConfig& control, const MaskControllerOptions& options)
{
    MaskController controller(backend, tokens, std::vector<Concept>(concepts.begin(), concepts.end()), control, options);
    const Condition condition = backend.encode(tokens.raw);
    LatentState z = backend.init_latent(seed, control.total_steps);
    const AttentionHook hook = controller.hook();
    while (z.timestep > 0) {
        z = backend.step(z, condition, hook);
    }
    ImageResult r;
    r.seed = seed;
    r.image = backend.decode(z);
    r.latent = std::move(z);
    r.events = controller.events();
    return r;
}

RunReport run(const RunConfig& config, const Backend& backend)
{
    validate(config.control);
    if (config.n_images < 1) {
        throw Error(ErrorKind::config, "N must be at least 1");
    }
    RunReport report;
    report.config = config;

    auto t0 = Clock::now();
    const Parsed parsed = staged("parse", [&] { return parse_prompt(config); });
    report.tokens = parsed.tokens;
    report.concepts = parsed.concepts;
    report.timing.parse_ms = elapsed_ms(t0);

    t0 = Clock::now();
    Selection sel = staged("scoring", [&] {
        check_backend(backend);
        return select_noises(config, parsed, backend);
    });
    report.candidates = std::move(sel.candidates);
    report.scores = std::move(sel.scores);
    report.selected = std::move(sel.selected);
    report.timing.scoring_ms = elapsed_ms(t0);

    t0 = Clock::now();
    for (const auto& cand : report.selected) {
        MaskControllerOptions options;
        if (config.out_dir && config.dump_masks) {
            options.dump_dir = *config.out_dir / "masks" / seed_stem(cand.seed);
        }
        report.images.push_back(staged("generation", [&] {
            return generate_image(backend, cand.seed, parsed.tokens, parsed.concepts, config.control, options);
        }));
    }
    report.timing.generation_ms = elapsed_ms(t0);

    if (config.out_dir) {
        t0 = Clock::now();
        staged("output", [&] {
            for (const auto& img : report.images) {
                write_image(*config.out_dir, img);
            }
            return 0;
        });
        report.timing.output_ms = elapsed_ms(t0);
        staged("output", [&] {
            write_json(*config.out_dir / "report.json", to_json(report));
            return 0;
        });
    }
    return report;
}

nlohmann::json run_noise_selection_only(const RunConfig& config, const Backend& backend)
{
    validate(config.control);
    if (config.n_images < 1) {
        throw Error(ErrorKind::config, "N must be at least 1");
    }
    const Parsed parsed = staged("parse", [&] { return parse_prompt(config); });
    const Selection sel = staged("scoring", [&] {
        check_backend(backend);
        return select_noises(config, parsed, backend);
    });
    nlohmann::json j = scoring_of(config, sel);
    if (config.out_dir) {
        staged("output", [&] {
            write_json(*config.out_dir / "scoring.json", j);
            return 0;
        });
    }
    return j;
}

const std::vector<std::string>& ablation_parameters()
{
    static const std::vector<std::string> names{
        "T_s", "T_c", "gamma", "r_s", "q", "delta", "beta_l", "beta_h", "alpha_l", "alpha_h",
        "control_start", "mask_validation", "conflict_elimination", "concept_mask", "exclusive_mask", "mask_control",
    };
    return names;
}

std::vector<RunReport> run_ablation(const RunConfig& config, const Backend& backend, std::string_view parameter,
                                    std::span<const std::string> values)
{
    const auto canonical = canonical_parameter(parameter);
    const auto& allowed = ablation_parameters();
    if (!canonical || std::find(allowed.begin(), allowed.end(), *canonical) == allowed.end()) {
        std::string known;
        for (const auto& n : allowed) {
            known += (known.empty() ? "" : ", ") + n;
        }
        throw Error(ErrorKind::config, "cannot ablate '" + std::string(parameter) + "' (valid: " + known + ")");
    }
    if (values.empty()) {
        throw Error(ErrorKind::config, "ablation of " + *canonical + " needs at least one value");
    }

    std::vector<RunConfig> configs;
    for (const auto& v : values) {
        RunConfig c = config;
        try {
            set_parameter(c.control, *canonical, v);
            validate(c.control);
        } catch (const Error& e) {
            throw Error(ErrorKind::config, "ablation " + *canonical + "=" + v + ": " + e.what());
        }
        if (config.out_dir) {
            c.out_dir = *config.out_dir / (*canonical + "=" + value_label(v));
        }
        configs.push_back(std::move(c));
    }

    std::vector<RunReport> reports;
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        reports.push_back(run(configs[i], backend));
        nlohmann::json events = nlohmann::json::array();
        for (const auto& img : reports.back().images) {
            events.push_back(img.events.size());
        }
        runs.push_back({{"value", values[i]},
                        {"report", (*canonical + "=" + value_label(values[i])) + "/report.json"},
                        {"control_events", events}});
    }
    if (config.out_dir) {
        write_json(*config.out_dir / "ablation.json", {{"parameter", *canonical}, {"master_seed", config.master_seed}, {"runs", runs}});
    }
    return reports;
}

nlohmann::json concepts_json(std::span<const Concept> concepts)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : concepts) {
        out.push_back({{"text", c.text}, {"attributes", c.attributes}, {"noun", c.noun}, {"span", {c.span.first, c.span.last}}});
    }
    return out;
}

nlohmann::json to_json(const RunReport& report)
{
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : report.images) {
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : img.events) {
            events.push_back(to_json(e));
        }
        const std::string stem = seed_stem(img.seed);
        images.push_back({{"seed", img.seed},
                          {"image", "images/" + stem + ".ppm"},
                          {"planes", "images/" + stem + ".pgm"},
                          {"raw", "images/" + stem + ".pgrd"},
                          {"masks", report.config.dump_masks ? nlohmann::json("masks/" + stem) : nlohmann::json(nullptr)},
                          {"control_event_count", img.events.size()},
                          {"control_events", events}});
    }
    const auto& c = report.config;
    return {
        {"config",
         {{"prompt", c.prompt},
          {"N", c.n_images},
          {"master_seed", c.master_seed},
          {"backend", c.backend},
          {"dump_masks", c.dump_masks},
          {"control", to_json(c.control)}}},
        {"tokens", report.tokens.tokens},
        {"concepts", concepts_json(report.concepts)},
        {"scoring", scoring_json(c.master_seed, c.n_images, static_cast<std::size_t>(c.control.candidate_ratio),
                                 c.control.fast_steps, report.scores, report.selected)},
        {"images", images},
        {"timing", timing_json(report.timing)},
    };
}

} // namespace pico
