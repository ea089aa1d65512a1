#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pico/backend.hpp"
#include "pico/config.hpp"
#include "pico/maskctl.hpp"
#include "pico/prompt.hpp"
#include "pico/scoring.hpp"

namespace pico {

struct RunConfig {
    ControlConfig control;
    std::string prompt;
    std::size_t n_images = 1;
    std::uint64_t master_seed = 0;
    /// Echoed into the report; the caller constructs the backend.
    std::string backend = "toy";
    std::optional<std::filesystem::path> out_dir;
    bool dump_masks = false;
    AttributeLexicon lexicon = AttributeLexicon::builtin();
};

struct ImageResult {
    std::uint64_t seed = 0;
    Image image;
    LatentState latent;
    std::vector<ControlEvent> events;
};

/// Wall-clock milliseconds per stage. Kept apart from everything else in the
/// report so determinism checks can drop it.
struct StageTiming {
    double parse_ms = 0.0;
    double scoring_ms = 0.0;
    double generation_ms = 0.0;
    double output_ms = 0.0;
};

struct RunReport {
    RunConfig config;
    TokenizedPrompt tokens;
    std::vector<Concept> concepts;
    std::vector<NoiseCandidate> candidates;
    std::vector<ScoreReport> scores;
    std::vector<NoiseCandidate> selected;
    std::vector<ImageResult> images;
    StageTiming timing;
};

/// Full T-step trajectory from `seed` with mask control per `control`.
ImageResult generate_image(const Backend& backend, std::uint64_t seed, const TokenizedPrompt& tokens,
                           std::span<const Concept> concepts, const ControlConfig& control,
                           const MaskControllerOptions& options = {});

/// Parse, score N * r_s candidates, select N, generate each with control.
/// Writes images and report.json when `out_dir` is set.
RunReport run(const RunConfig& config, const Backend& backend);

/// Stops after selection; writes scoring.json when `out_dir` is set.
nlohmann::json run_noise_selection_only(const RunConfig& config, const Backend& backend);

/// Parameters run_ablation accepts.
const std::vector<std::string>& ablation_parameters();

/// One run per value with a shared master seed. Each run writes to
/// `out_dir/<parameter>=<value>`, and an ablation.json summary goes to
/// `out_dir`.
std::vector<RunReport> run_ablation(const RunConfig& config, const Backend& backend, std::string_view parameter,
                                    std::span<const std::string> values);

nlohmann::json to_json(const RunReport& report);
nlohmann::json concepts_json(std::span<const Concept> concepts);

/// File name stem for a seed, e.g. "seed_00000000deadbeef".
std::string seed_stem(std::uint64_t seed);

} // namespace pico
