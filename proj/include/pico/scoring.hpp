#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pico/backend.hpp"
#include "pico/grid.hpp"
#include "pico/prompt.hpp"

namespace pico {

/// An initial noise, identified by the seed the backend draws z_T from.
struct NoiseCandidate {
    std::uint64_t seed = 0;

    friend bool operator==(const NoiseCandidate&, const NoiseCandidate&) = default;
};

struct ConceptStatistics {
    double v_avg = 0.0;
    double v_max = 0.0;
};

struct ConceptScore {
    std::string text;
    double v_avg = 0.0;
    double v_max = 0.0;
    double score = 0.0;
};

/// One fast-sampling trajectory run while scoring a candidate.
struct FastSample {
    std::string condition;
    int steps = 0;
};

struct ScoreReport {
    std::uint64_t seed = 0;
    double itm = 0.0;
    std::vector<ConceptScore> per_concept;
    /// itm, then concept scores in extraction order.
    double total = 0.0;
    std::vector<FastSample> provenance;
};

struct ScoringParams {
    int fast_steps = 5;
    double percentile = 90.0;
    double delta = 2.0;
};

inline constexpr double absent_concept_epsilon = 1e-8;

/// N * r_s candidates with pairwise distinct seeds mix(master_seed, i).
std::vector<NoiseCandidate> build_candidate_set(std::size_t n_images, std::size_t ratio, std::uint64_t master_seed);

/// Cosine similarity; throws "degenerate embedding" on zero norm.
double cosine(std::span<const double> a, std::span<const double> b);
double itm_score(const Image& image, std::string_view prompt_text, const Backend& backend);

ConceptStatistics concept_statistics(const Grid2D& seg, double q);
/// v_max * delta + v_avg / v_max, or 0 when v_max <= epsilon.
double concept_score(double v_avg, double v_max, double delta);

/// Runs a `steps`-step trajectory from the seed's noise under `text`.
Image fast_sample(const Backend& backend, std::uint64_t seed, std::string_view text, int steps);

ScoreReport score_candidate(const NoiseCandidate& candidate, std::string_view prompt_text, std::span<const Concept> concepts,
                            const Backend& backend, const ScoringParams& params);

/// Scores every candidate with up to `parallelism` workers. Reports come
/// back in candidate order regardless of scheduling.
std::vector<ScoreReport> score_candidates(std::span<const NoiseCandidate> candidates, std::string_view prompt_text,
                                          std::span<const Concept> concepts, const Backend& backend,
                                          const ScoringParams& params, int parallelism);

/// Highest totals first; ties by ascending seed.
std::vector<NoiseCandidate> select_top(std::span<const NoiseCandidate> candidates, std::span<const ScoreReport> reports,
                                       std::size_t n);

nlohmann::json scoring_json(std::uint64_t master_seed, std::size_t n_images, std::size_t ratio, int fast_steps,
                            std::span<const ScoreReport> reports, std::span<const NoiseCandidate> selected);

} // namespace pico
