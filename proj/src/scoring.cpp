#include "pico/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "pico/error.hpp"
#include "pico/random.hpp"

namespace pico {

std::vector<NoiseCandidate> build_candidate_set(std::size_t n_images, std::size_t ratio, std::uint64_t master_seed)
{
    if (n_images < 1 || ratio < 1) {
        throw invalid_argument("candidate set needs N >= 1 and r_s >= 1");
    }
    if (n_images > std::numeric_limits<std::size_t>::max() / ratio) {
        throw invalid_argument("N * r_s overflows the candidate count");
    }
    const std::size_t count = n_images * ratio;
    std::vector<NoiseCandidate> out;
    out.reserve(count);
    // mix64 is a bijection and the inputs master + i*phi are distinct mod
    // 2^64, so the seeds are distinct without a rejection loop.
    const std::uint64_t base = mix64(master_seed);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back({mix64(base + 0x9E37'79B9'7F4A'7C15ull * static_cast<std::uint64_t>(i))});
    }
    return out;
}

double cosine(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw Error(ErrorKind::backend, "embedding dimensions differ");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0 || !std::isfinite(na) || !std::isfinite(nb)) {
        throw Error(ErrorKind::backend, "degenerate embedding");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double itm_score(const Image& image, std::string_view prompt_text, const Backend& backend)
{
    const auto fi = backend.embed_image(image);
    const auto ft = backend.embed_text(prompt_text);
    return cosine(fi, ft);
}

ConceptStatistics concept_statistics(const Grid2D& seg, double q)
{
    const double tau = percentile(seg, q);
    double sum = 0.0;
    std::size_t count = 0;
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : seg.values()) {
        if (v > tau) {
            sum += v;
            ++count;
        }
        peak = std::max(peak, v);
    }
    return {count == 0 ? tau : sum / static_cast<double>(count), peak};
}

double concept_score(double v_avg, double v_max, double delta)
{
    if (v_avg < 0.0 || v_max < 0.0) {
        throw invalid_argument("concept score needs non-negative v_avg and v_max");
    }
    if (v_max <= absent_concept_epsilon) {
        return 0.0;
    }
    return v_max * delta + v_avg / v_max;
}

Image fast_sample(const Backend& backend, std::uint64_t seed, std::string_view text, int steps)
{
    LatentState z = backend.init_latent(seed, steps);
    const Condition c = backend.encode(text);
    while (z.timestep > 0) {
        z = backend.step(z, c);
    }
    return backend.decode(z);
}

ScoreReport score_candidate(const NoiseCandidate& candidate, std::string_view prompt_text, std::span<const Concept> concepts,
                            const Backend& backend, const ScoringParams& params)
{
    if (params.fast_steps < 1) {
        throw invalid_argument("T_s must be at least 1");
    }
    ScoreReport report;
    report.seed = candidate.seed;
    try {
        const Image full = fast_sample(backend, candidate.seed, prompt_text, params.fast_steps);
        report.provenance.push_back({std::string(prompt_text), params.fast_steps});
        report.itm = itm_score(full, prompt_text, backend);
        report.total = report.itm;

        for (const auto& c : concepts) {
            const Image single = fast_sample(backend, candidate.seed, c.text, params.fast_steps);
            report.provenance.push_back({c.text, params.fast_steps});
            // Statistics run on probabilities, keeping v_max >= 0 whatever
            // range the segmenter's logits have.
            const Grid2D prob = sigmoid(backend.segment(single, c.text));
            const auto stats = concept_statistics(prob, params.percentile);
            const double score = concept_score(stats.v_avg, stats.v_max, params.delta);
            report.per_concept.push_back({c.text, stats.v_avg, stats.v_max, score});
            report.total += score;
        }
    } catch (const Error& e) {
        throw Error(e.kind(), "scoring seed " + std::to_string(candidate.seed) + ": " + e.what());
    }
    return report;
}

std::vector<ScoreReport> score_candidates(std::span<const NoiseCandidate> candidates, std::string_view prompt_text,
                                          std::span<const Concept> concepts, const Backend& backend,
                                          const ScoringParams& params, int parallelism)
{
    std::vector<ScoreReport> reports(candidates.size());
    const std::size_t width = backend.thread_safe()
        ? std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), 1, std::max<std::size_t>(candidates.size(), 1))
        : 1;

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::size_t first_error_index = std::numeric_limits<std::size_t>::max();

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < candidates.size(); i = next.fetch_add(1)) {
            try {
                reports[i] = score_candidate(candidates[i], prompt_text, concepts, backend, params);
            } catch (...) {
                // Keep the error of the lowest index so failures are
                // reported identically under any scheduling.
                std::lock_guard lock(error_mutex);
                if (i < first_error_index) {
                    first_error_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };

    if (width == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(width);
        for (std::size_t w = 0; w < width; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    return reports;
}

std::vector<NoiseCandidate> select_top(std::span<const NoiseCandidate> candidates, std::span<const ScoreReport> reports,
                                       std::size_t n)
{
    if (candidates.size() != reports.size()) {
        throw invalid_argument("one score report per candidate is required");
    }
    if (n > candidates.size()) {
        throw invalid_argument("cannot select " + std::to_string(n) + " noises from " + std::to_string(candidates.size()) +
                               " candidates");
    }
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (reports[a].total != reports[b].total) {
            return reports[a].total > reports[b].total;
        }
        return candidates[a].seed < candidates[b].seed;
    });
    std::vector<NoiseCandidate> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(candidates[order[i]]);
    }
    return out;
}

nlohmann::json scoring_json(std::uint64_t master_seed, std::size_t n_images, std::size_t ratio, int fast_steps,
                            std::span<const ScoreReport> reports, std::span<const NoiseCandidate> selected)
{
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json concepts = nlohmann::json::array();
        for (const auto& c : r.per_concept) {
            concepts.push_back({{"text", c.text}, {"v_avg", c.v_avg}, {"v_max", c.v_max}, {"score", c.score}});
        }
        nlohmann::json provenance = nlohmann::json::array();
        for (const auto& p : r.provenance) {
            provenance.push_back({{"condition", p.condition}, {"steps", p.steps}});
        }
        cands.push_back({{"seed", r.seed}, {"itm", r.itm}, {"concepts", concepts}, {"total", r.total}, {"fast_samples", provenance}});
    }
    nlohmann::json chosen = nlohmann::json::array();
    for (const auto& s : selected) {
        chosen.push_back(s.seed);
    }
    return {
        {"master_seed", master_seed},
        {"N", n_images},
        {"r_s", ratio},
        {"T_s", fast_steps},
        {"candidates", cands},
        {"selected", chosen},
    };
}

} // namespace pico
