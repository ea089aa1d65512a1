#include "pico/maskctl.hpp"

#include <algorithm>
#include <cstdio>

#include "pico/error.hpp"
#include "pico/grid_io.hpp"

namespace pico {

namespace {

void check_span(const AttentionStack& stack, TokenSpan span)
{
    if (span.first < 1 || span.first > span.last || span.last > stack.token_count()) {
        throw invalid_argument("token span " + std::to_string(span.first) + ".." + std::to_string(span.last) +
                               " outside 1.." + std::to_string(stack.token_count()));
    }
}

void check_disjoint(std::span<const TokenSpan> spans)
{
    for (std::size_t i = 0; i < spans.size(); ++i) {
        for (std::size_t j = i + 1; j < spans.size(); ++j) {
            if (spans[i].overlaps(spans[j])) {
                throw invalid_argument("concept spans overlap");
            }
        }
    }
}

Grid2D fit(const Grid2D& g, const AttentionStack& stack)
{
    return resample(g, stack.height(), stack.width());
}

std::string padded(std::size_t v, int width)
{
    std::string s = std::to_string(v);
    if (static_cast<int>(s.size()) < width) {
        s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    }
    return s;
}

} // namespace

std::vector<RawConceptMask> segment_intermediate(const LatentState& z, std::span<const Concept> concepts, const Backend& backend)
{
    std::vector<RawConceptMask> out;
    if (concepts.empty()) {
        return out;
    }
    try {
        const Image image = backend.decode(z);
        out.reserve(concepts.size());
        for (std::size_t r = 0; r < concepts.size(); ++r) {
            out.push_back({r, backend.segment(image, concepts[r].text)});
        }
    } catch (const Error& e) {
        throw Error(e.kind(), "segmenting at t=" + std::to_string(z.timestep) + ": " + e.what());
    }
    return out;
}

ValidatedMask validate(const RawConceptMask& m, double alpha_l, double alpha_h, double q)
{
    ValidatedMask out;
    out.concept_index = m.concept_index;
    out.max_logit = m.logits.max();
    const double rho = percentile(m.logits, q);
    out.sigma = coord_dispersion(m.logits, rho).sigma;
    if (out.max_logit < alpha_l && out.sigma > alpha_h) {
        out.state = MaskState::discarded;
        return out;
    }
    out.state = MaskState::active;
    out.probabilities = sigmoid(m.logits);
    return out;
}

ValidatedMask accept(const RawConceptMask& m)
{
    ValidatedMask out;
    out.concept_index = m.concept_index;
    out.max_logit = m.logits.max();
    out.state = MaskState::active;
    out.probabilities = sigmoid(m.logits);
    return out;
}

ConflictResult eliminate_conflicts(std::span<const ValidatedMask> masks, double conflict_threshold)
{
    ConflictResult out;
    out.masks.assign(masks.begin(), masks.end());
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].active()) {
            if (!active.empty() && !masks[i].probabilities.same_shape(masks[active.front()].probabilities)) {
                throw invalid_argument("conflict elimination needs masks of one shape");
            }
            active.push_back(i);
        }
    }
    if (active.size() < 2) {
        return out;
    }
    const std::size_t cells = masks[active.front()].probabilities.size();
    for (std::size_t c = 0; c < cells; ++c) {
        std::size_t claims = 0;
        std::size_t winner = active.front();
        double best = -1.0;
        for (std::size_t i : active) {
            const double v = masks[i].probabilities.values()[c];
            if (v > conflict_threshold) {
                ++claims;
            }
            // Strict > keeps the lowest index on ties.
            if (v > best) {
                best = v;
                winner = i;
            }
        }
        if (claims < 2) {
            continue;
        }
        ++out.conflict_pixels;
        for (std::size_t i : active) {
            if (i != winner) {
                out.masks[i].probabilities.values()[c] = 0.0;
            }
        }
    }
    return out;
}

double augment(double v, double beta_l, double beta_h, double gamma) noexcept
{
    if (v >= beta_h) {
        return v * gamma;
    }
    if (v <= beta_l) {
        return v / gamma;
    }
    return v;
}

Grid2D augment(const Grid2D& probabilities, double beta_l, double beta_h, double gamma)
{
    if (!(gamma > 0.0)) {
        throw invalid_argument("gamma must be positive");
    }
    Grid2D out = map(probabilities, [&](double v) { return augment(v, beta_l, beta_h, gamma); });
    out.set_role(GridRole::attention);
    return out;
}

AttentionStack apply_concept_mask(AttentionStack stack, TokenSpan span, const Grid2D& m_aug)
{
    check_span(stack, span);
    const Grid2D m = fit(m_aug, stack);
    for (std::size_t q = span.first; q <= span.last; ++q) {
        auto& a = stack.maps[q];
        const auto mv = m.values();
        auto av = a.values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            av[i] *= mv[i];
        }
    }
    return stack;
}

AttentionStack apply_exclusive_masks(AttentionStack stack, std::span<const TokenSpan> spans, std::span<const ValidatedMask> masks)
{
    if (spans.size() != masks.size()) {
        throw invalid_argument("one mask per concept span is required");
    }
    check_disjoint(spans);
    for (const auto& s : spans) {
        check_span(stack, s);
    }

    std::vector<Grid2D> inverse(masks.size());
    for (std::size_t r = 0; r < masks.size(); ++r) {
        if (masks[r].active()) {
            inverse[r] = fit(complement(masks[r].probabilities), stack);
        }
    }
    auto scale_token = [&](std::size_t q, std::size_t skip) {
        auto av = stack.maps[q].values();
        for (std::size_t g = 0; g < inverse.size(); ++g) {
            if (g == skip || inverse[g].empty()) {
                continue;
            }
            const auto iv = inverse[g].values();
            for (std::size_t i = 0; i < av.size(); ++i) {
                av[i] *= iv[i];
            }
        }
    };

    const std::size_t none = masks.size();
    for (std::size_t q = 1; q <= stack.token_count(); ++q) {
        std::size_t owner = none;
        for (std::size_t r = 0; r < spans.size(); ++r) {
            if (spans[r].contains(q)) {
                owner = r;
            }
        }
        scale_token(q, owner);
    }
    return stack;
}

TimestepMasks compute_timestep_masks(const LatentState& z, std::span<const Concept> concepts, const Backend& backend,
                                     const ControlConfig& config)
{
    const auto raw = segment_intermediate(z, concepts, backend);
    std::vector<ValidatedMask> validated;
    validated.reserve(raw.size());
    for (const auto& m : raw) {
        validated.push_back(config.mask_validation ? validate(m, config.alpha_l, config.alpha_h, config.percentile) : accept(m));
    }
    TimestepMasks out;
    if (config.conflict_elimination) {
        auto resolved = eliminate_conflicts(validated, config.conflict_threshold);
        out.masks = std::move(resolved.masks);
        out.conflict_pixels = resolved.conflict_pixels;
    } else {
        out.masks = std::move(validated);
    }
    out.augmented.resize(out.masks.size());
    for (std::size_t r = 0; r < out.masks.size(); ++r) {
        if (out.masks[r].active()) {
            out.augmented[r] = augment(out.masks[r].probabilities, config.beta_l, config.beta_h, config.gamma);
        }
    }
    return out;
}

AttentionStack modulate(const AttentionStack& stack, std::span<const Concept> concepts, const TimestepMasks& masks,
                        const ControlConfig& config)
{
    if (concepts.size() != masks.masks.size()) {
        throw invalid_argument("one mask per concept is required");
    }
    AttentionStack out = stack;
    if (config.concept_mask) {
        for (std::size_t r = 0; r < concepts.size(); ++r) {
            if (masks.masks[r].active()) {
                out = apply_concept_mask(std::move(out), concepts[r].span, masks.augmented[r]);
            }
        }
    }
    if (config.exclusive_mask) {
        std::vector<TokenSpan> spans;
        spans.reserve(concepts.size());
        for (const auto& c : concepts) {
            spans.push_back(c.span);
        }
        out = apply_exclusive_masks(std::move(out), spans, masks.masks);
    }
    return out;
}

int step_index(const ControlConfig& config, int timestep) noexcept
{
    return config.total_steps - timestep;
}

bool control_active(const ControlConfig& config, int timestep) noexcept
{
    if (!config.mask_control) {
        return false;
    }
    const int k = step_index(config, timestep);
    return k >= config.control_start && k < config.control_start + config.control_steps && k < config.total_steps;
}

int expected_control_events(const ControlConfig& config) noexcept
{
    if (!config.mask_control) {
        return 0;
    }
    return std::max(0, std::min(config.control_steps, config.total_steps - config.control_start));
}

AttentionStack control_step(const AttentionStack& stack, std::span<const Concept> concepts, const ControlConfig& config,
                            const LatentState& z, const Backend& backend)
{
    if (!control_active(config, z.timestep) || concepts.empty()) {
        return stack;
    }
    const auto masks = compute_timestep_masks(z, concepts, backend, config);
    return modulate(stack, concepts, masks, config);
}

nlohmann::json to_json(const ControlEvent& e)
{
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& c : e.concepts) {
        concepts.push_back({{"state", c.state == MaskState::active ? "active" : "discarded"},
                            {"max_logit", c.max_logit},
                            {"sigma", c.sigma}});
    }
    return {{"step", e.step},
            {"t", e.timestep},
            {"masks", concepts},
            {"conflict_pixels", e.conflict_pixels},
            {"layers_modulated", e.layers_modulated}};
}

MaskController::MaskController(const Backend& backend, const TokenizedPrompt& prompt, std::vector<Concept> concepts,
                               ControlConfig config, MaskControllerOptions options)
    : backend_(&backend),
      concepts_(std::move(concepts)),
      config_(config),
      options_(std::move(options)),
      token_names_(token_labels(prompt))
{
}

AttentionHook MaskController::hook()
{
    return [this](const LatentState& z, std::vector<AttentionStack>& stacks) { (*this)(z, stacks); };
}

void MaskController::operator()(const LatentState& z, std::vector<AttentionStack>& stacks)
{
    if (!control_active(config_, z.timestep) || concepts_.empty()) {
        return;
    }
    const auto masks = compute_timestep_masks(z, concepts_, *backend_, config_);

    ControlEvent event;
    event.step = step_index(config_, z.timestep);
    event.timestep = z.timestep;
    event.conflict_pixels = masks.conflict_pixels;
    for (const auto& m : masks.masks) {
        event.concepts.push_back({m.state, m.max_logit, m.sigma});
    }

    std::vector<AttentionStack> pre;
    if (options_.dump_dir) {
        pre = stacks;
    }
    for (std::size_t l = 0; l < stacks.size(); ++l) {
        if (!options_.layer_mask.empty() && (l >= options_.layer_mask.size() || !options_.layer_mask[l])) {
            continue;
        }
        stacks[l] = modulate(stacks[l], concepts_, masks, config_);
        ++event.layers_modulated;
    }
    if (options_.dump_dir) {
        dump(z, masks, pre, stacks);
    }
    events_.push_back(std::move(event));
}

void MaskController::dump(const LatentState& z, const TimestepMasks& masks, const std::vector<AttentionStack>& pre,
                          const std::vector<AttentionStack>& post) const
{
    const auto root = *options_.dump_dir / ("t" + padded(static_cast<std::size_t>(z.timestep), 3));
    for (std::size_t r = 0; r < masks.masks.size(); ++r) {
        const auto& m = masks.masks[r];
        if (!m.active()) {
            continue;
        }
        const auto base = root / "masks" / ("concept" + std::to_string(r));
        write_pgrd(base.string() + "_validated.pgrd", m.probabilities);
        write_pgrd(base.string() + "_augmented.pgrd", masks.augmented[r]);
    }
    for (std::size_t l = 0; l < pre.size(); ++l) {
        const auto dir = root / ("layer" + std::to_string(l));
        for (std::size_t q = 0; q < pre[l].maps.size(); ++q) {
            const std::string name = q < token_names_.size() ? token_names_[q] : padded(q, 2);
            write_pgrd(dir / (name + "_pre.pgrd"), pre[l].maps[q]);
            write_pgrd(dir / (name + "_post.pgrd"), post[l].maps[q]);
        }
    }
}

std::vector<std::string> token_labels(const TokenizedPrompt& tp)
{
    std::vector<std::string> out;
    out.reserve(tp.length() + 2);
    out.push_back("00_sot");
    for (std::size_t q = 1; q <= tp.length(); ++q) {
        out.push_back(padded(q, 2) + "_" + tp.token(q));
    }
    out.push_back(padded(tp.length() + 1, 2) + "_eot");
    return out;
}

} // namespace pico
