#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pico/backend.hpp"
#include "pico/config.hpp"
#include "pico/grid.hpp"
#include "pico/prompt.hpp"

namespace pico {

struct RawConceptMask {
    std::size_t concept_index = 0;
    Grid2D logits;
};

enum class MaskState { discarded, active };

struct ValidatedMask {
    std::size_t concept_index = 0;
    MaskState state = MaskState::discarded;
    /// Sigmoid probabilities; empty when discarded.
    Grid2D probabilities;
    double max_logit = 0.0;
    double sigma = 0.0;

    bool active() const noexcept { return state == MaskState::active; }
};

/// Decodes z and queries the segmenter once per concept, in concept order.
std::vector<RawConceptMask> segment_intermediate(const LatentState& z, std::span<const Concept> concepts, const Backend& backend);

/// Discards a mask when max(logits) < alpha_l and the dispersion of its
/// cells above the q-th percentile exceeds alpha_h; otherwise keeps
/// sigmoid(logits).
ValidatedMask validate(const RawConceptMask& m, double alpha_l, double alpha_h, double q);
/// A mask accepted without the dispersion gate.
ValidatedMask accept(const RawConceptMask& m);

struct ConflictResult {
    std::vector<ValidatedMask> masks;
    /// Pixels where two or more active masks exceeded the threshold.
    std::size_t conflict_pixels = 0;
};

/// Inside the conflict area each pixel keeps only its argmax mask (ties to
/// the lowest index); every other active mask is zeroed there.
ConflictResult eliminate_conflicts(std::span<const ValidatedMask> masks, double conflict_threshold);

/// v >= beta_h -> v * gamma; v <= beta_l -> v / gamma; otherwise v.
double augment(double v, double beta_l, double beta_h, double gamma) noexcept;
Grid2D augment(const Grid2D& probabilities, double beta_l, double beta_h, double gamma);

/// Multiplies token maps a..b by m_aug resampled to the stack resolution.
AttentionStack apply_concept_mask(AttentionStack stack, TokenSpan span, const Grid2D& m_aug);

/// `masks[r]` belongs to `spans[r]`. Concept r's span is multiplied by the
/// product of (1 - M_g) over the other active masks; tokens outside every
/// span by the product over all active masks. SOT and EOT are untouched.
AttentionStack apply_exclusive_masks(AttentionStack stack, std::span<const TokenSpan> spans, std::span<const ValidatedMask> masks);

/// Masks computed once per controlled timestep and shared by all layers.
struct TimestepMasks {
    std::vector<ValidatedMask> masks;
    /// Augmented grid per concept; empty for discarded concepts.
    std::vector<Grid2D> augmented;
    std::size_t conflict_pixels = 0;
};

TimestepMasks compute_timestep_masks(const LatentState& z, std::span<const Concept> concepts, const Backend& backend,
                                     const ControlConfig& config);

/// Applies the concept and exclusive masks enabled in `config`.
AttentionStack modulate(const AttentionStack& stack, std::span<const Concept> concepts, const TimestepMasks& masks,
                        const ControlConfig& config);

/// 0-based denoising step index of a state with `timestep` steps remaining.
int step_index(const ControlConfig& config, int timestep) noexcept;

/// True for the T_c consecutive step indices starting at control_start.
bool control_active(const ControlConfig& config, int timestep) noexcept;

/// Number of steps control_active admits over a T-step trajectory.
int expected_control_events(const ControlConfig& config) noexcept;

/// One layer's control: identity outside the window, otherwise segment,
/// validate, eliminate conflicts, augment and modulate.
AttentionStack control_step(const AttentionStack& stack, std::span<const Concept> concepts, const ControlConfig& config,
                            const LatentState& z, const Backend& backend);

struct ConceptEvent {
    MaskState state = MaskState::discarded;
    double max_logit = 0.0;
    double sigma = 0.0;
};

struct ControlEvent {
    int step = 0;
    int timestep = 0;
    std::vector<ConceptEvent> concepts;
    std::size_t conflict_pixels = 0;
    std::size_t layers_modulated = 0;
};

nlohmann::json to_json(const ControlEvent& e);

struct MaskControllerOptions {
    /// Root for per-(t, layer, token) PGRD dumps; disabled when unset.
    std::optional<std::filesystem::path> dump_dir;
    /// Layers to modulate; empty means all.
    std::vector<bool> layer_mask;
};

/// Stateful attention hook for one trajectory. Not thread safe; use one
/// controller per image.
class MaskController {
public:
    MaskController(const Backend& backend, const TokenizedPrompt& prompt, std::vector<Concept> concepts, ControlConfig config,
                   MaskControllerOptions options = {});

    AttentionHook hook();
    void operator()(const LatentState& z, std::vector<AttentionStack>& stacks);

    const std::vector<ControlEvent>& events() const noexcept { return events_; }

private:
    void dump(const LatentState& z, const TimestepMasks& masks, const std::vector<AttentionStack>& pre,
              const std::vector<AttentionStack>& post) const;

    const Backend* backend_;
    std::vector<Concept> concepts_;
    ControlConfig config_;
    MaskControllerOptions options_;
    std::vector<std::string> token_names_;
    std::vector<ControlEvent> events_;
};

/// Token label used for dump file names: "00_sot", "02_blue", ..., "08_eot".
std::vector<std::string> token_labels(const TokenizedPrompt& tp);

} // namespace pico
