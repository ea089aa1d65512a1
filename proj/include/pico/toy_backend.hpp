#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pico/backend.hpp"
#include "pico/random.hpp"

namespace pico {

using Rgb = std::array<double, 3>;

/// Colour words the toy renderer, segmenter and embedder understand.
struct Palette {
    struct Entry {
        std::string name;
        Rgb rgb;
    };
    std::vector<Entry> entries;

    static const Palette& builtin();
    std::optional<std::size_t> find(std::string_view word) const;
};

/// Placement of one concept's blob for a given noise seed.
struct BlobSpec {
    bool present = true;
    /// Rendering weight at the end of a trajectory; dropped blobs keep a
    /// small residual weight.
    double weight = 1.0;
    /// Rendering weight at the start of a trajectory. Dropped blobs begin
    /// to form and fade towards `weight`; present blobs hold it constant.
    double onset_weight = 1.0;
    /// Centre in latent cell coordinates (cell i is centred at i).
    double center_x = 0.0;
    double center_y = 0.0;
    /// Radius in latent cells.
    double radius = 3.0;
};

struct ToyBackendOptions {
    std::size_t latent_channels = 4;
    std::size_t latent_size = 16;
    std::size_t image_size = 128;
    std::vector<std::size_t> attention_sizes{16, 8};
    std::size_t embedding_dim = 32;
    /// Probability a concept's blob is dropped for a seed.
    double dropout = 0.3;
    double present_weight_min = 0.8;
    double present_weight_max = 1.0;
    double dropped_weight_min = 0.03;
    double dropped_weight_max = 0.08;
    double dropped_onset_min = 0.8;
    double dropped_onset_max = 1.0;
    /// Dropped weight at remaining fraction f = t/T is
    /// weight + (onset_weight - weight) * f^neglect_exponent.
    double neglect_exponent = 1.5;
    double radius_min = 2.5;
    double radius_max = 3.5;
    /// Strength of the colour component in concept token embeddings.
    double colour_gain = 6.0;
    /// Off-identity scale of the seeded Q/K projections.
    double projection_noise = 0.15;
    double segment_scale = 8.0;
    /// Normalised colour distance at which the segmenter logit crosses 0
    /// is 1 - segment_offset.
    double segment_offset = 0.75;
    double histogram_sigma = 0.2;
    Rgb background{0.5, 0.5, 0.5};
};

/// "Blob world": a fully deterministic stand-in for a latent diffusion model,
/// a referring segmenter and a CLIP-style embedder.
///
/// Every concept in a condition owns a blob whose placement is hashed from
/// (noise seed, concept text). Each step moves the latent a 1/t fraction of
/// the way toward a target scene in which concept r paints its colour with
/// intensity weight * footprint * normalised attention mass of its tokens, so
/// the update is linear in attention.
class ToyBackend final : public Backend {
public:
    explicit ToyBackend(ToyBackendOptions options = {}, const Palette& palette = Palette::builtin(),
                        const AttributeLexicon& lexicon = AttributeLexicon::builtin());

    BackendDescriptor describe() const override;

    LatentState init_latent(std::uint64_t seed, int steps) const override;
    Condition encode(std::string_view text) const override;
    std::vector<AttentionStack> attention(const LatentState& z, const Condition& c) const override;
    LatentState update(const LatentState& z, const Condition& c, std::span<const AttentionStack> stacks) const override;
    Image decode(const LatentState& z) const override;

    Grid2D segment(const Image& image, std::string_view referent) const override;

    std::vector<double> embed_image(const Image& image) const override;
    std::vector<double> embed_text(std::string_view text) const override;

    /// Blob placement for a concept under a seed.
    BlobSpec layout(std::uint64_t seed, std::string_view concept_text) const;
    /// Rendering weight of a blob with `timestep` of `total_steps` remaining.
    double render_weight(const BlobSpec& blob, int timestep, int total_steps) const;
    /// Soft disk footprint of a blob on the latent grid, in [0, 1].
    Grid2D footprint(const BlobSpec& blob) const;
    /// Footprint resampled to an arbitrary grid size.
    Grid2D footprint(const BlobSpec& blob, std::size_t height, std::size_t width) const;
    /// Colour of the first palette word among the referent's attributes.
    std::optional<Rgb> referent_colour(std::string_view referent) const;

    const ToyBackendOptions& options() const noexcept { return options_; }
    const Palette& palette() const noexcept { return palette_; }
    const AttributeLexicon& lexicon() const noexcept { return lexicon_; }

private:
    struct Projection {
        std::vector<double> query;  // d x d, row-major
        std::vector<double> key;    // d x d, row-major
    };

    struct BoundConcept {
        TokenSpan span;
        Rgb colour;
        std::string text;
    };

    std::vector<BoundConcept> bind(const Condition& c) const;
    std::vector<double> pixel_features(const std::vector<Grid2D>& planes, std::size_t y, std::size_t x) const;

    ToyBackendOptions options_;
    Palette palette_;
    AttributeLexicon lexicon_;
    std::vector<Projection> projections_;
};

} // namespace pico
