#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pico/grid.hpp"
#include "pico/prompt.hpp"

namespace pico {

/// Denoising state z_t: one grid plane per latent channel.
struct LatentState {
    std::vector<Grid2D> planes;
    /// Remaining denoising steps; a trajectory ends at 0.
    int timestep = 0;
    /// Length T of the trajectory this state belongs to.
    int total_steps = 0;
    /// Seed the initial noise was drawn from.
    std::uint64_t seed = 0;

    std::size_t channels() const noexcept { return planes.size(); }
    std::size_t height() const noexcept { return planes.empty() ? 0 : planes.front().height(); }
    std::size_t width() const noexcept { return planes.empty() ? 0 : planes.front().width(); }

    friend bool operator==(const LatentState&, const LatentState&) = default;
};

/// Decoded image as colour planes (R, G, B), values nominally in [0, 1].
struct Image {
    std::vector<Grid2D> channels;

    std::size_t height() const noexcept { return channels.empty() ? 0 : channels.front().height(); }
    std::size_t width() const noexcept { return channels.empty() ? 0 : channels.front().width(); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Cross-attention maps of one layer at one timestep, ordered
/// [SOT, token 1, ..., token p, EOT].
struct AttentionStack {
    std::size_t layer = 0;
    int timestep = 0;
    std::vector<Grid2D> maps;

    std::size_t token_count() const noexcept { return maps.size() < 2 ? 0 : maps.size() - 2; }
    std::size_t height() const noexcept { return maps.empty() ? 0 : maps.front().height(); }
    std::size_t width() const noexcept { return maps.empty() ? 0 : maps.front().width(); }

    friend bool operator==(const AttentionStack&, const AttentionStack&) = default;
};

/// Text condition. `embeddings` holds p+2 rows (SOT, tokens, EOT) for
/// backends that encode locally; remote backends may leave it empty.
struct Condition {
    std::string text;
    TokenizedPrompt tokens;
    std::vector<std::vector<double>> embeddings;
};

struct Resolution {
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct BackendDescriptor {
    std::string name;
    std::size_t latent_channels = 0;
    Resolution latent;
    Resolution image;
    std::vector<Resolution> attention_layers;
    std::size_t embedding_dim = 0;
    /// How prompt word positions map onto condition rows. Only "identity"
    /// (word q -> row q, SOT at 0) is understood by the controller.
    std::string token_alignment = "identity";
};

/// Called once per denoising step with every layer's stack; may modify the
/// stacks in place before they drive the latent update.
using AttentionHook = std::function<void(const LatentState& z, std::vector<AttentionStack>& stacks)>;

/// Denoiser, referring segmenter and image/text embedder behind one
/// interface. Implementations must be deterministic.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendDescriptor describe() const = 0;
    /// True when one instance may be used from several threads at once.
    virtual bool thread_safe() const { return true; }

    // denoiser
    virtual LatentState init_latent(std::uint64_t seed, int steps) const = 0;
    virtual Condition encode(std::string_view text) const = 0;
    /// Row-softmax cross-attention stacks for every layer at z's timestep.
    virtual std::vector<AttentionStack> attention(const LatentState& z, const Condition& c) const = 0;
    /// Advances z by one step using the (possibly modulated) stacks.
    virtual LatentState update(const LatentState& z, const Condition& c, std::span<const AttentionStack> stacks) const = 0;
    virtual Image decode(const LatentState& z) const = 0;

    // segmenter
    virtual Grid2D segment(const Image& image, std::string_view referent) const = 0;

    // embedder
    virtual std::vector<double> embed_image(const Image& image) const = 0;
    virtual std::vector<double> embed_text(std::string_view text) const = 0;

    /// One denoising step: attention, optional hook, update.
    LatentState step(const LatentState& z, const Condition& c, const AttentionHook& hook = {}) const;
};

} // namespace pico
