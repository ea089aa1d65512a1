#include "pico/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pico/error.hpp"
#include "pico/random.hpp"

namespace pico {

namespace {

constexpr std::uint64_t projection_seed = 0x70C0'5EED'0000'0001ull;
constexpr std::size_t colour_dims = 3;
constexpr std::size_t positional_offset = 4;

double colour_distance(const Rgb& a, const Rgb& b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

Rgb to_latent(const Rgb& c)
{
    return {2.0 * c[0] - 1.0, 2.0 * c[1] - 1.0, 2.0 * c[2] - 1.0};
}

std::vector<double> word_vector(std::string_view word, std::size_t dim)
{
    std::vector<double> v(dim, 0.0);
    SplitMix64 rng(mix64(hash_text(word)));
    for (std::size_t i = positional_offset; i < dim; ++i) {
        v[i] = 0.3 * rng.normal();
    }
    return v;
}

std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& v)
{
    const std::size_t d = v.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc += m[r * d + c] * v[c];
        }
        out[r] = acc;
    }
    return out;
}

void normalize(std::vector<double>& v)
{
    double n = 0.0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    if (n <= 0.0) {
        throw Error(ErrorKind::backend, "degenerate embedding");
    }
    for (double& x : v) {
        x /= n;
    }
}

} // namespace

const Palette& Palette::builtin()
{
    static const Palette palette{{
        {"red", {1.0, 0.0, 0.0}},
        {"green", {0.0, 1.0, 0.0}},
        {"blue", {0.0, 0.0, 1.0}},
        {"yellow", {1.0, 1.0, 0.0}},
        {"cyan", {0.0, 1.0, 1.0}},
        {"magenta", {1.0, 0.0, 1.0}},
        {"white", {1.0, 1.0, 1.0}},
        {"black", {0.0, 0.0, 0.0}},
        {"orange", {1.0, 0.5, 0.0}},
        {"purple", {0.5, 0.0, 0.5}},
        {"pink", {1.0, 0.6, 0.8}},
        {"brown", {0.55, 0.27, 0.07}},
        {"gold", {1.0, 0.84, 0.0}},
    }};
    return palette;
}

std::optional<std::size_t> Palette::find(std::string_view word) const
{
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == word) {
            return i;
        }
    }
    return std::nullopt;
}

ToyBackend::ToyBackend(ToyBackendOptions options, const Palette& palette, const AttributeLexicon& lexicon)
    : options_(std::move(options)), palette_(palette), lexicon_(lexicon)
{
    const std::size_t d = options_.embedding_dim;
    if (d < positional_offset + 4) {
        throw invalid_argument("toy backend needs an embedding dimension of at least 8");
    }
    if (options_.latent_channels < colour_dims) {
        throw invalid_argument("toy backend needs at least three latent channels");
    }
    for (std::size_t s : options_.attention_sizes) {
        if (s == 0 || options_.latent_size % s != 0 || options_.image_size % s != 0) {
            throw invalid_argument("attention resolutions must divide the latent and image resolutions");
        }
    }
    for (const auto& e : palette_.entries) {
        if (colour_distance(e.rgb, options_.background) <= 0.0) {
            throw invalid_argument("palette colour '" + e.name + "' coincides with the background");
        }
    }

    const double noise = options_.projection_noise / std::sqrt(static_cast<double>(d));
    for (std::size_t layer = 0; layer < options_.attention_sizes.size(); ++layer) {
        SplitMix64 rng(mix64(projection_seed + layer));
        Projection p;
        p.query.assign(d * d, 0.0);
        p.key.assign(d * d, 0.0);
        for (std::size_t i = 0; i < d * d; ++i) {
            p.query[i] = noise * rng.normal();
        }
        for (std::size_t i = 0; i < d * d; ++i) {
            p.key[i] = noise * rng.normal();
        }
        for (std::size_t i = 0; i < d; ++i) {
            p.query[i * d + i] += 1.0;
            p.key[i * d + i] += 1.0;
        }
        projections_.push_back(std::move(p));
    }
}

BackendDescriptor ToyBackend::describe() const
{
    BackendDescriptor d;
    d.name = "toy-blob-world";
    d.latent_channels = options_.latent_channels;
    d.latent = {options_.latent_size, options_.latent_size};
    d.image = {options_.image_size, options_.image_size};
    for (std::size_t s : options_.attention_sizes) {
        d.attention_layers.push_back({s, s});
    }
    d.embedding_dim = options_.embedding_dim;
    d.token_alignment = "identity";
    return d;
}

LatentState ToyBackend::init_latent(std::uint64_t seed, int steps) const
{
    if (steps < 1) {
        throw invalid_argument("a trajectory needs at least one step");
    }
    LatentState z;
    z.seed = seed;
    z.timestep = steps;
    z.total_steps = steps;
    SplitMix64 rng(mix64(seed));
    const std::size_t n = options_.latent_size;
    for (std::size_t c = 0; c < options_.latent_channels; ++c) {
        Grid2D plane(n, n);
        for (auto& v : plane.values()) {
            v = rng.normal();
        }
        z.planes.push_back(std::move(plane));
    }
    return z;
}

std::optional<Rgb> ToyBackend::referent_colour(std::string_view referent) const
{
    std::vector<Concept> concepts;
    try {
        concepts = extract_concepts(tokenize(referent), lexicon_);
    } catch (const Error&) {
        return std::nullopt;
    }
    const auto& c = concepts.front();
    for (const auto& a : c.attributes) {
        if (auto idx = palette_.find(a)) {
            return palette_.entries[*idx].rgb;
        }
    }
    if (auto idx = palette_.find(c.noun)) {
        return palette_.entries[*idx].rgb;
    }
    return std::nullopt;
}

std::vector<ToyBackend::BoundConcept> ToyBackend::bind(const Condition& c) const
{
    std::vector<BoundConcept> bound;
    std::vector<Concept> concepts;
    try {
        concepts = extract_concepts(c.tokens, lexicon_);
    } catch (const Error&) {
        return bound;
    }
    for (const auto& item : concepts) {
        if (auto colour = referent_colour(item.text)) {
            bound.push_back({item.span, *colour, item.text});
        }
    }
    return bound;
}

Condition ToyBackend::encode(std::string_view text) const
{
    Condition c;
    c.text = std::string(text);
    c.tokens = tokenize(text);
    const std::size_t p = c.tokens.length();
    const std::size_t d = options_.embedding_dim;

    c.embeddings.reserve(p + 2);
    c.embeddings.push_back(word_vector("<|startoftext|>", d));
    for (const auto& tok : c.tokens.tokens) {
        c.embeddings.push_back(word_vector(tok, d));
    }
    c.embeddings.push_back(word_vector("<|endoftext|>", d));

    // Concept tokens carry their concept's colour, the toy analogue of a
    // contextualised text encoder binding the attribute into the noun.
    for (const auto& b : bind(c)) {
        const Rgb target = to_latent(b.colour);
        for (std::size_t q = b.span.first; q <= b.span.last; ++q) {
            for (std::size_t k = 0; k < colour_dims; ++k) {
                c.embeddings[q][k] = options_.colour_gain * target[k];
            }
        }
    }
    return c;
}

std::vector<double> ToyBackend::pixel_features(const std::vector<Grid2D>& planes, std::size_t y, std::size_t x) const
{
    std::vector<double> f(options_.embedding_dim, 0.0);
    for (std::size_t c = 0; c < planes.size() && c < positional_offset; ++c) {
        f[c] = planes[c].at(y, x);
    }
    const double h = static_cast<double>(planes.front().height());
    const double w = static_cast<double>(planes.front().width());
    const double tau = 2.0 * std::numbers::pi;
    f[positional_offset + 0] = 0.5 * std::sin(tau * static_cast<double>(x) / w);
    f[positional_offset + 1] = 0.5 * std::cos(tau * static_cast<double>(x) / w);
    f[positional_offset + 2] = 0.5 * std::sin(tau * static_cast<double>(y) / h);
    f[positional_offset + 3] = 0.5 * std::cos(tau * static_cast<double>(y) / h);
    return f;
}

std::vector<AttentionStack> ToyBackend::attention(const LatentState& z, const Condition& cond) const
{
    if (z.channels() != options_.latent_channels || z.height() != options_.latent_size) {
        throw Error(ErrorKind::backend, "latent shape does not match the toy backend");
    }
    const Condition encoded = cond.embeddings.empty() ? encode(cond.text) : Condition{};
    const Condition& c = cond.embeddings.empty() ? encoded : cond;
    const std::size_t rows = c.embeddings.size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(options_.embedding_dim));

    std::vector<AttentionStack> stacks;
    for (std::size_t layer = 0; layer < options_.attention_sizes.size(); ++layer) {
        const std::size_t s = options_.attention_sizes[layer];
        const auto& proj = projections_[layer];

        std::vector<Grid2D> planes;
        for (const auto& p : z.planes) {
            planes.push_back(downsample_mean(p, options_.latent_size / s));
        }
        std::vector<std::vector<double>> keys;
        keys.reserve(rows);
        for (const auto& e : c.embeddings) {
            keys.push_back(matvec(proj.key, e));
        }

        AttentionStack stack;
        stack.layer = layer;
        stack.timestep = z.timestep;
        stack.maps.assign(rows, Grid2D(s, s, 0.0, GridRole::attention));
        std::vector<double> logits(rows);
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                const auto q = matvec(proj.query, pixel_features(planes, y, x));
                double peak = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < rows; ++j) {
                    double dot = 0.0;
                    for (std::size_t k = 0; k < q.size(); ++k) {
                        dot += q[k] * keys[j][k];
                    }
                    logits[j] = dot * inv_sqrt_d;
                    peak = std::max(peak, logits[j]);
                }
                double norm = 0.0;
                for (auto& l : logits) {
                    l = std::exp(l - peak);
                    norm += l;
                }
                for (std::size_t j = 0; j < rows; ++j) {
                    stack.maps[j].at(y, x) = logits[j] / norm;
                }
            }
        }
        stacks.push_back(std::move(stack));
    }
    return stacks;
}

LatentState ToyBackend::update(const LatentState& z, const Condition& c, std::span<const AttentionStack> stacks) const
{
    if (z.timestep < 1) {
        throw Error(ErrorKind::backend, "trajectory exhausted");
    }
    if (stacks.size() != options_.attention_sizes.size()) {
        throw Error(ErrorKind::backend, "expected one attention stack per layer");
    }
    const std::size_t p = c.tokens.length();
    for (const auto& s : stacks) {
        if (s.maps.size() != p + 2) {
            throw Error(ErrorKind::backend, "attention stack does not match the condition length");
        }
    }
    const std::size_t n = options_.latent_size;
    std::vector<Grid2D> target(options_.latent_channels, Grid2D(n, n));

    for (const auto& b : bind(c)) {
        const BlobSpec blob = layout(z.seed, b.text);
        const double weight = render_weight(blob, z.timestep, z.total_steps);
        const Grid2D fp = footprint(blob);

        Grid2D mass(n, n);
        for (const auto& s : stacks) {
            Grid2D span_mass(s.height(), s.width());
            for (std::size_t q = b.span.first; q <= b.span.last; ++q) {
                auto dst = span_mass.values();
                auto src = s.maps[q].values();
                for (std::size_t i = 0; i < dst.size(); ++i) {
                    dst[i] += src[i];
                }
            }
            const Grid2D up = resample(span_mass, n, n);
            auto dst = mass.values();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += up.values()[i];
            }
        }
        // Uniform attention over the p+2 rows gives a normalised mass of 1.
        const double norm = static_cast<double>(p + 2) / (static_cast<double>(b.span.size()) * static_cast<double>(stacks.size()));
        const Rgb colour = to_latent(b.colour);
        for (std::size_t i = 0; i < n * n; ++i) {
            const double intensity = weight * fp.values()[i] * mass.values()[i] * norm;
            for (std::size_t k = 0; k < colour_dims; ++k) {
                target[k].values()[i] += intensity * colour[k];
            }
            if (options_.latent_channels > colour_dims) {
                target[colour_dims].values()[i] += intensity;
            }
        }
    }

    LatentState next = z;
    const double rate = 1.0 / static_cast<double>(z.timestep);
    for (std::size_t ch = 0; ch < next.planes.size(); ++ch) {
        auto v = next.planes[ch].values();
        auto t = target[ch].values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] += (t[i] - v[i]) * rate;
        }
    }
    next.timestep = z.timestep - 1;
    return next;
}

Image ToyBackend::decode(const LatentState& z) const
{
    if (z.channels() < colour_dims) {
        throw Error(ErrorKind::backend, "latent has too few channels to decode");
    }
    Image img;
    for (std::size_t c = 0; c < colour_dims; ++c) {
        Grid2D up = resample(z.planes[c], options_.image_size, options_.image_size);
        for (auto& v : up.values()) {
            v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
        }
        up.set_role(GridRole::probability);
        img.channels.push_back(std::move(up));
    }
    return img;
}

Grid2D ToyBackend::segment(const Image& image, std::string_view referent) const
{
    const auto colour = referent_colour(referent);
    if (!colour) {
        throw Error(ErrorKind::backend, "unknown referent '" + std::string(referent) + "'");
    }
    if (image.channels.size() != 3) {
        throw Error(ErrorKind::backend, "segmenter expects an RGB image");
    }
    const double reference = colour_distance(options_.background, *colour);
    Grid2D logits(image.height(), image.width(), 0.0, GridRole::logit);
    auto out = logits.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Rgb px{image.channels[0].values()[i], image.channels[1].values()[i], image.channels[2].values()[i]};
        out[i] = options_.segment_scale * (options_.segment_offset - colour_distance(px, *colour) / reference);
    }
    return logits;
}

std::vector<double> ToyBackend::embed_image(const Image& image) const
{
    if (image.channels.size() != 3 || image.channels.front().empty()) {
        throw Error(ErrorKind::backend, "degenerate embedding: empty image");
    }
    const std::size_t k = palette_.entries.size();
    std::vector<double> hist(k + 1, 0.0);
    std::vector<double> weights(k + 1);
    const double inv_two_var = 1.0 / (2.0 * options_.histogram_sigma * options_.histogram_sigma);
    const std::size_t n = image.channels.front().size();
    for (std::size_t i = 0; i < n; ++i) {
        const Rgb px{image.channels[0].values()[i], image.channels[1].values()[i], image.channels[2].values()[i]};
        double total = 0.0;
        std::size_t nearest = k;
        double nearest_d = colour_distance(px, options_.background);
        for (std::size_t j = 0; j <= k; ++j) {
            const double d = j < k ? colour_distance(px, palette_.entries[j].rgb) : colour_distance(px, options_.background);
            if (d < nearest_d) {
                nearest_d = d;
                nearest = j;
            }
            weights[j] = std::exp(-d * d * inv_two_var);
            total += weights[j];
        }
        if (total <= 0.0) {
            hist[nearest] += 1.0;
            continue;
        }
        for (std::size_t j = 0; j <= k; ++j) {
            hist[j] += weights[j] / total;
        }
    }
    normalize(hist);
    return hist;
}

std::vector<double> ToyBackend::embed_text(std::string_view text) const
{
    const auto tp = tokenize(text);
    std::vector<double> bag(palette_.entries.size() + 1, 0.0);
    for (const auto& tok : tp.tokens) {
        if (auto idx = palette_.find(tok)) {
            bag[*idx] += 1.0;
        }
    }
    double n = 0.0;
    for (double v : bag) {
        n += v * v;
    }
    if (n <= 0.0) {
        throw Error(ErrorKind::backend, "degenerate embedding: no colour words in '" + std::string(text) + "'");
    }
    normalize(bag);
    return bag;
}

BlobSpec ToyBackend::layout(std::uint64_t seed, std::string_view concept_text) const
{
    SplitMix64 rng(mix64(seed ^ mix64(hash_text(concept_text))));
    BlobSpec b;
    b.present = rng.uniform() >= options_.dropout;
    b.weight = b.present ? rng.uniform(options_.present_weight_min, options_.present_weight_max)
                         : rng.uniform(options_.dropped_weight_min, options_.dropped_weight_max);
    b.onset_weight = b.present ? b.weight : rng.uniform(options_.dropped_onset_min, options_.dropped_onset_max);
    b.radius = rng.uniform(options_.radius_min, options_.radius_max);
    const double hi = static_cast<double>(options_.latent_size - 1) - b.radius;
    b.center_x = rng.uniform(b.radius, hi);
    b.center_y = rng.uniform(b.radius, hi);
    return b;
}

double ToyBackend::render_weight(const BlobSpec& blob, int timestep, int total_steps) const
{
    if (total_steps < 1) {
        return blob.weight;
    }
    const double f = std::clamp(static_cast<double>(timestep) / static_cast<double>(total_steps), 0.0, 1.0);
    return blob.weight + (blob.onset_weight - blob.weight) * std::pow(f, options_.neglect_exponent);
}

Grid2D ToyBackend::footprint(const BlobSpec& blob) const
{
    const std::size_t n = options_.latent_size;
    Grid2D fp(n, n, 0.0, GridRole::probability);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double dx = static_cast<double>(x) - blob.center_x;
            const double dy = static_cast<double>(y) - blob.center_y;
            fp.at(y, x) = std::clamp(blob.radius + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
        }
    }
    return fp;
}

Grid2D ToyBackend::footprint(const BlobSpec& blob, std::size_t height, std::size_t width) const
{
    return resample(footprint(blob), height, width);
}

} // namespace pico
