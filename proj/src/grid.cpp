#include "pico/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pico/error.hpp"

namespace pico {

Grid2D::Grid2D(std::size_t height, std::size_t width, double fill, GridRole role)
    : height_(height), width_(width), values_(height * width, fill), role_(role)
{
}

Grid2D::Grid2D(std::size_t height, std::size_t width, std::vector<double> values, GridRole role)
    : height_(height), width_(width), values_(std::move(values)), role_(role)
{
    if (values_.size() != height_ * width_) {
        throw invalid_argument("grid value count does not match its shape");
    }
}

double Grid2D::min() const
{
    if (values_.empty()) {
        throw invalid_argument("empty input");
    }
    return *std::min_element(values_.begin(), values_.end());
}

double Grid2D::max() const
{
    if (values_.empty()) {
        throw invalid_argument("empty input");
    }
    return *std::max_element(values_.begin(), values_.end());
}

double Grid2D::sum() const
{
    return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double percentile(std::span<const double> values, double q)
{
    if (values.empty()) {
        throw invalid_argument("empty input");
    }
    if (!(q > 0.0 && q <= 100.0)) {
        throw invalid_argument("percentile must lie in (0, 100]");
    }
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);

    std::vector<double> scratch(values.begin(), values.end());
    auto nth = scratch.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(scratch.begin(), nth, scratch.end());
    return *nth;
}

double percentile(const Grid2D& g, double q)
{
    return percentile(g.values(), q);
}

Dispersion coord_dispersion(const Grid2D& g, double threshold)
{
    // Two-pass population moments; coordinates are small integers so the
    // sums stay exact in double.
    std::size_t count = 0;
    double sum_x = 0.0;
    double sum_y = 0.0;
    for (std::size_t y = 0; y < g.height(); ++y) {
        for (std::size_t x = 0; x < g.width(); ++x) {
            if (g.at(y, x) > threshold) {
                ++count;
                sum_x += static_cast<double>(x);
                sum_y += static_cast<double>(y);
            }
        }
    }
    if (count < 2) {
        return {};
    }
    const double n = static_cast<double>(count);
    const double mean_x = sum_x / n;
    const double mean_y = sum_y / n;
    double ss_x = 0.0;
    double ss_y = 0.0;
    for (std::size_t y = 0; y < g.height(); ++y) {
        for (std::size_t x = 0; x < g.width(); ++x) {
            if (g.at(y, x) > threshold) {
                const double dx = static_cast<double>(x) - mean_x;
                const double dy = static_cast<double>(y) - mean_y;
                ss_x += dx * dx;
                ss_y += dy * dy;
            }
        }
    }
    Dispersion d;
    d.sigma_x = std::sqrt(ss_x / n);
    d.sigma_y = std::sqrt(ss_y / n);
    d.sigma = d.sigma_x * d.sigma_y;
    return d;
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst)
{
    std::vector<Tap> taps(dst);
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i) {
        double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, src - 1);
        taps[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return taps;
}

} // namespace

Grid2D resample(const Grid2D& g, std::size_t target_h, std::size_t target_w)
{
    if (target_h == 0 || target_w == 0) {
        throw invalid_argument("resample target dimensions must be positive");
    }
    if (g.empty()) {
        throw invalid_argument("empty input");
    }
    if (target_h == g.height() && target_w == g.width()) {
        return g;
    }
    const auto rows = bilinear_taps(g.height(), target_h);
    const auto cols = bilinear_taps(g.width(), target_w);
    Grid2D out(target_h, target_w, 0.0, g.role());
    for (std::size_t y = 0; y < target_h; ++y) {
        const auto& ry = rows[y];
        for (std::size_t x = 0; x < target_w; ++x) {
            const auto& cx = cols[x];
            const double top = g.at(ry.lo, cx.lo) + (g.at(ry.lo, cx.hi) - g.at(ry.lo, cx.lo)) * cx.frac;
            const double bot = g.at(ry.hi, cx.lo) + (g.at(ry.hi, cx.hi) - g.at(ry.hi, cx.lo)) * cx.frac;
            // Equal corners must reproduce the value exactly so constant
            // grids stay constant.
            out.at(y, x) = top == bot ? top : top + (bot - top) * ry.frac;
        }
    }
    return out;
}

Grid2D downsample_mean(const Grid2D& g, std::size_t factor)
{
    if (factor == 0 || g.height() % factor != 0 || g.width() % factor != 0) {
        throw invalid_argument("downsample factor must divide the grid dimensions");
    }
    const std::size_t h = g.height() / factor;
    const std::size_t w = g.width() / factor;
    const double norm = 1.0 / static_cast<double>(factor * factor);
    Grid2D out(h, w, 0.0, g.role());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < factor; ++dy) {
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    acc += g.at(y * factor + dy, x * factor + dx);
                }
            }
            out.at(y, x) = acc * norm;
        }
    }
    return out;
}

Grid2D map(const Grid2D& g, const std::function<double(double)>& f)
{
    Grid2D out = g;
    for (auto& v : out.values()) {
        v = f(v);
    }
    return out;
}

Grid2D zip(const Grid2D& a, const Grid2D& b, const std::function<double(double, double)>& f)
{
    if (!a.same_shape(b)) {
        throw invalid_argument("grid shape mismatch");
    }
    Grid2D out = a;
    auto dst = out.values();
    auto rhs = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = f(dst[i], rhs[i]);
    }
    return out;
}

double sigmoid(double v) noexcept
{
    // Split by sign to avoid overflow; clamp so saturated inputs stay in the
    // open interval.
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    double s = 0.0;
    if (v >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-v));
    } else {
        const double e = std::exp(v);
        s = e / (1.0 + e);
    }
    return std::clamp(s, lo, hi);
}

Grid2D sigmoid(const Grid2D& g)
{
    Grid2D out = map(g, [](double v) { return sigmoid(v); });
    out.set_role(GridRole::probability);
    return out;
}

Grid2D scale(const Grid2D& g, double factor)
{
    return map(g, [factor](double v) { return v * factor; });
}

Grid2D multiply(const Grid2D& a, const Grid2D& b)
{
    return zip(a, b, [](double x, double y) { return x * y; });
}

Grid2D complement(const Grid2D& g)
{
    Grid2D out = map(g, [](double v) { return 1.0 - v; });
    out.set_role(GridRole::probability);
    return out;
}

bool all_finite(const Grid2D& g) noexcept
{
    return std::all_of(g.values().begin(), g.values().end(), [](double v) { return std::isfinite(v); });
}

} // namespace pico
