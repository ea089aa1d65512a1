#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pico {

enum class GridRole : std::uint32_t {
    logit = 0,
    probability = 1,
    attention = 2,
};

/// Dense row-major H x W map of doubles. Carrier for segmentation logits,
/// probability masks and single-token attention maps.
///
/// Coordinates follow image convention: x is the column, y is the row,
/// origin at the top-left cell.
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(std::size_t height, std::size_t width, double fill = 0.0, GridRole role = GridRole::logit);
    Grid2D(std::size_t height, std::size_t width, std::vector<double> values, GridRole role = GridRole::logit);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    GridRole role() const noexcept { return role_; }
    void set_role(GridRole role) noexcept { role_ = role; }

    double& at(std::size_t y, std::size_t x) { return values_[y * width_ + x]; }
    double at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    bool same_shape(const Grid2D& other) const noexcept
    {
        return height_ == other.height_ && width_ == other.width_;
    }

    double min() const;
    double max() const;
    double sum() const;

    friend bool operator==(const Grid2D&, const Grid2D&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> values_;
    GridRole role_ = GridRole::logit;
};

struct Dispersion {
    double sigma_x = 0.0;
    double sigma_y = 0.0;
    double sigma = 0.0;
};

/// Nearest-rank percentile: the element at 1-based rank ceil(q/100 * n) of
/// the ascending order. q must lie in (0, 100].
double percentile(std::span<const double> values, double q);
double percentile(const Grid2D& g, double q);

/// Population standard deviation of the (x, y) coordinates of every cell
/// strictly above `threshold`, and their product. Fewer than two such cells
/// yield all zeros.
Dispersion coord_dispersion(const Grid2D& g, double threshold);

/// Bilinear resampling with half-pixel centre alignment (edges clamped).
Grid2D resample(const Grid2D& g, std::size_t target_h, std::size_t target_w);

/// 2x2 (or k x k) box averaging; dimensions must be divisible by `factor`.
Grid2D downsample_mean(const Grid2D& g, std::size_t factor);

Grid2D map(const Grid2D& g, const std::function<double(double)>& f);
Grid2D zip(const Grid2D& a, const Grid2D& b, const std::function<double(double, double)>& f);

double sigmoid(double v) noexcept;
Grid2D sigmoid(const Grid2D& g);
Grid2D scale(const Grid2D& g, double factor);
Grid2D multiply(const Grid2D& a, const Grid2D& b);
/// 1 - g, cellwise. Result carries the probability role.
Grid2D complement(const Grid2D& g);

bool all_finite(const Grid2D& g) noexcept;

} // namespace pico
