#pragma once

// Image-side inputs: detected regions arrive as dense feature vectors plus a
// 5-entry normalized geometry vector derived from their bounding boxes.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace xgpt {

inline constexpr std::size_t kPositionDim = 5;
inline constexpr std::size_t kMaxRegions = 100;

// [x1/W, y1/H, x2/W, y2/H, area fraction] for a pixel-space box inside an
// image of size W x H.
inline std::array<double, kPositionDim> position_vector(double x1, double y1, double x2, double y2,
                                                        double image_w, double image_h) {
    if (!(image_w > 0.0) || !(image_h > 0.0)) {
        throw std::invalid_argument("position_vector: image size must be positive, got " +
                                    std::to_string(image_w) + "x" + std::to_string(image_h));
    }
    if (x2 < x1 || y2 < y1) {
        throw std::invalid_argument("position_vector: degenerate box (" + std::to_string(x1) + "," +
                                    std::to_string(y1) + "," + std::to_string(x2) + "," +
                                    std::to_string(y2) + ")");
    }
    return {x1 / image_w, y1 / image_h, x2 / image_w, y2 / image_h,
            ((x2 - x1) * (y2 - y1)) / (image_w * image_h)};
}

// A set of region feature rows plus their geometry vectors, row-aligned.
struct RegionSet {
    std::size_t d_feat = 0;
    std::vector<float> features;   // n * d_feat, row-major
    std::vector<float> positions;  // n * kPositionDim, row-major

    std::size_t count() const { return d_feat == 0 ? 0 : features.size() / d_feat; }

    void validate() const {
        const std::size_t n = count();
        if (n == 0) throw std::invalid_argument("RegionSet: needs at least one region");
        if (n > kMaxRegions) {
            throw std::invalid_argument("RegionSet: " + std::to_string(n) + " regions exceed cap of " +
                                        std::to_string(kMaxRegions));
        }
        if (features.size() != n * d_feat || positions.size() != n * kPositionDim) {
            throw std::invalid_argument("RegionSet: feature/position row counts disagree");
        }
        for (std::size_t r = 0; r < n; ++r) {
            const float* p = positions.data() + r * kPositionDim;
            for (std::size_t k = 0; k < kPositionDim; ++k) {
                if (!(p[k] >= 0.0f) || !(p[k] <= 1.0f)) {
                    throw std::invalid_argument("RegionSet: position entry " + std::to_string(p[k]) +
                                                " of region " + std::to_string(r) +
                                                " outside [0, 1]");
                }
            }
            // Geometry consistency: stored area fraction must match the box.
            const float area = (p[2] - p[0]) * (p[3] - p[1]);
            if (std::fabs(static_cast<double>(area) - static_cast<double>(p[4])) > 1e-9) {
                throw std::invalid_argument("RegionSet: area of region " + std::to_string(r) +
                                            " inconsistent with its box");
            }
        }
    }
};

} // namespace xgpt
