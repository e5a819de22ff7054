#pragma once

// End-to-end gradient-check battery: every training loss evaluated through
// the full network (EdgeConv stack, keypoint head, centroids) on a small
// synthetic instance, reverse mode against central differences.

#include <cstdint>
#include <string>
#include <vector>

#include "tractorc/autodiff.hpp"

namespace tractorc {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckCase {
    std::string loss;
    std::string worst_parameter;
    ad::GradCheckResult result;
    std::size_t coordinates = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double tolerance = kGradCheckTolerance;
    std::size_t streamlines = 0;
    std::size_t keypoints = 0;
    std::size_t clusters = 0;

    bool passed() const;
    /// {"tolerance":..,"passed":..,"cases":[{"loss":..,"max_relative_error":..,...}]}
    std::string to_json() const;
};

struct GradCheckOptions {
    std::uint64_t seed = 0;
    std::size_t streamlines = 8;  // per tractogram of the pair
    std::size_t keypoints = 6;
    std::size_t clusters = 2;
    // narrow network so every coordinate can be differenced quickly
    std::vector<int> embed_widths{8, 8, 8};
    int head_hidden = 8;
    double eps = 3e-6;
    double floor = 1e-3;
};

/// Losses: equivariance, diversity, metric_alignment, registration, kl,
/// pretrain_total, joint_total.
GradCheckReport run_gradcheck_battery(const GradCheckOptions& opts = {});

}  // namespace tractorc
