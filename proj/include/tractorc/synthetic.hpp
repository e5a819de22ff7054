#pragma once

// Synthetic ground-truth tractograms and random spatial deformations (a
// random affine G composed with a smooth TPS warp Phi).

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "tractorc/config.hpp"
#include "tractorc/geometry.hpp"
#include "tractorc/tps.hpp"

namespace tractorc {

struct SyntheticSpec {
    std::size_t bundle_count = 4;
    std::size_t streamlines_per_bundle = 100;
    std::vector<std::vector<Point3>> prototype_control_points;  // one skeleton per bundle
    double jitter_sigma = 1.5;                                  // mm
    std::size_t n_points = kDefaultPointCount;
    bool random_flips = true;  // store half the streamlines end-to-start
    std::uint64_t seed = 0;

    /// Builds `bundle_count` curved, non-coplanar skeletons on a lattice with
    /// the given spacing, plus the remaining fields from the config.
    static SyntheticSpec from_config(const Config& cfg, std::uint64_t seed);
};

std::vector<std::vector<Point3>> make_prototypes(std::size_t bundle_count, double spacing, double length,
                                                 std::uint64_t seed);

struct SyntheticData {
    Tractogram tractogram;  // labels set to ground truth
    std::vector<int> labels;
};

/// Streamlines are prototype + smooth offset curve (a low-frequency sinusoid
/// mixture scaled by jitter_sigma), resampled to n_points. Depends only on the spec argument.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct DeformationSpec {
    double affine_scale_range = 0.0;   // per-axis scale in [1 - r, 1 + r]
    double rotation_range_deg = 0.0;   // per-axis Euler angle in [-r, r]
    double translation_range = 0.0;    // per-axis shift in [-r, r] mm
    double nonlinear_amplitude = 0.0;  // std-dev of grid displacements, mm
    std::size_t nonlinear_grid = 3;    // control points per axis
    BoundingBox domain{Point3::Zero(), Point3::Zero()};  // rotation centre and grid extent
    std::uint64_t seed = 0;

    static DeformationSpec from_config(const Config& cfg, const BoundingBox& domain, std::uint64_t seed);
};

/// x -> G(Phi(x))
struct Deformation {
    Affine affine;       // G
    TpsTransform warp;   // Phi; empty control set = identity

    Point3 operator()(const Point3& x) const;
    Tractogram apply(const Tractogram& t) const;
    PointMatrix apply(const PointMatrix& pts) const;
};

Deformation sample_deformation(const DeformationSpec& spec);

/// Seed derivation shared by every stochastic component: a splitmix64 hash of
/// (seed, stream, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace tractorc
