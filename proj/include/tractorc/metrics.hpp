#pragma once

// Evaluation measures. The formulas here are this library's conventions:
//   abd    1/2 [mean_i min_j d(a_i, b_j) + mean_j min_i d(a_i, b_j)], d = MDF
//   wdice  sum_{v in A and B} (w_a + w_b) / (sum_A w_a + sum_B w_b), w = visits / total visits
//   alpha  mean over clusters of mean member-to-medoid MDF
//   wmpg   mean over subjects of (#clusters with >= min_count members) / K
//   ari    adjusted Rand index over streamlines labelled in both inputs

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tractorc/geometry.hpp"

namespace tractorc {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

double abd(const Tractogram& a, const Tractogram& b);

struct VoxelGrid {
    Point3 origin = Point3::Zero();
    double spacing = 1.0;
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::vector<double> counts;  // x fastest

    std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
    double total() const;
};

inline constexpr double kDefaultVoxelSpacing = 2.0;

/// Streamline visitation counts: each streamline adds 1 to every voxel its
/// polyline passes through, once per voxel. Segments are supersampled at a
/// quarter of the spacing. Bounds default to the tractogram's bounding box.
VoxelGrid voxelize(const Tractogram& t, double spacing);
VoxelGrid voxelize(const Tractogram& t, double spacing, const BoundingBox& bounds);

double wdice(const Tractogram& a, const Tractogram& b, double spacing = kDefaultVoxelSpacing);
/// Same measure from two count maps on one grid.
double wdice(const VoxelGrid& a, const VoxelGrid& b);

/// Members labelled -1 are ignored.
double alpha_compactness(const Tractogram& t, std::span<const int> labels);

inline constexpr std::size_t kDefaultWmpgMinCount = 10;

/// Fraction in [0, 1].
double wmpg(std::span<const std::vector<int>> per_subject_labels, std::size_t clusters, std::size_t min_count);

/// Streamlines labelled -1 in either input are excluded. Two partitions that
/// are both trivial (one cluster, or all singletons) score 1.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

double rejection_rate(std::span<const int> labels);

}  // namespace tractorc
