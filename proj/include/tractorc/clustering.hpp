#pragma once

// Deep embedded clustering over streamline embeddings: k-means++ / Lloyd
// centroid init, Student's-t soft assignment, sharpened target distribution,
// KL refinement and confidence-thresholded hard labels.

#include <cstdint>
#include <span>
#include <vector>

#include "tractorc/autodiff.hpp"

namespace tractorc {

/// Row-major dense matrix used for embeddings, centroids and assignments.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, std::vector<double> v);
    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * cols, cols); }

    bool operator==(const DenseMatrix&) const = default;
};

struct KMeansResult {
    DenseMatrix centroids;
    std::vector<int> assignment;
    std::size_t iterations = 0;
    double cost = 0.0;  // sum of squared distances to the assigned centroid
};

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// unchanged or `max_iterations` is hit. Deterministic in `seed`.
KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 300);

/// Centroid initialization for the clustering branch (the centroids of kmeans).
DenseMatrix kmeans_init(const DenseMatrix& z, std::size_t k, std::uint64_t seed);

/// q_ij = (1 + |z_i - mu_j|^2)^-1 / sum_j' (1 + |z_i - mu_j'|^2)^-1
DenseMatrix soft_assign(const DenseMatrix& z, const DenseMatrix& mu);
/// Same, differentiable in z and mu: softmax_j(-log(1 + |z_i - mu_j|^2)).
ad::Tensor soft_assign(const ad::Tensor& z, const ad::Tensor& mu);

struct TargetDistribution {
    DenseMatrix p;
    std::size_t dead_clusters = 0;  // clusters whose total mass hit the floor
};

inline constexpr double kClusterMassFloor = 1e-12;

/// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), f_j = sum_i q_ij floored
/// at kClusterMassFloor.
TargetDistribution target_distribution(const DenseMatrix& q);

/// sum_ij p_ij log(p_ij / q_ij), with 0 log 0 = 0. q must be strictly positive.
double kl_loss(const DenseMatrix& p, const DenseMatrix& q);
/// Differentiable in q; p is a constant.
ad::Tensor kl_loss(const DenseMatrix& p, const ad::Tensor& q);

/// argmax_j q_ij (ties to the lowest index) when max_j q_ij >= thr, else -1.
std::vector<int> hard_assign(const DenseMatrix& q, double thr);

struct ClusterSummary {
    std::size_t clusters = 0;
    std::size_t rejected = 0;
    std::vector<std::size_t> sizes;
};

ClusterSummary summarize_labels(std::span<const int> labels, std::size_t clusters);

}  // namespace tractorc
