#pragma once

// Thin-plate spline R(x) = A [x;1] + sum_a U(|x - c_a|) W_a with the radial
// kernel U(r) = r^2 ln r, U(0) = 0.

#include <cmath>
#include <cstddef>
#include <span>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tractorc/autodiff.hpp"
#include "tractorc/geometry.hpp"

namespace tractorc {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

class TpsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

struct TpsTransform {
    Affine affine;
    PointMatrix control;  // A x 3 source control points
    PointMatrix warp;     // A x 3 coefficients W

    static TpsTransform identity();
    Point3 operator()(const Point3& x) const;
    PointMatrix apply(const PointMatrix& points) const;
};

/// Solves [[K + lambda I, P], [P^T, 0]] [W; V] = [target; 0]. With lambda = 0
/// the fitted map interpolates the targets exactly. A singular system is a
/// TpsError.
TpsTransform fit_tps(const PointMatrix& source, const PointMatrix& target, double lambda);

Tractogram apply_tps(const TpsTransform& t, const Tractogram& tractogram);

std::string encode_tps(const TpsTransform& t);
TpsTransform parse_tps(std::string_view text);
void write_tps(const TpsTransform& t, const std::filesystem::path& path);
TpsTransform read_tps(const std::filesystem::path& path);

PointMatrix to_point_matrix(std::span<const double> row_major_xyz);
PointMatrix to_point_matrix(const Tractogram& t);

namespace ad {

/// Differentiable fit-and-warp: fits a TPS from `source` to `target`
/// keypoints (both [A,3]) and maps `points` ([M,3]). Gradients flow to all
/// three inputs through the closed-form solve.
Tensor tps_warp(const Tensor& source, const Tensor& target, const Tensor& points, double lambda);

}  // namespace ad

}  // namespace tractorc
