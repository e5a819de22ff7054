#pragma once

// Streamline / tractogram data model, resampling and the MDF streamline distance.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tractorc {

using Point3 = Eigen::Vector3d;

inline constexpr std::size_t kDefaultPointCount = 14;

/// Raised when an input cannot be turned into usable geometry (zero-length
/// streamlines, mismatched point counts, non-finite coordinates).
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Streamline {
    std::vector<Point3> points;

    std::size_t size() const { return points.size(); }
    double arc_length() const;
    Streamline reversed() const;
};

struct Tractogram {
    std::vector<Streamline> streamlines;
    std::optional<std::vector<int>> labels;  // -1 = unassigned / rejected

    std::size_t size() const { return streamlines.size(); }
    bool empty() const { return streamlines.empty(); }
    std::size_t point_count() const;

    /// Throws if the label array does not match the streamline count.
    void validate() const;
};

/// Dense symmetric N x N matrix of MDF distances (mm), row-major.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
    std::span<const double> values() const { return values_; }

private:
    std::size_t n_ = 0;
    std::vector<double> values_;
};

/// 3x4 affine: x' = linear * x + translation.
struct Affine {
    Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static Affine identity() { return {}; }
    static Affine from_matrix(const Eigen::Matrix<double, 3, 4>& m);
    Eigen::Matrix<double, 3, 4> matrix() const;
    Point3 operator()(const Point3& x) const { return linear * x + translation; }
    /// (this ∘ other)(x) = this(other(x))
    Affine compose(const Affine& other) const;
};

/// Linear resampling at uniform arc-length fractions. Endpoints are copied
/// bit-for-bit.
Streamline resample_streamline(const Streamline& s, std::size_t n);
Tractogram resample_tractogram(const Tractogram& t, std::size_t n);

/// min(direct, flipped) mean pointwise distance. Not a metric: the triangle
/// inequality can fail.
double mdf_distance(const Streamline& a, const Streamline& b);

/// Entry-wise mdf_distance. Row blocks may be computed on several threads;
/// entries are independent so results do not depend on the thread count.
DistanceMatrix pairwise_mdf(const Tractogram& t);

Tractogram apply_affine(const Tractogram& t, const Affine& m);

struct BoundingBox {
    Point3 min;
    Point3 max;
    double diagonal() const { return (max - min).norm(); }
    Point3 center() const { return 0.5 * (min + max); }
};

BoundingBox bounding_box(const Tractogram& t);

/// Row-major (total points) x 3 coordinate buffer, streamlines concatenated.
std::vector<double> flatten_points(const Tractogram& t);

/// Inverse of flatten_points for tractograms whose streamlines all have
/// `points_per_streamline` points.
Tractogram unflatten_points(std::span<const double> coords, std::size_t points_per_streamline,
                            std::optional<std::vector<int>> labels = std::nullopt);

/// Worker count used by internally parallel routines (pairwise_mdf, set
/// distances). 1 = fully sequential.
void set_thread_count(std::size_t n);
std::size_t thread_count();

}  // namespace tractorc
