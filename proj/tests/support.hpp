#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "tractorc/geometry.hpp"

namespace testing_support {

using tractorc::Point3;
using tractorc::Streamline;
using tractorc::Tractogram;

inline Streamline line(const Point3& from, const Point3& to, std::size_t n) {
    Streamline s;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(n - 1);
        s.points.push_back(from + u * (to - from));
    }
    return s;
}

inline Streamline random_streamline(std::mt19937_64& rng, std::size_t n, double scale = 20.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Streamline s;
    Point3 p(g(rng) * scale, g(rng) * scale, g(rng) * scale);
    for (std::size_t i = 0; i < n; ++i) {
        s.points.push_back(p);
        p += Point3(2.0 + g(rng), g(rng), g(rng));
    }
    return s;
}

inline Tractogram random_tractogram(std::mt19937_64& rng, std::size_t count, std::size_t n) {
    Tractogram t;
    for (std::size_t i = 0; i < count; ++i) t.streamlines.push_back(random_streamline(rng, n));
    return t;
}

// Brute-force MDF straight from the definition.
inline double mdf_oracle(const Streamline& a, const Streamline& b) {
    const std::size_t n = a.points.size();
    double direct = 0.0, flipped = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        direct += std::sqrt((a.points[k] - b.points[k]).squaredNorm());
        flipped += std::sqrt((a.points[k] - b.points[n - 1 - k]).squaredNorm());
    }
    return std::min(direct, flipped) / static_cast<double>(n);
}

inline Eigen::Matrix3d rotation(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

}  // namespace testing_support
