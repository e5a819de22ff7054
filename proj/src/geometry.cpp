#include "tractorc/geometry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "tractorc/parallel.hpp"

namespace tractorc {

namespace {

std::atomic<std::size_t> g_threads{1};

bool finite(const Point3& p) { return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()); }

}  // namespace

void set_thread_count(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t thread_count() { return g_threads; }

double Streamline::arc_length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += (points[i] - points[i - 1]).norm();
    return total;
}

Streamline Streamline::reversed() const {
    Streamline r;
    r.points.assign(points.rbegin(), points.rend());
    return r;
}

std::size_t Tractogram::point_count() const {
    std::size_t n = 0;
    for (const auto& s : streamlines) n += s.size();
    return n;
}

void Tractogram::validate() const {
    if (labels && labels->size() != streamlines.size()) {
        throw GeometryError("label count " + std::to_string(labels->size()) + " does not match streamline count " +
                            std::to_string(streamlines.size()));
    }
}

Affine Affine::from_matrix(const Eigen::Matrix<double, 3, 4>& m) {
    Affine a;
    a.linear = m.leftCols<3>();
    a.translation = m.col(3);
    return a;
}

Eigen::Matrix<double, 3, 4> Affine::matrix() const {
    Eigen::Matrix<double, 3, 4> m;
    m.leftCols<3>() = linear;
    m.col(3) = translation;
    return m;
}

Affine Affine::compose(const Affine& other) const {
    Affine r;
    r.linear = linear * other.linear;
    r.translation = linear * other.translation + translation;
    return r;
}

Streamline resample_streamline(const Streamline& s, std::size_t n) {
    if (s.size() < 2) throw GeometryError("streamline needs at least 2 points, got " + std::to_string(s.size()));
    if (n < 2) throw GeometryError("resampling needs at least 2 output points");
    for (const auto& p : s.points) {
        if (!finite(p)) throw GeometryError("streamline has non-finite coordinates");
    }

    // cumulative arc length at every input vertex
    std::vector<double> cumulative(s.size(), 0.0);
    for (std::size_t i = 1; i < s.size(); ++i) {
        cumulative[i] = cumulative[i - 1] + (s.points[i] - s.points[i - 1]).norm();
    }
    const double total = cumulative.back();
    if (!(total > 0.0)) throw GeometryError("degenerate streamline: total arc length is zero");

    Streamline out;
    out.points.resize(n);
    out.points.front() = s.points.front();
    out.points.back() = s.points.back();
    std::size_t seg = 1;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double target = total * static_cast<double>(k) / static_cast<double>(n - 1);
        while (seg + 1 < s.size() && cumulative[seg] < target) ++seg;
        const double seg_len = cumulative[seg] - cumulative[seg - 1];
        const double t = seg_len > 0.0 ? (target - cumulative[seg - 1]) / seg_len : 0.0;
        out.points[k] = s.points[seg - 1] + t * (s.points[seg] - s.points[seg - 1]);
    }
    return out;
}

Tractogram resample_tractogram(const Tractogram& t, std::size_t n) {
    Tractogram out;
    out.labels = t.labels;
    out.streamlines.reserve(t.size());
    for (const auto& s : t.streamlines) out.streamlines.push_back(resample_streamline(s, n));
    return out;
}

double mdf_distance(const Streamline& a, const Streamline& b) {
    if (a.size() != b.size()) {
        throw GeometryError("MDF needs equal point counts, got " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()));
    }
    if (a.size() == 0) throw GeometryError("MDF of empty streamlines");
    const std::size_t n = a.size();
    double direct = 0.0;
    double flipped = 0.0;
    for (std::size_t k = 0; k < n; ++k) direct += (a.points[k] - b.points[k]).norm();
    // flipped terms summed in mirrored pairs, which makes the result exactly symmetric in (a, b)
    for (std::size_t k = 0; k < n / 2; ++k) {
        flipped += (a.points[k] - b.points[n - 1 - k]).norm() + (a.points[n - 1 - k] - b.points[k]).norm();
    }
    if (n % 2 == 1) flipped += (a.points[n / 2] - b.points[n / 2]).norm();
    return std::min(direct, flipped) / static_cast<double>(n);
}

DistanceMatrix pairwise_mdf(const Tractogram& t) {
    if (t.empty()) throw GeometryError("pairwise MDF of an empty tractogram");
    const std::size_t n = t.size();
    DistanceMatrix d(n);
    detail::parallel_blocks(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                // computed in a fixed argument order so d(i,j) and d(j,i) are the same bits
                d(i, j) = i == j ? 0.0 : (i < j ? mdf_distance(t.streamlines[i], t.streamlines[j])
                                                : mdf_distance(t.streamlines[j], t.streamlines[i]));
            }
        }
    });
    return d;
}

Tractogram apply_affine(const Tractogram& t, const Affine& m) {
    if (!m.linear.allFinite() || !m.translation.allFinite()) throw GeometryError("affine matrix is not finite");
    Tractogram out = t;
    for (auto& s : out.streamlines) {
        for (auto& p : s.points) p = m(p);
    }
    return out;
}

BoundingBox bounding_box(const Tractogram& t) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    BoundingBox box{Point3::Constant(inf), Point3::Constant(-inf)};
    for (const auto& s : t.streamlines) {
        for (const auto& p : s.points) {
            box.min = box.min.cwiseMin(p);
            box.max = box.max.cwiseMax(p);
        }
    }
    if (t.point_count() == 0) box = {Point3::Zero(), Point3::Zero()};
    return box;
}

std::vector<double> flatten_points(const Tractogram& t) {
    std::vector<double> out;
    out.reserve(3 * t.point_count());
    for (const auto& s : t.streamlines) {
        for (const auto& p : s.points) {
            out.push_back(p.x());
            out.push_back(p.y());
            out.push_back(p.z());
        }
    }
    return out;
}

Tractogram unflatten_points(std::span<const double> coords, std::size_t points_per_streamline,
                            std::optional<std::vector<int>> labels) {
    if (points_per_streamline == 0 || coords.size() % (3 * points_per_streamline) != 0) {
        throw GeometryError("coordinate buffer is not a whole number of streamlines");
    }
    Tractogram t;
    const std::size_t n = coords.size() / (3 * points_per_streamline);
    t.streamlines.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& pts = t.streamlines[i].points;
        pts.resize(points_per_streamline);
        for (std::size_t k = 0; k < points_per_streamline; ++k) {
            const std::size_t o = 3 * (i * points_per_streamline + k);
            pts[k] = Point3(coords[o], coords[o + 1], coords[o + 2]);
        }
    }
    t.labels = std::move(labels);
    t.validate();
    return t;
}

}  // namespace tractorc
