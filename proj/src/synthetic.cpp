#include "tractorc/synthetic.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

namespace tractorc {

namespace {

constexpr std::size_t kDenseSamples = 64;

Point3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Point3 v(n(rng), n(rng), n(rng));
    return v / v.norm();
}

// Position along a polyline at arc-length fraction t in [0, 1].
Point3 polyline_at(const std::vector<Point3>& pts, const std::vector<double>& cumulative, double t) {
    const double target = t * cumulative.back();
    std::size_t seg = 1;
    while (seg + 1 < pts.size() && cumulative[seg] < target) ++seg;
    const double len = cumulative[seg] - cumulative[seg - 1];
    const double u = len > 0.0 ? (target - cumulative[seg - 1]) / len : 0.0;
    return pts[seg - 1] + u * (pts[seg] - pts[seg - 1]);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ stream) ^ index);
}

std::vector<std::vector<Point3>> make_prototypes(std::size_t bundle_count, double spacing, double length,
                                                 std::uint64_t seed) {
    // lattice corners first so small bundle counts are spread in all three axes
    static const Point3 lattice[] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
    std::mt19937_64 rng(derive_seed(seed, 0x70726f74));
    std::vector<Point3> centers;
    for (std::size_t b = 0; b < bundle_count; ++b) {
        const Point3 cell = lattice[b % 8] + Point3(2.0 * static_cast<double>(b / 8), 0, 0);
        centers.push_back(spacing * cell);
    }
    Point3 mean = Point3::Zero();
    for (const auto& c : centers) mean += c;
    mean /= static_cast<double>(bundle_count);

    std::vector<std::vector<Point3>> out;
    for (std::size_t b = 0; b < bundle_count; ++b) {
        const Point3 u = random_unit(rng);
        Point3 v = random_unit(rng);
        v = (v - v.dot(u) * u).normalized();
        const Point3 w = u.cross(v);
        std::vector<Point3> skeleton;
        constexpr int kControl = 9;
        for (int k = 0; k < kControl; ++k) {
            const double t = static_cast<double>(k) / (kControl - 1);
            skeleton.push_back(centers[b] - mean + (t - 0.5) * length * u +
                               0.25 * length * std::sin(std::numbers::pi * t) * v +
                               0.4 * length * (t - 0.5) * (t - 0.5) * w);
        }
        out.push_back(std::move(skeleton));
    }
    return out;
}

SyntheticSpec SyntheticSpec::from_config(const Config& cfg, std::uint64_t seed) {
    SyntheticSpec s;
    s.bundle_count = static_cast<std::size_t>(cfg.synth_bundles);
    s.streamlines_per_bundle = static_cast<std::size_t>(cfg.synth_streamlines_per_bundle);
    s.jitter_sigma = cfg.synth_jitter;
    s.n_points = static_cast<std::size_t>(cfg.n_points);
    s.seed = seed;
    // prototypes depend on the config seed only, so subjects generated with
    // different seeds share the same bundle anatomy
    s.prototype_control_points = make_prototypes(s.bundle_count, cfg.synth_spacing, cfg.synth_length, cfg.seed);
    return s;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.bundle_count < 1 || spec.prototype_control_points.size() != spec.bundle_count) {
        throw GeometryError("synthetic spec needs one prototype per bundle");
    }
    if (spec.jitter_sigma < 0.0) throw GeometryError("jitter_sigma must be nonnegative");
    std::mt19937_64 rng(derive_seed(spec.seed, 0x73796e74));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);

    SyntheticData data;
    for (std::size_t b = 0; b < spec.bundle_count; ++b) {
        const auto& skel = spec.prototype_control_points[b];
        if (skel.size() < 2) throw GeometryError("prototype needs at least 2 control points");
        std::vector<double> cumulative(skel.size(), 0.0);
        for (std::size_t i = 1; i < skel.size(); ++i) cumulative[i] = cumulative[i - 1] + (skel[i] - skel[i - 1]).norm();

        for (std::size_t n = 0; n < spec.streamlines_per_bundle; ++n) {
            // smooth offset curve: constant shift + half and full sine periods
            Point3 g[3];
            for (auto& gi : g) gi = Point3(normal(rng), normal(rng), normal(rng));
            const bool flip = spec.random_flips && coin(rng);
            Streamline dense;
            dense.points.reserve(kDenseSamples);
            for (std::size_t k = 0; k < kDenseSamples; ++k) {
                const double t = static_cast<double>(k) / (kDenseSamples - 1);
                const Point3 offset = spec.jitter_sigma * (g[0] + g[1] * std::sin(std::numbers::pi * t) +
                                                          0.5 * g[2] * std::sin(2.0 * std::numbers::pi * t));
                dense.points.push_back(polyline_at(skel, cumulative, t) + offset);
            }
            Streamline s = resample_streamline(dense, spec.n_points);
            if (flip) s = s.reversed();
            data.tractogram.streamlines.push_back(std::move(s));
            data.labels.push_back(static_cast<int>(b));
        }
    }
    data.tractogram.labels = data.labels;
    return data;
}

DeformationSpec DeformationSpec::from_config(const Config& cfg, const BoundingBox& domain, std::uint64_t seed) {
    DeformationSpec s;
    s.affine_scale_range = cfg.aug_scale;
    s.rotation_range_deg = cfg.aug_rotation_deg;
    s.translation_range = cfg.aug_translation;
    s.nonlinear_amplitude = cfg.aug_nonlinear_amplitude;
    s.nonlinear_grid = static_cast<std::size_t>(cfg.aug_grid);
    s.domain = domain;
    s.seed = seed;
    return s;
}

Point3 Deformation::operator()(const Point3& x) const { return affine(warp(x)); }

Tractogram Deformation::apply(const Tractogram& t) const {
    Tractogram out = t;
    for (auto& s : out.streamlines) {
        for (auto& p : s.points) p = (*this)(p);
    }
    return out;
}

PointMatrix Deformation::apply(const PointMatrix& pts) const {
    PointMatrix out(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out.row(i) = (*this)(pts.row(i).transpose()).transpose();
    return out;
}

Deformation sample_deformation(const DeformationSpec& spec) {
    if (spec.affine_scale_range < 0 || spec.rotation_range_deg < 0 || spec.translation_range < 0 ||
        spec.nonlinear_amplitude < 0) {
        throw GeometryError("deformation ranges must be nonnegative");
    }
    std::mt19937_64 rng(derive_seed(spec.seed, 0x6465666));
    auto uniform = [&rng](double r) { return r > 0.0 ? std::uniform_real_distribution<double>(-r, r)(rng) : 0.0; };

    Deformation d;
    const double deg = std::numbers::pi / 180.0;
    const double ax = uniform(spec.rotation_range_deg) * deg;
    const double ay = uniform(spec.rotation_range_deg) * deg;
    const double az = uniform(spec.rotation_range_deg) * deg;
    const Eigen::Matrix3d rot = (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
                                 Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
                                    .toRotationMatrix();
    Eigen::Vector3d scale;
    for (int i = 0; i < 3; ++i) scale[i] = 1.0 + uniform(spec.affine_scale_range);
    Eigen::Vector3d shift;
    for (int i = 0; i < 3; ++i) shift[i] = uniform(spec.translation_range);

    const Point3 c = spec.domain.center();
    d.affine.linear = rot * scale.asDiagonal();
    d.affine.translation = c - d.affine.linear * c + shift;
    if (spec.rotation_range_deg == 0.0 && spec.affine_scale_range == 0.0) {
        d.affine.linear = Eigen::Matrix3d::Identity();
        d.affine.translation = shift;
    }

    if (spec.nonlinear_amplitude > 0.0) {
        const std::size_t n = std::max<std::size_t>(2, spec.nonlinear_grid);
        // grid spans the domain with a 10% margin on each side
        const Point3 extent = (spec.domain.max - spec.domain.min).cwiseMax(Point3::Constant(1.0));
        const Point3 lo = spec.domain.min - 0.1 * extent;
        const Point3 step = 1.2 * extent / static_cast<double>(n - 1);
        PointMatrix src(static_cast<Eigen::Index>(n * n * n), 3);
        PointMatrix dst(src.rows(), 3);
        std::normal_distribution<double> normal(0.0, spec.nonlinear_amplitude);
        Eigen::Index row = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k, ++row) {
                    const Point3 p = lo + Point3(step.x() * static_cast<double>(i), step.y() * static_cast<double>(j),
                                                 step.z() * static_cast<double>(k));
                    src.row(row) = p.transpose();
                    dst.row(row) = p.transpose();
                    for (int dd = 0; dd < 3; ++dd) dst(row, dd) += normal(rng);
                }
        d.warp = fit_tps(src, dst, 0.0);
    } else {
        d.warp = TpsTransform::identity();
    }
    return d;
}

}  // namespace tractorc
