#include "tractorc/tps.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "tractorc/io.hpp"

namespace tractorc {

namespace {

using Mat = Eigen::MatrixXd;

// d/dr U(r) / r, the factor multiplying (x - c) in the kernel gradient.
double kernel_grad_factor(double r) { return r > 0.0 ? 2.0 * std::log(r) + 1.0 : 0.0; }

Mat system_matrix(const PointMatrix& src, double lambda) {
    const Eigen::Index a = src.rows();
    // coplanar or collinear controls leave the affine block rank deficient for every lambda
    const PointMatrix centered = src.rowwise() - src.colwise().mean();
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(centered.transpose() * centered).singularValues();
    if (!(sv[2] > 1e-12 * sv[0])) {
        throw TpsError("control points are coplanar or collinear; the TPS affine part is undetermined");
    }
    Mat L = Mat::Zero(a + 4, a + 4);
    for (Eigen::Index i = 0; i < a; ++i) {
        for (Eigen::Index j = i + 1; j < a; ++j) {
            L(i, j) = L(j, i) = tps_kernel((src.row(i) - src.row(j)).norm());
        }
        L(i, i) = lambda;
        L(i, a) = L(a, i) = 1.0;
        for (int d = 0; d < 3; ++d) L(i, a + 1 + d) = L(a + 1 + d, i) = src(i, d);
    }
    return L;
}

Eigen::PartialPivLU<Mat> factorize(const Mat& L) {
    Eigen::PartialPivLU<Mat> lu(L);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-15) || !std::isfinite(rcond)) {
        throw TpsError("singular TPS system (control points degenerate); use a regularization lambda > 0 "
                       "and non-coplanar control points");
    }
    return lu;
}

// M x (A+4) basis [U(|x_m - c_a|) | 1 | x_m]
Mat basis(const PointMatrix& pts, const PointMatrix& ctrl) {
    const Eigen::Index a = ctrl.rows();
    Mat B(pts.rows(), a + 4);
    for (Eigen::Index m = 0; m < pts.rows(); ++m) {
        for (Eigen::Index k = 0; k < a; ++k) B(m, k) = tps_kernel((pts.row(m) - ctrl.row(k)).norm());
        B(m, a) = 1.0;
        for (int d = 0; d < 3; ++d) B(m, a + 1 + d) = pts(m, d);
    }
    return B;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TpsTransform TpsTransform::identity() { return {Affine::identity(), PointMatrix(0, 3), PointMatrix(0, 3)}; }

Point3 TpsTransform::operator()(const Point3& x) const {
    Point3 out = affine(x);
    for (Eigen::Index a = 0; a < control.rows(); ++a) {
        out += tps_kernel((x - control.row(a).transpose()).norm()) * warp.row(a).transpose();
    }
    return out;
}

PointMatrix TpsTransform::apply(const PointMatrix& points) const {
    PointMatrix out(points.rows(), 3);
    for (Eigen::Index m = 0; m < points.rows(); ++m) out.row(m) = (*this)(points.row(m).transpose()).transpose();
    return out;
}

TpsTransform fit_tps(const PointMatrix& source, const PointMatrix& target, double lambda) {
    if (source.rows() != target.rows()) throw TpsError("source and target keypoint counts differ");
    if (source.rows() < 4) throw TpsError("TPS needs at least 4 control points");
    if (lambda < 0.0) throw TpsError("lambda must be nonnegative");
    if (!source.allFinite() || !target.allFinite()) throw TpsError("non-finite control points");
    const Eigen::Index a = source.rows();
    const Mat L = system_matrix(source, lambda);
    Mat Y = Mat::Zero(a + 4, 3);
    Y.topRows(a) = target;
    const Mat theta = factorize(L).solve(Y);

    TpsTransform t;
    t.control = source;
    t.warp = theta.topRows(a);
    t.affine.translation = theta.row(a).transpose();
    t.affine.linear = theta.bottomRows(3).transpose();
    return t;
}

Tractogram apply_tps(const TpsTransform& t, const Tractogram& tractogram) {
    Tractogram out = tractogram;
    for (auto& s : out.streamlines) {
        for (auto& p : s.points) p = t(p);
    }
    return out;
}

PointMatrix to_point_matrix(std::span<const double> xyz) {
    if (xyz.size() % 3 != 0) throw TpsError("coordinate buffer length is not a multiple of 3");
    PointMatrix m(static_cast<Eigen::Index>(xyz.size() / 3), 3);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (int d = 0; d < 3; ++d) m(i, d) = xyz[static_cast<std::size_t>(3 * i + d)];
    return m;
}

PointMatrix to_point_matrix(const Tractogram& t) { return to_point_matrix(flatten_points(t)); }

// Text layout:
//   tps 1
//   affine            (3 rows of 4, row-major)
//   control <A>       (A rows of x y z)
//   warp <A>          (A rows of wx wy wz)
std::string encode_tps(const TpsTransform& t) {
    std::string out = "tps 1\naffine\n";
    const auto m = t.affine.matrix();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) out += fmt(m(r, c)) + (c < 3 ? " " : "\n");
    }
    auto rows = [&out](const char* tag, const PointMatrix& p) {
        out += std::string(tag) + " " + std::to_string(p.rows()) + "\n";
        for (Eigen::Index i = 0; i < p.rows(); ++i) out += fmt(p(i, 0)) + " " + fmt(p(i, 1)) + " " + fmt(p(i, 2)) + "\n";
    };
    rows("control", t.control);
    rows("warp", t.warp);
    return out;
}

TpsTransform parse_tps(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "tps" || version != 1) throw TpsError("not a TPS transform file");
    if (!(in >> tag) || tag != "affine") throw TpsError("TPS file: expected 'affine'");
    Eigen::Matrix<double, 3, 4> m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(in >> m(r, c))) throw TpsError("TPS file: bad affine entry");
    auto rows = [&in](const char* expected) {
        std::string t;
        long n = -1;
        if (!(in >> t >> n) || t != expected || n < 0) throw TpsError(std::string("TPS file: expected '") + expected + " <count>'");
        PointMatrix p(n, 3);
        for (long i = 0; i < n; ++i)
            for (int d = 0; d < 3; ++d)
                if (!(in >> p(i, d))) throw TpsError(std::string("TPS file: bad ") + expected + " row");
        return p;
    };
    TpsTransform t;
    t.affine = Affine::from_matrix(m);
    t.control = rows("control");
    t.warp = rows("warp");
    if (t.control.rows() != t.warp.rows()) throw TpsError("TPS file: control and warp counts differ");
    return t;
}

void write_tps(const TpsTransform& t, const std::filesystem::path& path) { io::write_file_atomic(path, encode_tps(t)); }

TpsTransform read_tps(const std::filesystem::path& path) { return parse_tps(io::read_file(path)); }

namespace ad {

Tensor tps_warp(const Tensor& source, const Tensor& target, const Tensor& points, double lambda) {
    const auto check = [](const Tensor& t, const char* what) {
        if (t.shape().size() != 2 || t.dim(1) != 3) throw ShapeError(std::string("tps_warp: ") + what + " must be [n,3], got " + shape_string(t.shape()));
    };
    check(source, "source");
    check(target, "target");
    check(points, "points");
    if (source.dim(0) != target.dim(0)) throw ShapeError("tps_warp: source/target keypoint counts differ");
    if (source.dim(0) < 4) throw TpsError("TPS needs at least 4 control points");

    const PointMatrix src = to_point_matrix(source.value());
    const PointMatrix tgt = to_point_matrix(target.value());
    const PointMatrix pts = to_point_matrix(points.value());
    const Eigen::Index a = src.rows();
    const Eigen::Index m = pts.rows();

    const Mat L = system_matrix(src, lambda);
    auto lu = factorize(L);
    Mat Y = Mat::Zero(a + 4, 3);
    Y.topRows(a) = tgt;
    Mat theta = lu.solve(Y);
    const Mat B = basis(pts, src);
    const Mat warped = B * theta;

    std::vector<double> out(static_cast<std::size_t>(m * 3));
    for (Eigen::Index i = 0; i < m; ++i)
        for (int d = 0; d < 3; ++d) out[static_cast<std::size_t>(3 * i + d)] = warped(i, d);

    const std::size_t is = source.id(), it = target.id(), ip = points.id();
    const bool gs = source.requires_grad(), gt = target.requires_grad(), gp = points.requires_grad();
    const std::size_t msz = static_cast<std::size_t>(m);
    return source.tape().record(
        {msz, 3}, std::move(out), gs || gt || gp,
        [=, lu = std::move(lu), theta = std::move(theta)](Tape& tape, const Node& self) {
            const double scale = corrupt_gradient() ? 1.01 : 1.0;
            Mat G(m, 3);
            for (Eigen::Index i = 0; i < m; ++i)
                for (int d = 0; d < 3; ++d) G(i, d) = scale * self.grad[static_cast<std::size_t>(3 * i + d)];
            const PointMatrix src = to_point_matrix(tape.node(is).value);
            const PointMatrix pts = to_point_matrix(tape.node(ip).value);
            const Mat B = basis(pts, src);

            const Mat dtheta = B.transpose() * G;
            const Mat dY = lu.solve(dtheta);  // the system matrix is symmetric
            const Mat dL = -dY * theta.transpose();
            const Mat dB = G * theta.transpose();

            if (gt) {
                auto& g = tape.grad_buffer(it);
                for (Eigen::Index i = 0; i < a; ++i)
                    for (int d = 0; d < 3; ++d) g[static_cast<std::size_t>(3 * i + d)] += dY(i, d);
            }
            if (gs) {
                PointMatrix ds = PointMatrix::Zero(a, 3);
                for (Eigen::Index i = 0; i < a; ++i) {
                    for (Eigen::Index j = 0; j < a; ++j) {
                        if (i == j) continue;
                        const Eigen::RowVector3d diff = src.row(i) - src.row(j);
                        ds.row(i) += (dL(i, j) + dL(j, i)) * kernel_grad_factor(diff.norm()) * diff;
                    }
                    for (int d = 0; d < 3; ++d) ds(i, d) += dL(i, a + 1 + d) + dL(a + 1 + d, i);
                }
                for (Eigen::Index p = 0; p < m; ++p) {
                    for (Eigen::Index i = 0; i < a; ++i) {
                        const Eigen::RowVector3d diff = src.row(i) - pts.row(p);
                        ds.row(i) += dB(p, i) * kernel_grad_factor(diff.norm()) * diff;
                    }
                }
                auto& g = tape.grad_buffer(is);
                for (Eigen::Index i = 0; i < a; ++i)
                    for (int d = 0; d < 3; ++d) g[static_cast<std::size_t>(3 * i + d)] += ds(i, d);
            }
            if (gp) {
                auto& g = tape.grad_buffer(ip);
                for (Eigen::Index p = 0; p < m; ++p) {
                    Eigen::RowVector3d dx = dB.block<1, 3>(p, a + 1);
                    for (Eigen::Index i = 0; i < a; ++i) {
                        const Eigen::RowVector3d diff = pts.row(p) - src.row(i);
                        dx += dB(p, i) * kernel_grad_factor(diff.norm()) * diff;
                    }
                    for (int d = 0; d < 3; ++d) g[static_cast<std::size_t>(3 * p + d)] += dx(d);
                }
            }
        });
}

}  // namespace ad

}  // namespace tractorc
