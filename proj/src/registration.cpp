#include "tractorc/registration.hpp"

#include <cmath>
#include <limits>

#include "tractorc/parallel.hpp"

namespace tractorc {

using ad::Tape;
using ad::Tensor;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Match {
    std::size_t other = 0;
    bool flipped = false;
    double distance = std::numeric_limits<double>::infinity();
};

// MDF between streamline i of `a` and streamline j of `b`, both flat
// [N * n, 3]; reports the winning orientation (direct wins ties).
double mdf_flat(std::span<const double> a, std::size_t i, std::span<const double> b, std::size_t j, std::size_t n,
                bool* flipped) {
    double direct = 0.0, flip = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double* p = &a[3 * (i * n + k)];
        const double* q = &b[3 * (j * n + k)];
        const double* r = &b[3 * (j * n + n - 1 - k)];
        direct += std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]));
        flip += std::sqrt((p[0] - r[0]) * (p[0] - r[0]) + (p[1] - r[1]) * (p[1] - r[1]) + (p[2] - r[2]) * (p[2] - r[2]));
    }
    *flipped = flip < direct;
    return std::min(direct, flip) / static_cast<double>(n);
}

// For every streamline of `a`, its nearest streamline in `b`.
std::vector<Match> nearest(std::span<const double> a, std::size_t na, std::span<const double> b, std::size_t nb,
                           std::size_t n) {
    std::vector<Match> out(na);
    detail::parallel_blocks(na, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Match best;
            for (std::size_t j = 0; j < nb; ++j) {
                bool flipped = false;
                const double d = mdf_flat(a, i, b, j, n, &flipped);
                if (d < best.distance) best = {j, flipped, d};
            }
            out[i] = best;
        }
    });
    return out;
}

// Accumulates w * d MDF(a_i, b_j) / d a_i into ga and / d b_j into gb.
void mdf_grad(std::span<const double> a, std::size_t i, std::span<const double> b, std::size_t j, std::size_t n,
              bool flipped, double w, std::vector<double>* ga, std::vector<double>* gb) {
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t ka = 3 * (i * n + k);
        const std::size_t kb = 3 * (j * n + (flipped ? n - 1 - k : k));
        double diff[3];
        double len = 0.0;
        for (int d = 0; d < 3; ++d) {
            diff[d] = a[ka + d] - b[kb + d];
            len += diff[d] * diff[d];
        }
        len = std::sqrt(len);
        if (len == 0.0) continue;
        for (int d = 0; d < 3; ++d) {
            const double g = w * diff[d] / (len * static_cast<double>(n));
            if (ga) (*ga)[ka + d] += g;
            if (gb) (*gb)[kb + d] -= g;
        }
    }
}

void check_flat(const Tensor& t, std::size_t n, const char* what) {
    if (t.shape().size() != 2 || t.dim(1) != 3 || t.dim(0) == 0 || t.dim(0) % n != 0) {
        throw ad::ShapeError(std::string("registration_loss: ") + what + " must be a nonempty [N*" + std::to_string(n) +
                             ",3] tensor, got " + ad::shape_string(t.shape()));
    }
}

Tensor constant_points(Tape& tape, const PointMatrix& m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return tape.constant({static_cast<std::size_t>(m.rows()), 3}, std::move(v));
}

}  // namespace

void init_keypoint_head(ad::ParameterSet& params, std::size_t in_dim, std::size_t hidden, std::size_t keypoints,
                        std::mt19937_64& rng) {
    auto layer = [&](const std::string& prefix, std::size_t in, std::size_t out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<double> w(in * out);
        for (double& v : w) v = u(rng);
        params.add(prefix + ".W", {in, out}, std::move(w));
        params.add(prefix + ".b", {out}, std::vector<double>(out, 0.0));
    };
    layer("head.layer0", in_dim, hidden);
    layer("head.layer1", hidden, keypoints);
}

KeypointTensors keypoints_from_logits(const Tensor& logits, const Tensor& coords) {
    if (logits.shape().size() != 2 || coords.shape().size() != 2 || coords.dim(1) != 3 || logits.dim(0) != coords.dim(0)) {
        throw ad::ShapeError("keypoints: logits " + ad::shape_string(logits.shape()) + " do not match coords " +
                             ad::shape_string(coords.shape()));
    }
    if (logits.dim(0) == 0) throw ad::ShapeError("keypoints: no points");
    const Tensor pi = ad::softmax(logits, 0);
    return {pi, ad::matmul(ad::transpose(pi), coords)};
}

KeypointTensors predict_keypoints(const Tensor& h, const BoundParameters& params, const Tensor& coords, double slope) {
    const Tensor hidden =
        ad::leaky_relu(ad::add(ad::matmul(h, params["head.layer0.W"]), params["head.layer0.b"]), slope);
    const Tensor logits = ad::add(ad::matmul(hidden, params["head.layer1.W"]), params["head.layer1.b"]);
    return keypoints_from_logits(logits, coords);
}

Tensor registration_loss(const Tensor& warped, const Tensor& target, std::size_t n) {
    check_flat(warped, n, "warped");
    check_flat(target, n, "target");
    const std::size_t nw = warped.dim(0) / n, nt = target.dim(0) / n;
    const auto fwd = nearest(warped.value(), nw, target.value(), nt, n);
    const auto bwd = nearest(target.value(), nt, warped.value(), nw, n);
    double a = 0.0, b = 0.0;
    for (const auto& m : fwd) a += m.distance;
    for (const auto& m : bwd) b += m.distance;
    const double value = a / static_cast<double>(nw) + b / static_cast<double>(nt);

    const std::size_t iw = warped.id(), it = target.id();
    const bool gw = warped.requires_grad(), gt = target.requires_grad();
    return warped.tape().record({}, {value}, gw || gt, [=](Tape& tape, const ad::Node& self) {
        const auto& wv = tape.node(iw).value;
        const auto& tv = tape.node(it).value;
        std::vector<double>* gwp = gw ? &tape.grad_buffer(iw) : nullptr;
        std::vector<double>* gtp = gt ? &tape.grad_buffer(it) : nullptr;
        const double g = self.grad[0];
        for (std::size_t i = 0; i < nw; ++i) {
            mdf_grad(wv, i, tv, fwd[i].other, n, fwd[i].flipped, g / static_cast<double>(nw), gwp, gtp);
        }
        // the reverse term measures d(t_j, w_i); swap the roles of the buffers
        for (std::size_t j = 0; j < nt; ++j) {
            mdf_grad(tv, j, wv, bwd[j].other, n, bwd[j].flipped, g / static_cast<double>(nt), gtp, gwp);
        }
    });
}

double registration_loss(const Tractogram& warped, const Tractogram& target) {
    if (warped.empty() || target.empty()) throw GeometryError("registration loss of an empty tractogram");
    const std::size_t n = warped.streamlines.front().size();
    Tape tape;
    const Tensor w = tape.constant({warped.point_count(), 3}, flatten_points(warped));
    const Tensor t = tape.constant({target.point_count(), 3}, flatten_points(target));
    return registration_loss(w, t, n).item();
}

Tensor deform_keypoints(const Tensor& keypoints, const Deformation& d) {
    Tape& tape = keypoints.tape();
    Tensor x = keypoints;
    if (d.warp.control.rows() > 0) {
        const PointMatrix targets = d.warp.apply(d.warp.control);
        // refitting with lambda = 0 reproduces the stored interpolating warp
        x = tps_warp(constant_points(tape, d.warp.control), constant_points(tape, targets), x, 0.0);
    }
    const Eigen::Matrix3d lt = d.affine.linear.transpose();
    std::vector<double> lin(9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) lin[static_cast<std::size_t>(3 * r + c)] = lt(r, c);
    const Tensor shift = tape.constant({3}, {d.affine.translation.x(), d.affine.translation.y(), d.affine.translation.z()});
    return ad::add(ad::matmul(x, tape.constant({3, 3}, std::move(lin))), shift);
}

Tensor equivariance_loss(const Tensor& keypoints_of_transformed, const Tensor& keypoints_of_original, const Deformation& d) {
    const Tensor diff = ad::sub(keypoints_of_transformed, deform_keypoints(keypoints_of_original, d));
    return ad::mul_scalar(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(keypoints_of_original.dim(0)));
}

Tensor diversity_loss(const Tensor& keypoints, double delta) {
    const std::size_t a = keypoints.dim(0);
    if (a < 2) throw ad::ShapeError("diversity loss needs at least 2 keypoints");
    const Tensor dist = ad::pairwise_distance(keypoints);
    const Tensor hinge = ad::leaky_relu(ad::add_scalar(ad::mul_scalar(dist, -1.0), delta), 0.0);
    // the full matrix counts each pair twice and adds delta^2 per diagonal entry
    const Tensor total = ad::add_scalar(ad::sum(ad::mul(hinge, hinge)), -static_cast<double>(a) * delta * delta);
    const double pairs = static_cast<double>(a * (a - 1) / 2);
    return ad::mul_scalar(total, 0.5 / pairs);
}

PointMatrix predict_keypoints(const Tractogram& t, const Model& model) {
    if (t.empty()) throw GeometryError("keypoints of an empty tractogram");
    const PointEmbeddings h = embed_points(t, model.params, model.config.embed);
    const auto& p = model.params;
    const double slope = model.config.embed.leaky_slope;
    const auto rows = static_cast<Eigen::Index>(h.rows);
    const Eigen::Map<const RowMat> H(h.values.data(), rows, static_cast<Eigen::Index>(h.dim));
    auto mat = [&p](const char* name) {
        const auto& a = p.at(name);
        return Eigen::Map<const RowMat>(a.value.data(), static_cast<Eigen::Index>(a.shape[0]),
                                        static_cast<Eigen::Index>(a.shape[1]));
    };
    auto vec = [&p](const char* name) {
        const auto& a = p.at(name);
        return Eigen::Map<const Eigen::RowVectorXd>(a.value.data(), static_cast<Eigen::Index>(a.value.size()));
    };
    RowMat hidden = (H * mat("head.layer0.W")).rowwise() + vec("head.layer0.b");
    hidden = hidden.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    RowMat logits = (hidden * mat("head.layer1.W")).rowwise() + vec("head.layer1.b");
    // softmax over points, one column per keypoint
    for (Eigen::Index a = 0; a < logits.cols(); ++a) {
        const double mx = logits.col(a).maxCoeff();
        logits.col(a) = (logits.col(a).array() - mx).exp().matrix();
        logits.col(a) /= logits.col(a).sum();
    }
    const PointMatrix coords = to_point_matrix(t);
    return logits.transpose() * coords;
}

RegistrationResult register_tractograms(const Tractogram& source, const Tractogram& target, const Model& model,
                                        double lambda) {
    RegistrationResult r;
    r.source_keypoints = predict_keypoints(source, model);
    r.target_keypoints = predict_keypoints(target, model);
    try {
        r.transform = fit_tps(r.source_keypoints, r.target_keypoints, lambda);
    } catch (const TpsError& e) {
        throw TpsError(std::string("degenerate keypoint configuration: ") + e.what());
    }
    r.warped = apply_tps(r.transform, source);
    return r;
}

}  // namespace tractorc
