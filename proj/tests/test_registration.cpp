#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tractorc/registration.hpp"

using namespace tractorc;
using namespace testing_support;

namespace {

PointMatrix random_points(std::mt19937_64& rng, Eigen::Index n, double scale = 20.0) {
    std::normal_distribution<double> g(0.0, scale);
    PointMatrix p(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) p(i, c) = g(rng);
    return p;
}

std::vector<double> flat(const PointMatrix& p) { return std::vector<double>(p.data(), p.data() + p.size()); }

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.embed.widths = {8, 8, 8};
    cfg.keypoints = 12;
    cfg.head_hidden = 8;
    cfg.clusters = 2;
    return cfg;
}

Tractogram bundle(std::mt19937_64& rng, std::size_t count) {
    return resample_tractogram(random_tractogram(rng, count, 25), kDefaultPointCount);
}

}  // namespace

TEST_CASE("keypoints from uniform logits sit at the centroid") {
    std::mt19937_64 rng(1);
    const PointMatrix x = random_points(rng, 10);
    ad::Tape tape;
    const auto kp = keypoints_from_logits(tape.constant({10, 4}, std::vector<double>(40, 0.7)), tape.constant({10, 3}, flat(x)));
    const Point3 c = x.colwise().mean().transpose();
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t d = 0; d < 3; ++d) CHECK(kp.keypoints.value()[a * 3 + d] == doctest::Approx(c[d]).epsilon(1e-13));
}

TEST_CASE("a dominant logit pulls the keypoint onto that point") {
    std::mt19937_64 rng(2);
    const PointMatrix x = random_points(rng, 6);
    std::vector<double> logits(6 * 2, 0.0);
    logits[4 * 2 + 0] = 800.0;
    logits[1 * 2 + 1] = 800.0;
    ad::Tape tape;
    const auto kp = keypoints_from_logits(tape.constant({6, 2}, logits), tape.constant({6, 3}, flat(x)));
    for (int d = 0; d < 3; ++d) {
        CHECK(kp.keypoints.value()[d] == doctest::Approx(x(4, d)).epsilon(1e-12));
        CHECK(kp.keypoints.value()[3 + d] == doctest::Approx(x(1, d)).epsilon(1e-12));
    }
}

TEST_CASE("keypoints are convex combinations for any logits") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int draw = 0; draw < 1000; ++draw) {
        const Eigen::Index n = 5 + draw % 7;
        const PointMatrix x = random_points(rng, n);
        std::vector<double> logits(static_cast<std::size_t>(n) * 3);
        const double spread = draw % 3 == 0 ? 50.0 : 3.0;
        for (double& v : logits) v = spread * g(rng);
        ad::Tape tape;
        const auto kp = keypoints_from_logits(tape.constant({static_cast<std::size_t>(n), 3}, logits),
                                              tape.constant({static_cast<std::size_t>(n), 3}, flat(x)));
        const auto w = kp.weights.value();
        for (std::size_t a = 0; a < 3; ++a) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double v = w[static_cast<std::size_t>(i) * 3 + a];
                CHECK_MESSAGE((v >= 0.0 && v <= 1.0), "draw " << draw);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
            for (int d = 0; d < 3; ++d) {
                const double p = kp.keypoints.value()[a * 3 + d];
                CHECK(p >= x.col(d).minCoeff() - 1e-9);
                CHECK(p <= x.col(d).maxCoeff() + 1e-9);
            }
        }
    }
}

TEST_CASE("tps fit of identical sets is the identity") {
    std::mt19937_64 rng(4);
    const PointMatrix s = random_points(rng, 10);
    const auto t = fit_tps(s, s, 0.0);
    CHECK((t.affine.linear - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(t.affine.translation.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(t.warp.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tps reproduces translations and affine maps") {
    std::mt19937_64 rng(5);
    const PointMatrix s = random_points(rng, 10);
    const Point3 shift(3.0, -4.0, 7.5);
    const PointMatrix moved = s.rowwise() + shift.transpose();
    const auto t = fit_tps(s, moved, 0.0);
    CHECK(t.warp.cwiseAbs().maxCoeff() < 1e-8);
    CHECK((t.affine.linear - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((t.affine.translation - shift).cwiseAbs().maxCoeff() < 1e-8);

    Affine g{1.1 * rotation(0.2, -0.1, 0.3), Point3(1.0, 2.0, -3.0)};
    PointMatrix gs(s.rows(), 3);
    for (Eigen::Index i = 0; i < s.rows(); ++i) gs.row(i) = g(s.row(i).transpose()).transpose();
    const auto ta = fit_tps(s, gs, 0.0);
    CHECK(ta.warp.norm() < 1e-6);
    CHECK((ta.affine.matrix() - g.matrix()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("tps interpolates control points and meets the side conditions") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const PointMatrix s = random_points(rng, 10);
        const PointMatrix d = random_points(rng, 10);
        const auto t = fit_tps(s, d, 0.0);
        CHECK((t.apply(s) - d).rowwise().norm().maxCoeff() < 1e-8);
        CHECK(t.warp.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
        CHECK((s.transpose() * t.warp).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, s.cwiseAbs().maxCoeff()));
        Tractogram pts;
        for (Eigen::Index i = 0; i < s.rows(); ++i) pts.streamlines.push_back(line(s.row(i).transpose(), s.row(i).transpose(), 2));
        const auto warped = apply_tps(t, pts);
        for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK((warped.streamlines[i].points[0] - d.row(i).transpose()).norm() < 1e-8);
    }
}

TEST_CASE("tps rejects degenerate control sets unless regularized") {
    PointMatrix flat_set(6, 3);
    flat_set << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0, 2, 1, 0, 1, 3, 0;
    CHECK_THROWS_AS(fit_tps(flat_set, flat_set, 0.0), TpsError);
    CHECK_THROWS_AS(fit_tps(flat_set.topRows(3), flat_set.topRows(3), 0.0), TpsError);
    CHECK_THROWS_AS(fit_tps(flat_set, flat_set.topRows(5), 0.0), TpsError);
}

TEST_CASE("apply_tps: identity and affine-only transforms") {
    std::mt19937_64 rng(7);
    const Tractogram t = random_tractogram(rng, 4, 9);
    const auto same = apply_tps(TpsTransform::identity(), t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(same.streamlines[i].points == t.streamlines[i].points);

    TpsTransform aff;
    aff.affine = Affine{rotation(0.1, 0.4, -0.2) * 0.9, Point3(5, 6, 7)};
    aff.control = random_points(rng, 5);
    aff.warp = PointMatrix::Zero(5, 3);
    const auto a = apply_tps(aff, t);
    const auto b = apply_affine(t, aff.affine);
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t k = 0; k < t.streamlines[i].size(); ++k)
            CHECK((a.streamlines[i].points[k] - b.streamlines[i].points[k]).norm() < 1e-12);
}

TEST_CASE("tps text format round-trips") {
    std::mt19937_64 rng(8);
    const auto t = fit_tps(random_points(rng, 7), random_points(rng, 7), 1e-3);
    const auto back = parse_tps(encode_tps(t));
    CHECK(back.affine.matrix() == t.affine.matrix());
    CHECK(back.control == t.control);
    CHECK(back.warp == t.warp);
    CHECK_THROWS(parse_tps("not a transform"));
}

TEST_CASE("registration loss examples") {
    std::mt19937_64 rng(9);
    const Tractogram t = bundle(rng, 5);
    CHECK(registration_loss(t, t) == 0.0);

    Tractogram a, b;
    a.streamlines.push_back(line({0, 0, 0}, {40, 0, 0}, 14));
    b.streamlines.push_back(line({0, 3, 0}, {40, 3, 0}, 14));
    CHECK(registration_loss(a, b) == doctest::Approx(6.0).epsilon(1e-12));

    const Tractogram u = bundle(rng, 7);
    CHECK(registration_loss(t, u) == registration_loss(u, t));
    CHECK(registration_loss(t, u) > 0.0);

    ad::Tape tape;
    const auto lt = registration_loss(tape.constant({5 * 14, 3}, flatten_points(t)), tape.constant({7 * 14, 3}, flatten_points(u)), 14);
    CHECK(lt.item() == doctest::Approx(registration_loss(t, u)).epsilon(1e-14));
}

TEST_CASE("registration loss is zero iff every streamline has an exact partner") {
    std::mt19937_64 rng(10);
    const Tractogram t = bundle(rng, 4);
    Tractogram sub;  // subset, reversed: the target keeps a streamline without a partner
    sub.streamlines = {t.streamlines[2].reversed(), t.streamlines[0]};
    CHECK(registration_loss(sub, t) > 0.0);
    Tractogram superset = sub;
    superset.streamlines.push_back(t.streamlines[1]);
    superset.streamlines.push_back(t.streamlines[3].reversed());
    CHECK(registration_loss(superset, t) == 0.0);
}

TEST_CASE("registration loss gradient") {
    std::mt19937_64 rng(11);
    const Tractogram w = resample_tractogram(random_tractogram(rng, 3, 10), 5);
    const Tractogram t = resample_tractogram(random_tractogram(rng, 4, 10), 5);
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Tensor> x) {
        return registration_loss(x[0], tape.constant({20, 3}, flatten_points(t)), 5);
    };
    CHECK(ad::grad_check(f, std::vector<ad::GradInput>{{{15, 3}, flatten_points(w)}}).max_relative_error < 1e-6);
}

TEST_CASE("tps_warp gradient through the closed-form solve") {
    std::mt19937_64 rng(12);
    const PointMatrix s = random_points(rng, 6, 5.0), d = random_points(rng, 6, 5.0), x = random_points(rng, 4, 5.0);
    std::normal_distribution<double> g;
    std::vector<double> w(12);
    for (double& v : w) v = g(rng);
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Tensor> in) {
        return ad::sum(ad::mul(ad::tps_warp(in[0], in[1], in[2], 1e-3), tape.constant({4, 3}, w)));
    };
    const std::vector<ad::GradInput> in{{{6, 3}, flat(s)}, {{6, 3}, flat(d)}, {{4, 3}, flat(x)}};
    CHECK(ad::grad_check(f, in, 3e-6).max_relative_error < 1e-4);

    // forward agrees with the non-differentiable fit
    ad::Tape tape;
    const auto y = ad::tps_warp(tape.constant({6, 3}, flat(s)), tape.constant({6, 3}, flat(d)), tape.constant({4, 3}, flat(x)), 1e-3);
    const PointMatrix ref = fit_tps(s, d, 1e-3).apply(x);
    for (std::size_t i = 0; i < 12; ++i) CHECK(y.value()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-10));
}

TEST_CASE("equivariance loss examples") {
    std::mt19937_64 rng(13);
    const PointMatrix x = random_points(rng, 9);
    std::normal_distribution<double> g;
    std::vector<double> logits(9 * 4);
    for (double& v : logits) v = g(rng);

    Deformation id{Affine::identity(), TpsTransform::identity()};
    ad::Tape tape;
    const auto kp = keypoints_from_logits(tape.constant({9, 4}, logits), tape.constant({9, 3}, flat(x)));
    CHECK(equivariance_loss(kp.keypoints, kp.keypoints, id).item() == 0.0);

    // coordinate-independent weights commute with an affine map
    Deformation aff{Affine{1.05 * rotation(0.3, 0.1, -0.2), Point3(4, -2, 1)}, TpsTransform::identity()};
    const PointMatrix gx = aff.apply(x);
    const auto kg = keypoints_from_logits(tape.constant({9, 4}, logits), tape.constant({9, 3}, flat(gx)));
    CHECK(equivariance_loss(kg.keypoints, kp.keypoints, aff).item() < 1e-20);

    // a real network on a random deformation
    const Model m = Model::initialize(tiny_model(), 3);
    const Tractogram t = bundle(rng, 4);
    DeformationSpec spec;
    spec.affine_scale_range = 0.1;
    spec.rotation_range_deg = 10.0;
    spec.translation_range = 5.0;
    spec.nonlinear_amplitude = 2.0;
    spec.domain = bounding_box(t);
    spec.seed = 5;
    const Deformation d = sample_deformation(spec);
    const PointMatrix k0 = predict_keypoints(t, m);
    const PointMatrix k1 = predict_keypoints(d.apply(t), m);
    const double loss = equivariance_loss(tape.constant({12, 3}, flat(k1)), tape.constant({12, 3}, flat(k0)), d).item();
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
}

TEST_CASE("diversity loss examples") {
    ad::Tape tape;
    CHECK(diversity_loss(tape.constant({3, 3}, std::vector<double>(9, 1.0)), 2.0).item() == doctest::Approx(4.0));
    CHECK(diversity_loss(tape.constant({3, 3}, {0, 0, 0, 10, 0, 0, 0, 10, 0}), 2.0).item() == 0.0);
    CHECK(diversity_loss(tape.constant({2, 3}, {0, 0, 0, 1, 0, 0}), 2.0).item() == doctest::Approx(1.0));

    std::mt19937_64 rng(14);
    const PointMatrix p = random_points(rng, 5, 1.0);
    const ad::ScalarFn f = [](ad::Tape&, std::span<const ad::Tensor> x) { return diversity_loss(x[0], 2.5); };
    CHECK(ad::grad_check(f, std::vector<ad::GradInput>{{{5, 3}, flat(p)}}).max_relative_error < 1e-6);
}

TEST_CASE("registering a tractogram to itself leaves it in place") {
    std::mt19937_64 rng(15);
    const Model m = Model::initialize(tiny_model(), 9);
    const Tractogram t = bundle(rng, 6);
    const auto r = register_tractograms(t, t, m, 1e-6);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t k = 0; k < t.streamlines[i].size(); ++k)
            worst = std::max(worst, (r.warped.streamlines[i].points[k] - t.streamlines[i].points[k]).norm());
    CHECK(worst < 1e-6);
    CHECK(std::abs(registration_loss(r.warped, t) - registration_loss(t, t)) < 1e-6);
    CHECK(r.source_keypoints == r.target_keypoints);
}
