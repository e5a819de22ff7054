#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "tractorc/embedding.hpp"

using namespace tractorc;
using namespace testing_support;

namespace {

std::vector<std::size_t> knn_oracle(const std::vector<double>& p, std::size_t n, std::size_t dim, std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t m = 0; m < n; ++m) {
            if (m == j) continue;
            double d = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d += (p[j * dim + c] - p[m * dim + c]) * (p[j * dim + c] - p[m * dim + c]);
            all.emplace_back(std::sqrt(d), m);
        }
        std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
    }
    return out;
}

EmbeddingConfig small_config() {
    EmbeddingConfig cfg;
    cfg.widths = {8, 8, 8};
    return cfg;
}

ad::ParameterSet params_for(const EmbeddingConfig& cfg, std::uint64_t seed) {
    ad::ParameterSet p;
    std::mt19937_64 rng(seed);
    init_embedding_params(p, cfg, rng);
    // nonzero biases so that zero-difference edges still carry signal
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& item : p.items()) {
        if (item.name.ends_with(".b")) {
            for (double& v : item.value) v = u(rng);
        }
    }
    return p;
}

Tractogram resampled(std::mt19937_64& rng, std::size_t count) {
    return resample_tractogram(random_tractogram(rng, count, 30), kDefaultPointCount);
}

}  // namespace

TEST_CASE("knn graph examples") {
    std::vector<double> line_pts;
    for (int i = 0; i < 6; ++i) line_pts.insert(line_pts.end(), {static_cast<double>(i), 0.0, 0.0});
    const auto g = knn_graph(line_pts, 6, 3, 2);
    std::vector<std::size_t> row3{g[6], g[7]};
    std::sort(row3.begin(), row3.end());
    CHECK(row3 == std::vector<std::size_t>{2, 4});

    // 3-4-5 triangle: A(0,0) B(3,0) C(0,4); AB = 3, AC = 4, BC = 5
    const std::vector<double> tri{0, 0, 0, 3, 0, 0, 0, 4, 0};
    CHECK(knn_graph(tri, 3, 3, 1) == std::vector<std::size_t>{1, 0, 0});

    CHECK_THROWS_AS(knn_graph(tri, 3, 3, 3), std::invalid_argument);
}

TEST_CASE("knn graph matches a brute-force sort on random clouds") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(14 * 3);
        for (double& v : p) v = g(rng);
        CHECK(knn_graph(p, 14, 3, 4) == knn_oracle(p, 14, 3, 4));
    }
    // ties go to the lower index
    const std::vector<double> sym{0, 0, 0, -1, 0, 0, 1, 0, 0, 0, 5, 0};
    CHECK(knn_graph(sym, 4, 3, 1)[0] == 1);
}

TEST_CASE("edgeconv with zero weights is zero") {
    ad::Tape tape;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    std::vector<double> x(5 * 3);
    for (double& v : x) v = g(rng);
    const auto nb = knn_graph(x, 5, 3, 2);
    const auto f = tape.constant({5, 3}, x);
    const auto out = edgeconv_layer(f, nb, 2, tape.constant({6, 4}, std::vector<double>(24, 0.0)),
                                    tape.constant({4}, std::vector<double>(4, 0.0)), 0.2);
    for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("edgeconv on identical points is the activation of the affine map of (x, 0)") {
    ad::Tape tape;
    const std::vector<double> x{1.0, -2.0, 0.5};
    std::vector<double> pts;
    for (int i = 0; i < 4; ++i) pts.insert(pts.end(), x.begin(), x.end());
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::vector<double> w(6 * 3), b(3);
    for (double& v : w) v = g(rng);
    for (double& v : b) v = g(rng);
    const auto nb = knn_graph(pts, 4, 3, 2);
    const auto out = edgeconv_layer(tape.constant({4, 3}, pts), nb, 2, tape.constant({6, 3}, w), tape.constant({3}, b), 0.2);
    for (std::size_t o = 0; o < 3; ++o) {
        double a = b[o];
        for (std::size_t c = 0; c < 3; ++c) a += x[c] * w[c * 3 + o];
        const double expect = a > 0 ? a : 0.2 * a;
        for (std::size_t r = 0; r < 4; ++r) CHECK(out.value()[r * 3 + o] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("edgeconv rejects mismatched weights") {
    ad::Tape tape;
    const std::vector<double> pts{0, 0, 0, 1, 0, 0, 2, 0, 0};
    const auto nb = knn_graph(pts, 3, 3, 1);
    CHECK_THROWS_AS(edgeconv_layer(tape.constant({3, 3}, pts), nb, 1, tape.constant({5, 2}, std::vector<double>(10, 0.0)),
                                   tape.constant({2}, {0.0, 0.0}), 0.2),
                    ad::ShapeError);
}

TEST_CASE("two stacked edgeconv layers pass grad_check") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g;
    auto draw = [&](std::size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = g(rng);
        return v;
    };
    const std::size_t n = 7, k = 3;
    const std::vector<double> pts = draw(n * 3);
    const auto nb0 = knn_graph(pts, n, 3, k);
    // the feature-space graph is held fixed (it is piecewise constant in the inputs)
    std::vector<ad::GradInput> in{{{n, 3}, pts}, {{6, 5}, draw(30)}, {{5}, draw(5)}, {{10, 4}, draw(40)}, {{4}, draw(4)}};
    std::vector<std::size_t> nb1;
    {
        ad::Tape tape;
        const auto h = edgeconv_layer(tape.constant({n, 3}, pts), nb0, k, tape.constant({6, 5}, in[1].value),
                                      tape.constant({5}, in[2].value), 0.2);
        nb1 = knn_graph(h.value(), n, 5, k);
    }
    const std::vector<double> readout = draw(n * 4);
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Tensor> x) {
        const auto h = edgeconv_layer(x[0], nb0, k, x[1], x[2], 0.2);
        const auto h2 = edgeconv_layer(h, nb1, k, x[3], x[4], 0.2);
        return ad::sum(ad::mul(h2, tape.constant(h2.shape(), readout)));
    };
    CHECK(ad::grad_check(f, in, 3e-6).max_relative_error < 1e-4);
}

TEST_CASE("streamline order: permutation and duplication carry through") {
    std::mt19937_64 rng(7);
    const auto cfg = small_config();
    const auto p = params_for(cfg, 1);
    const Tractogram t = resampled(rng, 5);
    const auto h = embed_points(t, p, cfg);
    REQUIRE(h.rows == 5 * cfg.n_points);

    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tractogram tp;
    for (std::size_t i : perm) tp.streamlines.push_back(t.streamlines[i]);
    const auto hp = embed_points(tp, p, cfg);
    const std::size_t block = cfg.n_points * h.dim;
    for (std::size_t r = 0; r < perm.size(); ++r) {
        CHECK(std::equal(hp.values.begin() + r * block, hp.values.begin() + (r + 1) * block,
                         h.values.begin() + perm[r] * block));
    }

    Tractogram dup;
    dup.streamlines = {t.streamlines[2], t.streamlines[2]};
    const auto zd = embed_streamlines(dup, p, cfg);
    CHECK(std::equal(zd.values.begin(), zd.values.begin() + zd.dim, zd.values.begin() + zd.dim));
}

TEST_CASE("translation changes embeddings only through the absolute channels") {
    std::mt19937_64 rng(8);
    const Tractogram t = resampled(rng, 3);
    const Tractogram moved = apply_affine(t, Affine{Eigen::Matrix3d::Identity(), Point3(12.0, -7.0, 30.0)});

    auto max_diff = [](const StreamlineEmbeddings& a, const StreamlineEmbeddings& b) {
        double m = 0.0;
        for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
        return m;
    };

    auto diff_only = small_config();
    diff_only.absolute_channels = false;
    const auto pd = params_for(diff_only, 2);
    CHECK(max_diff(embed_streamlines(t, pd, diff_only), embed_streamlines(moved, pd, diff_only)) < 1e-9);

    const auto full = small_config();
    const auto pf = params_for(full, 2);
    CHECK(max_diff(embed_streamlines(t, pf, full), embed_streamlines(moved, pf, full)) > 1e-3);
}

TEST_CASE("pooled embeddings ignore point order") {
    std::mt19937_64 rng(9);
    const auto cfg = small_config();
    const auto p = params_for(cfg, 3);
    const Tractogram t = resampled(rng, 4);
    Tractogram shuffled = t;
    Tractogram flipped = t;
    for (auto& s : shuffled.streamlines) std::shuffle(s.points.begin(), s.points.end(), rng);
    for (auto& s : flipped.streamlines) s = s.reversed();
    const auto z = embed_streamlines(t, p, cfg);
    const auto zs = embed_streamlines(shuffled, p, cfg);
    const auto zf = embed_streamlines(flipped, p, cfg);
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        CHECK(std::abs(z.values[i] - zs.values[i]) < 1e-9);
        CHECK(std::abs(z.values[i] - zf.values[i]) < 1e-9);
    }
}

TEST_CASE("pooling") {
    ad::Tape tape;
    std::vector<double> rows;
    for (int i = 0; i < 4; ++i) rows.insert(rows.end(), {1.5, -2.0, 0.25});
    const auto z = pool_streamlines(tape.constant({4, 3}, rows), 4);
    CHECK(std::vector<double>(z.value().begin(), z.value().end()) == std::vector<double>{1.5, -2.0, 0.25, 1.5, -2.0, 0.25});

    const std::vector<double> h{1, 5, 2, 0, 3, 4, 7, -1, 6, 2, 0, 0};
    std::vector<double> rev;
    for (int r = 3; r >= 0; --r) rev.insert(rev.end(), h.begin() + 3 * r, h.begin() + 3 * r + 3);
    const auto a = pool_streamlines(tape.constant({4, 3}, h), 4);
    const auto b = pool_streamlines(tape.constant({4, 3}, rev), 4);
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-15));

    CHECK_THROWS_AS(pool_streamlines(tape.constant({5, 3}, std::vector<double>(15, 0.0)), 4), ad::ShapeError);

    std::mt19937_64 rng(10);
    std::normal_distribution<double> g;
    std::vector<double> hv(2 * 4 * 3), w(2 * 6);
    for (double& v : hv) v = g(rng);
    for (double& v : w) v = g(rng);
    const ad::ScalarFn f = [&](ad::Tape& t, std::span<const ad::Tensor> x) {
        return ad::sum(ad::mul(pool_streamlines(x[0], 4), t.constant({2, 6}, w)));
    };
    CHECK(ad::grad_check(f, std::vector<ad::GradInput>{{{8, 3}, hv}}).max_relative_error < 1e-6);
}

TEST_CASE("end-to-end embed, pool and loss pass grad_check") {
    std::mt19937_64 rng(11);
    auto cfg = small_config();
    cfg.n_points = 6;
    const auto p = params_for(cfg, 4);
    Tractogram t = resample_tractogram(random_tractogram(rng, 4, 20), 6);
    std::vector<ad::GradInput> in;
    for (const auto& item : p.items()) in.push_back({item.shape, item.value});
    std::normal_distribution<double> g;
    std::vector<double> w(4 * cfg.streamline_dim());
    for (double& v : w) v = g(rng);
    const auto coords = flatten_points(t);
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Tensor> x) {
        const BoundParameters bound(p, std::vector<ad::Tensor>(x.begin(), x.end()));
        const auto z = pool_streamlines(embed_points(tape.constant({24, 3}, coords), bound, cfg), cfg.n_points);
        return ad::mean(ad::huber(ad::mul(z, tape.constant(z.shape(), w)), 1.0));
    };
    CHECK(ad::grad_check(f, in, 3e-6).max_relative_error < 1e-4);
}

TEST_CASE("inference rejects bad input") {
    const auto cfg = small_config();
    auto p = params_for(cfg, 5);
    std::mt19937_64 rng(12);
    const Tractogram t = resampled(rng, 2);
    CHECK_THROWS_AS(embed_streamlines(random_tractogram(rng, 2, 9), p, cfg), GeometryError);
    p.items()[0].value[0] = std::nan("");
    CHECK_THROWS_AS(embed_streamlines(t, p, cfg), std::invalid_argument);
}
