#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "support.hpp"
#include "tractorc/metrics.hpp"

using namespace tractorc;
using namespace testing_support;

namespace {

Tractogram bundle(std::mt19937_64& rng, const Point3& from, const Point3& to, std::size_t count, double jitter) {
    std::normal_distribution<double> g(0.0, jitter);
    Tractogram t;
    for (std::size_t i = 0; i < count; ++i) {
        const Point3 o(g(rng), g(rng), g(rng));
        t.streamlines.push_back(line(from + o, to + o, 14));
    }
    return t;
}

// x-aligned streamlines through voxel centres at lattice cells (j, k)
Tractogram rods(int j0, int j1, int k0, int k1) {
    Tractogram t;
    for (int j = j0; j < j1; ++j)
        for (int k = k0; k < k1; ++k)
            t.streamlines.push_back(line({0.5, 0.5 + j, 0.5 + k}, {9.5, 0.5 + j, 0.5 + k}, 14));
    return t;
}

}  // namespace

TEST_CASE("abd examples") {
    std::mt19937_64 rng(1);
    const Tractogram a = bundle(rng, {0, 0, 0}, {50, 0, 0}, 6, 2.0);
    CHECK(abd(a, a) == 0.0);

    Tractogram s, t;
    s.streamlines.push_back(line({0, 0, 0}, {40, 0, 0}, 14));
    t.streamlines.push_back(line({0, 0, 3}, {40, 0, 3}, 14));
    CHECK(abd(s, t) == doctest::Approx(3.0).epsilon(1e-14));

    for (int i = 0; i < 10; ++i) {
        const Tractogram x = resample_tractogram(random_tractogram(rng, 5, 20), 14);
        const Tractogram y = resample_tractogram(random_tractogram(rng, 8, 20), 14);
        CHECK(abd(x, y) == abd(y, x));
    }
    CHECK_THROWS_AS(abd(Tractogram{}, a), MetricError);
}

TEST_CASE("voxelize examples") {
    const auto empty = voxelize(Tractogram{}, 2.0);
    CHECK(empty.total() == 0.0);

    Tractogram one;
    one.streamlines.push_back(line({0.5, 0.5, 0.5}, {4.5, 0.5, 0.5}, 14));
    const auto g = voxelize(one, 1.0, BoundingBox{{0, 0, 0}, {5.5, 2, 2}});
    CHECK(g.dims == std::array<std::size_t, 3>{6, 3, 3});
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.counts[i] == (i < 5 ? 1.0 : 0.0));

    Tractogram two = one;
    two.streamlines.push_back(one.streamlines[0]);
    const auto g2 = voxelize(two, 1.0, BoundingBox{{0, 0, 0}, {5.5, 2, 2}});
    for (std::size_t i = 0; i < 5; ++i) CHECK(g2.counts[i] == 2.0);
    CHECK(g2.total() == 10.0);
}

TEST_CASE("wdice examples") {
    std::mt19937_64 rng(2);
    const Tractogram a = bundle(rng, {0, 0, 0}, {50, 0, 0}, 6, 2.0);
    CHECK(wdice(a, a) == 1.0);
    const Tractogram far = bundle(rng, {0, 100, 0}, {50, 100, 0}, 6, 2.0);
    CHECK(wdice(a, far) == 0.0);
    CHECK_THROWS_AS(wdice(Tractogram{}, Tractogram{}), MetricError);
}

TEST_CASE("wdice on half-overlapping uniform bundles matches a voxel-loop oracle") {
    const Tractogram a = rods(0, 4, 0, 2), b = rods(2, 6, 0, 2);
    // each rod covers voxels (0..9, j, k); weights are visits over total visits
    std::map<std::tuple<int, int, int>, double> wa, wb;
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 2; ++k)
            for (int x = 0; x < 10; ++x) wa[{x, j, k}] += 1.0 / 80.0;
    for (int j = 2; j < 6; ++j)
        for (int k = 0; k < 2; ++k)
            for (int x = 0; x < 10; ++x) wb[{x, j, k}] += 1.0 / 80.0;
    double inter = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [v, w] : wa) {
        sa += w;
        if (wb.count(v)) inter += w + wb[v];
    }
    for (const auto& [v, w] : wb) sb += w;
    const double oracle = inter / (sa + sb);
    CHECK(oracle == doctest::Approx(0.5));
    CHECK(std::abs(wdice(a, b, 1.0) - oracle) < 1e-12);
    CHECK(wdice(a, b, 1.0) == wdice(b, a, 1.0));
}

TEST_CASE("wdice is symmetric and bounded on random bundles") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 10; ++i) {
        const Tractogram a = bundle(rng, {0, 0, 0}, {40, 10, 0}, 8, 3.0);
        const Tractogram b = bundle(rng, {2, 3, 0}, {40, 8, 5}, 5, 3.0);
        const double w = wdice(a, b);
        CHECK(w == wdice(b, a));
        CHECK((w >= 0.0 && w <= 1.0));
    }
}

TEST_CASE("alpha compactness") {
    Tractogram same;
    for (int i = 0; i < 3; ++i) same.streamlines.push_back(line({0, 0, 0}, {30, 0, 0}, 14));
    for (int i = 0; i < 2; ++i) same.streamlines.push_back(line({0, 9, 0}, {30, 9, 0}, 14));
    CHECK(alpha_compactness(same, std::vector<int>{0, 0, 0, 1, 1}) == 0.0);

    Tractogram pair;
    pair.streamlines.push_back(line({0, 0, 0}, {30, 0, 0}, 14));
    pair.streamlines.push_back(line({0, 4, 0}, {30, 4, 0}, 14));
    CHECK(alpha_compactness(pair, std::vector<int>{0, 0}) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS(alpha_compactness(pair, std::vector<int>{-1, -1}), MetricError);

    std::mt19937_64 rng(4);
    Tractogram two = bundle(rng, {0, 0, 0}, {50, 0, 0}, 10, 1.5);
    const Tractogram other = bundle(rng, {0, 40, 0}, {50, 40, 0}, 10, 1.5);
    two.streamlines.insert(two.streamlines.end(), other.streamlines.begin(), other.streamlines.end());
    std::vector<int> correct(20, 0), merged(20, 0);
    for (int i = 10; i < 20; ++i) correct[static_cast<std::size_t>(i)] = 1;
    const double good = alpha_compactness(two, correct);
    CHECK(alpha_compactness(two, merged) > good);

    const Tractogram moved = apply_affine(two, Affine{rotation(0.4, -0.3, 1.1), Point3(10, -20, 5)});
    CHECK(alpha_compactness(moved, correct) == doctest::Approx(good).epsilon(1e-12));
}

TEST_CASE("wmpg") {
    const std::vector<std::vector<int>> full{{0, 1, 2, 3}, {3, 2, 1, 0, 0}};
    CHECK(wmpg(full, 4, 1) == 1.0);
    const std::vector<std::vector<int>> gap{{0, 1, 2, 3}, {0, 1, 2, 2, -1}};
    CHECK(wmpg(gap, 4, 1) == doctest::Approx(0.875).epsilon(1e-15));

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> lab(-1, 9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<int>> subjects(3);
        for (auto& s : subjects)
            for (int i = 0; i < 12; ++i) s.push_back(lab(rng));
        for (std::size_t min_count : {1u, 2u}) {
            double oracle = 0.0;
            for (const auto& s : subjects) {
                int populated = 0;
                for (int c = 0; c < 10; ++c) {
                    std::size_t n = 0;
                    for (int l : s) n += l == c ? 1 : 0;
                    populated += n >= min_count ? 1 : 0;
                }
                oracle += populated / 10.0;
            }
            CHECK(wmpg(subjects, 10, min_count) == doctest::Approx(oracle / 3.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("adjusted rand index") {
    const std::vector<int> a{0, 0, 0, 1, 1, 1};
    CHECK(adjusted_rand_index(a, a) == 1.0);
    CHECK(adjusted_rand_index(a, std::vector<int>{7, 7, 7, 2, 2, 2}) == 1.0);
    // contingency [[2,1,0],[0,1,2]]: index 2, expected 6*3/15, max (6+3)/2
    CHECK(adjusted_rand_index(a, std::vector<int>{0, 0, 1, 1, 2, 2}) == doctest::Approx(0.8 / 3.3).epsilon(1e-14));
    // rejected entries drop out of both sides
    CHECK(adjusted_rand_index(std::vector<int>{0, 0, 1, 1, 5}, std::vector<int>{3, 3, 4, 4, -1}) == 1.0);
    const std::vector<int> b{0, 0, 1, 1, 2, 2};
    CHECK(adjusted_rand_index(a, b) == adjusted_rand_index(b, a));
}

TEST_CASE("rejection rate") {
    CHECK(rejection_rate(std::vector<int>{0, -1, 2, -1}) == 0.5);
    CHECK(rejection_rate(std::vector<int>{0, 1}) == 0.0);
}
