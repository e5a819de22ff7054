#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include "support.hpp"
#include "tractorc/config.hpp"
#include "tractorc/io.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/tps.hpp"

using namespace tractorc;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "tractorc_test_io";
    fs::create_directories(dir);
    return dir / name;
}

void put_floats(std::string& s, std::initializer_list<float> v) {
    for (float f : v) {
        char b[4];
        std::memcpy(b, &f, 4);
        s.append(b, 4);
    }
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

constexpr float kNan = std::numeric_limits<float>::quiet_NaN();
constexpr float kInf = std::numeric_limits<float>::infinity();

std::size_t tck_error_offset(const std::string& bytes) {
    try {
        io::parse_tck(bytes);
    } catch (const io::TckError& e) {
        return e.byte_offset();
    }
    FAIL("expected a TckError");
    return 0;
}

}  // namespace

TEST_CASE("tck: one streamline of two points round-trips through a file") {
    Tractogram t;
    t.streamlines = {line({0, 0, 0}, {1, 2, 3}, 2)};
    const fs::path p = scratch("one.tck");
    io::write_tck(t, p);
    const Tractogram r = io::read_tck(p);
    REQUIRE(r.size() == 1);
    CHECK(r.streamlines[0].size() == 2);
    CHECK(r.streamlines[0].points[1] == Point3(1, 2, 3));
}

TEST_CASE("tck: empty tractogram is a valid file with count 0") {
    const std::string bytes = io::encode_tck(Tractogram{});
    CHECK(bytes.find("count: 0\n") != std::string::npos);
    CHECK(io::parse_tck(bytes).size() == 0);
}

TEST_CASE("tck: hand-built stream with terminator straight after the header") {
    std::string s = "mrtrix tracks\ndatatype: Float32LE\ncount: 0\nEND\n";
    put_floats(s, {kInf, kInf, kInf});
    CHECK(io::parse_tck(s).empty());
}

TEST_CASE("tck: header layout and file offset") {
    Tractogram t;
    t.streamlines = {line({0, 0, 0}, {1, 0, 0}, 3), line({0, 1, 0}, {1, 1, 0}, 4)};
    const std::string bytes = io::encode_tck(t);
    CHECK(bytes.rfind("mrtrix tracks\n", 0) == 0);
    CHECK(bytes.find("datatype: Float32LE\n") != std::string::npos);
    CHECK(bytes.find("count: 2\n") != std::string::npos);
    const auto at = bytes.find("file: . ");
    REQUIRE(at != std::string::npos);
    const std::size_t offset = std::stoul(bytes.substr(at + 8));
    const std::size_t end = bytes.find("END\n");
    CHECK(offset == end + 4);
    // 7 points, 2 separators, 1 terminator
    CHECK(bytes.size() == offset + 12 * 10);
    float last[3];
    std::memcpy(last, bytes.data() + bytes.size() - 12, 12);
    CHECK(std::isinf(last[0]));
    float sep[3];
    std::memcpy(sep, bytes.data() + offset + 12 * 3, 12);
    CHECK(std::isnan(sep[0]));
}

TEST_CASE("tck: random 100-streamline round trip is bit-exact at float32") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> len(2, 40);
    Tractogram t;
    for (int i = 0; i < 100; ++i) t.streamlines.push_back(random_streamline(rng, static_cast<std::size_t>(len(rng)), 80.0));
    const Tractogram r = io::parse_tck(io::encode_tck(t));
    REQUIRE(r.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        REQUIRE(r.streamlines[i].size() == t.streamlines[i].size());
        for (std::size_t k = 0; k < t.streamlines[i].size(); ++k) {
            for (int a = 0; a < 3; ++a) CHECK(r.streamlines[i].points[k][a] == f32(t.streamlines[i].points[k][a]));
        }
    }
    // and a second pass is the identity on the bytes
    CHECK(io::encode_tck(r) == io::encode_tck(t));
}

TEST_CASE("tck: malformed inputs give distinct errors with byte offsets") {
    std::string no_end = "mrtrix tracks\ndatatype: Float32LE\ncount: 0\n";
    CHECK_THROWS_WITH_AS(io::parse_tck(no_end), doctest::Contains("END"), io::TckError);

    std::string f64 = "mrtrix tracks\ndatatype: Float64LE\nEND\n";
    CHECK_THROWS_WITH_AS(io::parse_tck(f64), doctest::Contains("datatype"), io::TckError);

    const std::string head = "mrtrix tracks\ndatatype: Float32LE\nEND\n";
    std::string truncated = head;
    put_floats(truncated, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(io::parse_tck(truncated), doctest::Contains("truncated"), io::TckError);
    CHECK(tck_error_offset(truncated) == head.size() + 12);

    std::string unterminated = head;
    put_floats(unterminated, {1, 2, 3, 4, 5, 6, kNan, kNan, kNan});
    CHECK_THROWS_WITH_AS(io::parse_tck(unterminated), doctest::Contains("terminator"), io::TckError);
    CHECK(tck_error_offset(unterminated) == unterminated.size());

    CHECK_THROWS_AS(io::parse_tck("not a tck\nEND\n"), io::TckError);
    CHECK_THROWS_AS(io::read_tck(scratch("does-not-exist.tck")), io::IoError);
}

TEST_CASE("tck: writer rejects single-point and non-finite streamlines") {
    Tractogram t;
    Streamline s;
    s.points = {{0, 0, 0}};
    t.streamlines = {s};
    CHECK_THROWS_AS(io::encode_tck(t), io::IoError);
    t.streamlines = {line({0, 0, 0}, {1, 0, 0}, 3)};
    t.streamlines[0].points[1].x() = std::nan("");
    CHECK_THROWS_AS(io::encode_tck(t), io::IoError);
}

TEST_CASE("labels: examples") {
    CHECK(io::encode_labels({0, 1, -1}) == "0\n1\n-1\n");
    CHECK(io::parse_labels("0\n1\n-1\n") == std::vector<int>{0, 1, -1});
    CHECK(io::encode_labels({}).empty());
    CHECK(io::parse_labels("").empty());
    const fs::path p = scratch("l.txt");
    io::write_labels({3, -1, 2}, p);
    CHECK(io::read_labels(p) == std::vector<int>{3, -1, 2});
}

TEST_CASE("labels: 10^4 random labels round-trip") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> d(-1, 799);
    std::vector<int> v(10000);
    for (int& x : v) x = d(rng);
    CHECK(io::parse_labels(io::encode_labels(v)) == v);
}

TEST_CASE("labels: a bad line is reported with its number") {
    try {
        io::parse_labels("1\n2\nthree\n4\n");
        FAIL("expected a LabelError");
    } catch (const io::LabelError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(io::parse_labels("1.5\n"), io::LabelError);
}

TEST_CASE("atomic writes leave no temporary behind") {
    const fs::path p = scratch("atomic.txt");
    io::write_file_atomic(p, "abc");
    CHECK(io::read_file(p) == "abc");
    CHECK_FALSE(fs::exists(fs::path(p.string() + ".tmp")));
    CHECK_THROWS_AS(io::write_file_atomic(scratch("no-such-dir") / "x" / "y.txt", "z"), io::IoError);
}

TEST_CASE("config: defaults, overrides and the dump/parse round trip") {
    const Config d = parse_config("");
    CHECK(d == Config{});
    CHECK(d.keypoints == 128);
    CHECK(d.clusters == 800);
    CHECK(d.n_points == 14);
    CHECK(d.knn_k == 4);
    CHECK(d.pretrain_epochs == 4000);
    CHECK(d.lr == 1e-3);
    CHECK(d.lr_decay == 0.1);
    CHECK(d.lr_decay_every == 1000);
    CHECK(d.joint_epochs == 10);
    CHECK(d.joint_lr == 1e-4);
    CHECK(d.confidence_thr == 0.4);

    const Config c = parse_config("# comment\nclusters = 8\n");
    CHECK(c.clusters == 8);
    CHECK(c.keypoints == 128);

    Config odd = Config::desk();
    odd.lr = 0.1 + 0.2;
    odd.embed_widths = {5, 7};
    odd.joint_mode = JointMode::clustering_only;
    odd.seed = 0xFFFFFFFFFFFFFFFFull;
    odd.dynamic_graph = false;
    CHECK(parse_config(dump_config(odd)) == odd);
    CHECK(parse_config(dump_config(Config{})) == Config{});
}

TEST_CASE("config: unknown keys and bad values name the key") {
    CHECK_THROWS_WITH_AS(parse_config("clustres = 3\n"), doctest::Contains("clustres"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("clusters = many\n"), doctest::Contains("clusters"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("lr = 1e-3x\n"), doctest::Contains("lr"), ConfigError);
}

TEST_CASE("synthetic: one bundle without jitter repeats the prototype") {
    Config cfg;
    cfg.synth_bundles = 1;
    SyntheticSpec spec = SyntheticSpec::from_config(cfg, 5);
    spec.jitter_sigma = 0.0;
    spec.streamlines_per_bundle = 10;
    const SyntheticData d = generate_synthetic(spec);
    Streamline proto;
    proto.points = spec.prototype_control_points[0];
    const Streamline ref = resample_streamline(proto, 14);
    for (const auto& s : d.tractogram.streamlines) {
        CHECK(mdf_distance(s, d.tractogram.streamlines[0]) == 0.0);
        CHECK(mdf_distance(s, ref) < 0.05);
    }
}

TEST_CASE("synthetic: well separated bundles are cleanly bimodal under MDF") {
    Config cfg;
    cfg.synth_bundles = 2;
    cfg.synth_streamlines_per_bundle = 30;
    const SyntheticData d = generate_synthetic(SyntheticSpec::from_config(cfg, 9));
    const DistanceMatrix m = pairwise_mdf(d.tractogram);
    double intra = 0.0, inter = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (i == j) continue;
            if (d.labels[i] == d.labels[j]) intra = std::max(intra, m(i, j));
            else inter = std::min(inter, m(i, j));
        }
    }
    CHECK(intra < inter);
    CHECK(std::set<int>(d.labels.begin(), d.labels.end()) == std::set<int>{0, 1});
}

TEST_CASE("synthetic: pure function of the seed") {
    const Config cfg = Config::desk();
    const SyntheticData a = generate_synthetic(SyntheticSpec::from_config(cfg, 3));
    const SyntheticData b = generate_synthetic(SyntheticSpec::from_config(cfg, 3));
    const SyntheticData c = generate_synthetic(SyntheticSpec::from_config(cfg, 4));
    CHECK(io::encode_tck(a.tractogram) == io::encode_tck(b.tractogram));
    CHECK(a.labels == b.labels);
    CHECK(io::encode_tck(a.tractogram) != io::encode_tck(c.tractogram));
    CHECK(a.tractogram.size() == 400);
    for (const auto& s : a.tractogram.streamlines) CHECK(s.size() == 14);
}

TEST_CASE("deformation: zero ranges give the identity") {
    DeformationSpec spec;
    spec.domain = {Point3(-50, -50, -50), Point3(50, 50, 50)};
    spec.seed = 12;
    const Deformation d = sample_deformation(spec);
    std::mt19937_64 rng(1);
    const Tractogram t = random_tractogram(rng, 20, 14);
    const Tractogram r = d.apply(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t k = 0; k < 14; ++k) CHECK((r.streamlines[i].points[k] - t.streamlines[i].points[k]).norm() <= 1e-12);
    }
}

TEST_CASE("deformation: translation-only range gives a pure translation") {
    DeformationSpec spec;
    spec.translation_range = 5.0;
    spec.domain = {Point3(-50, -50, -50), Point3(50, 50, 50)};
    spec.seed = 2;
    const Deformation d = sample_deformation(spec);
    CHECK(d.affine.linear == Eigen::Matrix3d::Identity());
    CHECK(d.affine.translation.norm() > 0.0);
    CHECK(d.affine.translation.cwiseAbs().maxCoeff() <= 5.0);
    for (const Point3& p : {Point3(1, 2, 3), Point3(-40, 10, 7)}) {
        CHECK((d.warp(p) - p).norm() <= 1e-12);
        CHECK((d(p) - (p + d.affine.translation)).norm() <= 1e-12);
    }
}

TEST_CASE("deformation: deterministic in the seed") {
    const Config cfg;
    const BoundingBox box{Point3(-40, -30, -20), Point3(40, 30, 20)};
    const Deformation a = sample_deformation(DeformationSpec::from_config(cfg, box, 7));
    const Deformation b = sample_deformation(DeformationSpec::from_config(cfg, box, 7));
    const Deformation c = sample_deformation(DeformationSpec::from_config(cfg, box, 8));
    const Point3 p(3, -4, 5);
    CHECK(a(p) == b(p));
    CHECK(a(p) != c(p));
}

TEST_CASE("deformation: a small warp is undone by a reverse TPS fitted on point pairs") {
    DeformationSpec spec;
    spec.nonlinear_amplitude = 1.0;
    spec.nonlinear_grid = 3;
    spec.domain = {Point3(-40, -40, -40), Point3(40, 40, 40)};
    spec.seed = 31;
    const Deformation d = sample_deformation(spec);

    // reverse fit on a 9^3 lattice, checked on random interior points
    PointMatrix src(729, 3), dst(729, 3);
    int r = 0;
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            for (int k = 0; k < 9; ++k, ++r) {
                const Point3 p = Point3(i, j, k) * 10.0 - Point3(40, 40, 40);
                dst.row(r) = p.transpose();
                src.row(r) = d(p).transpose();
            }
        }
    }
    const TpsTransform inverse = fit_tps(src, dst, 0.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-35.0, 35.0);
    double worst = 0.0, moved = 0.0;
    for (int n = 0; n < 200; ++n) {
        const Point3 p(u(rng), u(rng), u(rng));
        worst = std::max(worst, (inverse(d(p)) - p).norm());
        moved = std::max(moved, (d(p) - p).norm());
    }
    CHECK(moved > 0.2 * spec.nonlinear_amplitude);
    CHECK(worst < 0.05 * spec.nonlinear_amplitude);
}
