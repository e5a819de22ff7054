#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tractorc/cli.hpp"
#include "tractorc/clustering.hpp"
#include "tractorc/gradcheck.hpp"
#include "tractorc/io.hpp"
#include "tractorc/metrics.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/tps.hpp"

namespace py = pybind11;
using namespace tractorc;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Dense = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Streamline to_streamline(const Points& p) {
    Streamline s;
    for (Eigen::Index i = 0; i < p.rows(); ++i) s.points.emplace_back(p(i, 0), p(i, 1), p(i, 2));
    return s;
}

Points from_streamline(const Streamline& s) {
    Points p(static_cast<Eigen::Index>(s.size()), 3);
    for (std::size_t i = 0; i < s.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = s.points[i].transpose();
    return p;
}

Tractogram to_tractogram(const std::vector<Points>& v) {
    Tractogram t;
    for (const auto& p : v) t.streamlines.push_back(to_streamline(p));
    return t;
}

std::vector<Points> from_tractogram(const Tractogram& t) {
    std::vector<Points> out;
    for (const auto& s : t.streamlines) out.push_back(from_streamline(s));
    return out;
}

DenseMatrix to_dense(const Dense& m) {
    return DenseMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                       std::vector<double>(m.data(), m.data() + m.size()));
}

Dense from_dense(const DenseMatrix& m) {
    return Eigen::Map<const Dense>(m.values.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Joint tractogram registration and streamline clustering";

    py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
    py::register_exception<TpsError>(m, "TpsError", PyExc_ValueError);
    py::register_exception<io::IoError>(m, "IoError", PyExc_OSError);

    m.def("read_tck", [](const std::string& path) { return from_tractogram(io::read_tck(path)); }, py::arg("path"));
    m.def("write_tck", [](const std::string& path, const std::vector<Points>& t) { io::write_tck(to_tractogram(t), path); },
          py::arg("path"), py::arg("streamlines"));
    m.def("read_labels", [](const std::string& path) { return io::read_labels(path); }, py::arg("path"));

    m.def("resample", [](const Points& s, std::size_t n) { return from_streamline(resample_streamline(to_streamline(s), n)); },
          py::arg("streamline"), py::arg("n") = kDefaultPointCount);
    m.def("mdf", [](const Points& a, const Points& b) { return mdf_distance(to_streamline(a), to_streamline(b)); }, py::arg("a"),
          py::arg("b"));

    m.def(
        "synthetic",
        [](std::size_t bundles, std::size_t per_bundle, std::uint64_t seed) {
            Config cfg;
            cfg.synth_bundles = static_cast<int>(bundles);
            cfg.synth_streamlines_per_bundle = static_cast<int>(per_bundle);
            const SyntheticData d = generate_synthetic(SyntheticSpec::from_config(cfg, seed));
            return py::make_tuple(from_tractogram(d.tractogram), d.labels);
        },
        py::arg("bundles") = 4, py::arg("per_bundle") = 100, py::arg("seed") = 0);

    py::class_<TpsTransform>(m, "TpsTransform")
        .def_property_readonly("affine", [](const TpsTransform& t) { return Eigen::Matrix<double, 3, 4>(t.affine.matrix()); })
        .def_property_readonly("control", [](const TpsTransform& t) { return Points(t.control); })
        .def_property_readonly("warp", [](const TpsTransform& t) { return Points(t.warp); })
        .def("apply", [](const TpsTransform& t, const Points& p) { return Points(t.apply(p)); }, py::arg("points"))
        .def("to_text", &encode_tps)
        .def_static("from_text", [](const std::string& s) { return parse_tps(s); });
    m.def("fit_tps", [](const Points& s, const Points& t, double lambda) { return fit_tps(s, t, lambda); }, py::arg("source"),
          py::arg("target"), py::arg("lam") = 0.0);

    m.def("soft_assign", [](const Dense& z, const Dense& mu) { return from_dense(soft_assign(to_dense(z), to_dense(mu))); },
          py::arg("z"), py::arg("mu"));
    m.def("target_distribution", [](const Dense& q) { return from_dense(target_distribution(to_dense(q)).p); }, py::arg("q"));
    m.def("kl_loss", [](const Dense& p, const Dense& q) { return kl_loss(to_dense(p), to_dense(q)); }, py::arg("p"), py::arg("q"));
    m.def("hard_assign", [](const Dense& q, double thr) { return hard_assign(to_dense(q), thr); }, py::arg("q"),
          py::arg("thr") = 0.4);
    m.def("kmeans", [](const Dense& z, std::size_t k, std::uint64_t seed) { return from_dense(kmeans_init(to_dense(z), k, seed)); },
          py::arg("z"), py::arg("k"), py::arg("seed") = 0);

    m.def("abd", [](const std::vector<Points>& a, const std::vector<Points>& b) { return abd(to_tractogram(a), to_tractogram(b)); },
          py::arg("a"), py::arg("b"));
    m.def(
        "wdice",
        [](const std::vector<Points>& a, const std::vector<Points>& b, double spacing) {
            return wdice(to_tractogram(a), to_tractogram(b), spacing);
        },
        py::arg("a"), py::arg("b"), py::arg("spacing") = kDefaultVoxelSpacing);
    m.def("alpha", [](const std::vector<Points>& t, const std::vector<int>& labels) { return alpha_compactness(to_tractogram(t), labels); },
          py::arg("streamlines"), py::arg("labels"));
    m.def("adjusted_rand_index", [](const std::vector<int>& a, const std::vector<int>& b) { return adjusted_rand_index(a, b); },
          py::arg("a"), py::arg("b"));

    m.def("gradcheck", [](std::uint64_t seed) { return run_gradcheck_battery({.seed = seed}).to_json(); }, py::arg("seed") = 0);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a tractorc command in-process; returns (exit_code, stdout, stderr).");
}
