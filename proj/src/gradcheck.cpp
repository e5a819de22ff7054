#include "tractorc/gradcheck.hpp"

#include <functional>

#include <json.hpp>

#include "tractorc/clustering.hpp"
#include "tractorc/config.hpp"
#include "tractorc/model.hpp"
#include "tractorc/registration.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/training.hpp"

namespace tractorc {

using ad::Tape;
using ad::Tensor;

namespace {

struct Instance {
    Config cfg;
    Model model;
    Tractogram source;
    Tractogram target;
    Deformation deformation;
    DistanceMatrix source_mdf;
    DenseMatrix target_p;  // constant KL target for the source streamlines
    double delta = 0.0;
};

Instance make_instance(const GradCheckOptions& o) {
    Instance in;
    Config& cfg = in.cfg;
    cfg = Config::desk();
    cfg.seed = o.seed;
    cfg.keypoints = static_cast<int>(o.keypoints);
    cfg.clusters = static_cast<int>(o.clusters);
    cfg.embed_widths = o.embed_widths;
    cfg.head_hidden = o.head_hidden;
    cfg.synth_bundles = 2;
    cfg.synth_streamlines_per_bundle = static_cast<int>((o.streamlines + 1) / 2);

    auto take = [&o](Tractogram t) {
        t.streamlines.resize(std::min(t.size(), o.streamlines));
        t.labels.reset();
        return t;
    };
    in.target = take(generate_synthetic(SyntheticSpec::from_config(cfg, derive_seed(o.seed, 1))).tractogram);
    const Tractogram other = take(generate_synthetic(SyntheticSpec::from_config(cfg, derive_seed(o.seed, 2))).tractogram);
    const BoundingBox box = bounding_box(other);
    in.source = sample_deformation(DeformationSpec::from_config(cfg, box, derive_seed(o.seed, 3))).apply(other);
    in.deformation = sample_deformation(DeformationSpec::from_config(cfg, bounding_box(in.source), derive_seed(o.seed, 4)));
    in.source_mdf = pairwise_mdf(in.source);
    in.delta = cfg.diversity_delta_frac * bounding_box(in.source).diagonal();

    in.model = Model::initialize(ModelConfig::from_config(cfg), o.seed);
    const DenseMatrix z = streamline_embeddings(in.source, in.model);
    const DenseMatrix mu = kmeans_init(z, o.clusters, o.seed);
    in.model.params.at(kCentroidsName).value = mu.values;
    in.target_p = target_distribution(soft_assign(z, mu)).p;
    return in;
}

using LossFn = std::function<Tensor(const Instance&, Tape&, const BoundParameters&)>;

Tensor points(Tape& tape, const Tractogram& t) { return tape.constant({t.point_count(), 3}, flatten_points(t)); }

Tensor keypoints_of(const Instance& in, const BoundParameters& p, const Tensor& x) {
    const auto& e = in.model.config.embed;
    return predict_keypoints(embed_points(x, p, e), p, x, e.leaky_slope).keypoints;
}

Tensor equivariance(const Instance& in, Tape& tape, const BoundParameters& p) {
    const Tensor x = points(tape, in.source);
    const Tensor xd = points(tape, in.deformation.apply(in.source));
    return equivariance_loss(keypoints_of(in, p, xd), keypoints_of(in, p, x), in.deformation);
}

Tensor diversity(const Instance& in, Tape& tape, const BoundParameters& p) {
    return diversity_loss(keypoints_of(in, p, points(tape, in.source)), in.delta);
}

Tensor source_embeddings(const Instance& in, Tape& tape, const BoundParameters& p) {
    const auto& e = in.model.config.embed;
    return pool_streamlines(embed_points(points(tape, in.source), p, e), e.n_points);
}

Tensor metric(const Instance& in, Tape& tape, const BoundParameters& p) {
    return metric_alignment_loss(source_embeddings(in, tape, p), in.source_mdf, in.cfg.huber_delta);
}

Tensor registration(const Instance& in, Tape& tape, const BoundParameters& p) {
    const Tensor xs = points(tape, in.source);
    const Tensor xt = points(tape, in.target);
    const Tensor warped = ad::tps_warp(keypoints_of(in, p, xs), keypoints_of(in, p, xt), xs, in.cfg.tps_lambda);
    return registration_loss(warped, xt, in.model.config.embed.n_points);
}

Tensor kl(const Instance& in, Tape& tape, const BoundParameters& p) {
    return kl_loss(in.target_p, soft_assign(source_embeddings(in, tape, p), p[kCentroidsName]));
}

Tensor pretrain_total(const Instance& in, Tape& tape, const BoundParameters& p) {
    const Tensor reg = ad::add(equivariance(in, tape, p), diversity(in, tape, p));
    return ad::mul_scalar(ad::add(reg, metric(in, tape, p)), 0.5);
}

Tensor joint_total(const Instance& in, Tape& tape, const BoundParameters& p) {
    const Tensor sum = ad::add(ad::add(registration(in, tape, p), kl(in, tape, p)), metric(in, tape, p));
    return ad::mul_scalar(sum, 1.0 / 3.0);
}

}  // namespace

bool GradCheckReport::passed() const {
    for (const auto& c : cases) {
        if (!c.passed) return false;
    }
    return !cases.empty();
}

std::string GradCheckReport::to_json() const {
    nlohmann::ordered_json j;
    j["tolerance"] = tolerance;
    j["passed"] = passed();
    j["streamlines"] = streamlines;
    j["keypoints"] = keypoints;
    j["clusters"] = clusters;
    j["cases"] = nlohmann::ordered_json::array();
    for (const auto& c : cases) {
        nlohmann::ordered_json e;
        e["loss"] = c.loss;
        e["max_relative_error"] = c.result.max_relative_error;
        e["worst_parameter"] = c.worst_parameter;
        e["worst_index"] = c.result.worst_index;
        e["analytic"] = c.result.analytic;
        e["numeric"] = c.result.numeric;
        e["coordinates"] = c.coordinates;
        e["passed"] = c.passed;
        j["cases"].push_back(e);
    }
    return j.dump(2);
}

GradCheckReport run_gradcheck_battery(const GradCheckOptions& opts) {
    const Instance in = make_instance(opts);
    std::vector<ad::GradInput> inputs;
    for (const auto& p : in.model.params.items()) inputs.push_back({p.shape, p.value});

    const std::vector<std::pair<std::string, LossFn>> losses = {
        {"equivariance", equivariance}, {"diversity", diversity},           {"metric_alignment", metric},
        {"registration", registration}, {"kl", kl},                         {"pretrain_total", pretrain_total},
        {"joint_total", joint_total},
    };

    GradCheckReport report;
    report.streamlines = in.source.size();
    report.keypoints = opts.keypoints;
    report.clusters = opts.clusters;
    for (const auto& [name, fn] : losses) {
        const ad::ScalarFn f = [&in, fn = fn](Tape& tape, std::span<const Tensor> ts) {
            const BoundParameters p(in.model.params, std::vector<Tensor>(ts.begin(), ts.end()));
            return fn(in, tape, p);
        };
        GradCheckCase c;
        c.loss = name;
        c.result = ad::grad_check(f, inputs, opts.eps, opts.floor);
        c.worst_parameter = in.model.params.items().at(c.result.worst_input).name;
        c.coordinates = in.model.params.scalar_count();
        c.passed = c.result.max_relative_error < report.tolerance;
        report.cases.push_back(std::move(c));
    }
    return report;
}

}  // namespace tractorc
