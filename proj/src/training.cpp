#include "tractorc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "tractorc/embedding.hpp"
#include "tractorc/registration.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/tps.hpp"

namespace tractorc {

using ad::Tape;
using ad::Tensor;

namespace {

constexpr std::uint64_t kPretrainStream = 0x70726574;
constexpr std::uint64_t kJointStream = 0x6a6f696e;
constexpr std::uint64_t kKMeansStream = 0x6b6d6e73;
constexpr std::uint64_t kProbeStream = 0x70726f62;

const ad::NamedArray& record(std::span<const ad::NamedArray> records, const std::string& name) {
    for (const auto& r : records) {
        if (r.name == name) return r;
    }
    throw ad::CheckpointError("checkpoint has no record '" + name + "'");
}

double scalar(std::span<const ad::NamedArray> records, const std::string& name) {
    const auto& r = record(records, name);
    if (r.value.size() != 1) throw ad::CheckpointError("record " + name + " is not a scalar");
    return r.value[0];
}

Tractogram subset(const Tractogram& t, std::span<const std::size_t> idx) {
    Tractogram out;
    out.streamlines.reserve(idx.size());
    for (std::size_t i : idx) out.streamlines.push_back(t.streamlines[i]);
    return out;
}

Tensor points_tensor(Tape& tape, const Tractogram& t) { return tape.constant({t.point_count(), 3}, flatten_points(t)); }

Tensor points_tensor(Tape& tape, const PointMatrix& m) {
    return tape.constant({static_cast<std::size_t>(m.rows()), 3}, std::vector<double>(m.data(), m.data() + m.size()));
}

ad::AdamWConfig adam_config(const Config& cfg) { return {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay}; }

void check_data(std::span<const Tractogram> data, const Config& cfg) {
    if (data.empty()) throw std::invalid_argument("training needs at least one tractogram");
    for (const auto& t : data) {
        if (t.empty()) throw std::invalid_argument("training tractogram has no streamlines");
        for (const auto& s : t.streamlines) {
            if (s.size() != static_cast<std::size_t>(cfg.n_points)) {
                throw std::invalid_argument("training streamlines must be resampled to " + std::to_string(cfg.n_points) +
                                            " points");
            }
        }
    }
}

// Accumulates per-step loss terms into per-epoch means, in first-seen order.
struct EpochLog {
    std::vector<std::pair<std::string, double>> sums;
    std::size_t steps = 0;

    void add(const std::string& name, double v) {
        for (auto& [n, s] : sums) {
            if (n == name) {
                s += v;
                return;
            }
        }
        sums.emplace_back(name, v);
    }
    void flush(std::size_t epoch, const LossSink& sink) const {
        if (!sink) return;
        for (const auto& [n, s] : sums) sink({epoch, n, s / static_cast<double>(steps)});
    }
};

void optimizer_step(TrainState& state, const BoundParameters& bound, const Tensor& total, double lr, const Config& cfg,
                    const char* phase) {
    if (!std::isfinite(total.item())) {
        throw TrainingDiverged(std::string(phase) + " loss is not finite at epoch " + std::to_string(state.epoch), state);
    }
    TrainState before = state;
    try {
        ad::adamw_step(state.model.params, bound.gradients(), state.optimizer, lr, adam_config(cfg));
    } catch (const ad::DivergenceError& e) {
        throw TrainingDiverged(std::string(phase) + ": " + e.what(), std::move(before));
    }
}

DenseMatrix to_dense(const StreamlineEmbeddings& z) { return DenseMatrix(z.rows, z.dim, z.values); }

}  // namespace

// ---- state ----------------------------------------------------------------

TrainState TrainState::initialize(const Config& cfg) {
    TrainState s;
    s.model = Model::initialize(ModelConfig::from_config(cfg), cfg.seed);
    s.optimizer = ad::AdamWState::zeros_like(s.model.params);
    s.seed = cfg.seed;
    return s;
}

std::vector<ad::NamedArray> TrainState::to_records() const {
    std::vector<ad::NamedArray> out = model.to_records();
    const auto& items = model.params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back({"adam.m." + items[i].name, items[i].shape, optimizer.m.at(i)});
        out.push_back({"adam.v." + items[i].name, items[i].shape, optimizer.v.at(i)});
    }
    auto put = [&out](const std::string& name, double v) { out.push_back({"state." + name, {}, {v}}); };
    put("adam_step", static_cast<double>(optimizer.step));
    put("epoch", static_cast<double>(epoch));
    put("phase", static_cast<double>(static_cast<int>(phase)));
    put("seed_lo", static_cast<double>(seed & 0xffffffffULL));
    put("seed_hi", static_cast<double>(seed >> 32));
    put("centroids_initialized", centroids_initialized ? 1.0 : 0.0);
    return out;
}

TrainState TrainState::from_records(std::span<const ad::NamedArray> records) {
    TrainState s;
    s.model = Model::from_records(records);
    bool has_moments = false;
    for (const auto& r : records) has_moments = has_moments || r.name.starts_with("adam.m.");
    s.optimizer = ad::AdamWState::zeros_like(s.model.params);
    if (has_moments) {
        const auto& items = s.model.params.items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& m = record(records, "adam.m." + items[i].name);
            const auto& v = record(records, "adam.v." + items[i].name);
            if (m.value.size() != items[i].value.size() || v.value.size() != items[i].value.size()) {
                throw ad::CheckpointError("optimizer moments for " + items[i].name + " have the wrong size");
            }
            s.optimizer.m[i] = m.value;
            s.optimizer.v[i] = v.value;
        }
        s.optimizer.step = static_cast<std::uint64_t>(scalar(records, "state.adam_step"));
    }
    bool has_state = false;
    for (const auto& r : records) has_state = has_state || r.name == "state.epoch";
    if (has_state) {
        s.epoch = static_cast<std::size_t>(scalar(records, "state.epoch"));
        const double phase = scalar(records, "state.phase");
        if (phase != 0.0 && phase != 1.0) throw ad::CheckpointError("state.phase must be 0 or 1");
        s.phase = phase == 0.0 ? Phase::pretrain : Phase::joint;
        s.seed = static_cast<std::uint64_t>(scalar(records, "state.seed_lo")) |
                 (static_cast<std::uint64_t>(scalar(records, "state.seed_hi")) << 32);
        s.centroids_initialized = scalar(records, "state.centroids_initialized") != 0.0;
    }
    return s;
}

void write_train_state(const std::filesystem::path& path, const TrainState& s) {
    ad::write_checkpoint(path, s.to_records());
}

TrainState read_train_state(const std::filesystem::path& path) {
    return TrainState::from_records(ad::read_checkpoint(path));
}

std::string to_json_line(const LossRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss_name"] = r.loss_name;
    j["value"] = r.value;
    return j.dump();
}

// ---- losses -----------------------------------------------------------------

Tensor metric_alignment_loss(const Tensor& z, const DistanceMatrix& d, double delta) {
    const std::size_t b = z.dim(0);
    if (d.size() != b) {
        throw ad::ShapeError("metric alignment: " + std::to_string(b) + " embeddings but a " + std::to_string(d.size()) +
                             "-row distance matrix");
    }
    Tape& tape = z.tape();
    if (b < 2) return tape.scalar(0.0);
    const Tensor dt = tape.constant({b, b}, std::vector<double>(d.values().begin(), d.values().end()));
    // diagonal entries are huber(0 - 0) = 0
    const Tensor h = ad::huber(ad::sub(ad::pairwise_distance(z), dt), delta);
    return ad::mul_scalar(ad::sum(h), 1.0 / static_cast<double>(b * (b - 1)));
}

double metric_alignment_loss(const DenseMatrix& z, const DistanceMatrix& d, double delta) {
    Tape tape;
    return metric_alignment_loss(tape.constant({z.rows, z.cols}, z.values), d, delta).item();
}

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (count >= n) return idx;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---- pretraining ------------------------------------------------------------

TrainState pretrain(std::span<const Tractogram> data, TrainState state, const Config& cfg, const LossSink& sink) {
    check_data(data, cfg);
    if (state.phase != Phase::pretrain) throw std::invalid_argument("pretrain: state is already in the joint phase");
    const auto& ecfg = state.model.config.embed;
    const std::size_t n = ecfg.n_points;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

    std::vector<BoundingBox> domains;
    for (const auto& t : data) domains.push_back(bounding_box(t));

    while (state.epoch < static_cast<std::size_t>(cfg.pretrain_epochs)) {
        const std::size_t epoch = state.epoch;
        const double lr = ad::lr_schedule(epoch, cfg.lr, cfg.lr_decay, static_cast<std::size_t>(cfg.lr_decay_every));
        EpochLog log;
        for (std::size_t ti = 0; ti < data.size(); ++ti) {
            const std::uint64_t step_seed = derive_seed(derive_seed(state.seed, kPretrainStream, epoch), ti);
            const Tractogram b = subset(data[ti], sample_batch(data[ti].size(), batch, derive_seed(step_seed, 1)));
            const Deformation def = sample_deformation(DeformationSpec::from_config(cfg, domains[ti], derive_seed(step_seed, 2)));
            const double delta = cfg.diversity_delta_frac * domains[ti].diagonal();

            Tape tape;
            const BoundParameters bound(tape, state.model.params, true);
            const Tensor x = points_tensor(tape, b);
            const Tensor xd = points_tensor(tape, def.apply(to_point_matrix(b)));
            const Tensor h = embed_points(x, bound, ecfg);
            const Tensor hd = embed_points(xd, bound, ecfg);
            const Tensor kp = predict_keypoints(h, bound, x, ecfg.leaky_slope).keypoints;
            const Tensor kpd = predict_keypoints(hd, bound, xd, ecfg.leaky_slope).keypoints;

            const Tensor l_eq = equivariance_loss(kpd, kp, def);
            const Tensor l_div = diversity_loss(kp, delta);
            const Tensor l_metric = metric_alignment_loss(pool_streamlines(h, n), pairwise_mdf(b), cfg.huber_delta);

            const Tensor eq = ad::mul_scalar(l_eq, cfg.w_equivariance);
            const Tensor div = ad::mul_scalar(l_div, cfg.w_diversity);
            const Tensor met = ad::mul_scalar(l_metric, cfg.w_metric);
            const Tensor total = cfg.diversity_folded ? ad::mul_scalar(ad::add(ad::add(eq, div), met), 0.5)
                                                      : ad::mul_scalar(ad::add(ad::add(eq, div), met), 1.0 / 3.0);
            tape.backward(total);
            optimizer_step(state, bound, total, lr, cfg, "pretrain");

            log.add("equivariance", l_eq.item());
            log.add("diversity", l_div.item());
            log.add("metric_alignment", l_metric.item());
            log.add("total", total.item());
            ++log.steps;
        }
        ++state.epoch;
        log.flush(epoch, sink);
    }
    return state;
}

// ---- joint training -----------------------------------------------------------

DenseMatrix streamline_embeddings(const Tractogram& t, const Model& model) {
    return to_dense(embed_streamlines(t, model.params, model.config.embed));
}

ClusterResult cluster_tractogram(const Tractogram& t, const Model& model, double thr) {
    const auto& c = model.params.at(kCentroidsName);
    const DenseMatrix mu(c.shape.at(0), c.shape.at(1), c.value);
    ClusterResult r;
    r.q = soft_assign(streamline_embeddings(t, model), mu);
    r.labels = hard_assign(r.q, thr);
    return r;
}

namespace {

// Soft assignments of every streamline of every tractogram, stacked.
DenseMatrix all_assignments(std::span<const Tractogram> data, const Model& model) {
    const auto& c = model.params.at(kCentroidsName);
    const DenseMatrix mu(c.shape.at(0), c.shape.at(1), c.value);
    DenseMatrix q;
    q.cols = mu.rows;
    for (const auto& t : data) {
        const DenseMatrix part = soft_assign(streamline_embeddings(t, model), mu);
        q.values.insert(q.values.end(), part.values.begin(), part.values.end());
        q.rows += part.rows;
    }
    return q;
}

DenseMatrix rows_of(const DenseMatrix& m, std::size_t offset, std::span<const std::size_t> idx) {
    DenseMatrix out(idx.size(), m.cols, std::vector<double>(idx.size() * m.cols));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = m.row(offset + idx[r]);
        std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
    }
    return out;
}

}  // namespace

TrainState joint_train(std::span<const Tractogram> data, TrainState state, const Config& cfg, const LossSink& sink) {
    check_data(data, cfg);
    if (state.phase == Phase::pretrain) {
        state.phase = Phase::joint;
        state.epoch = 0;
        state.optimizer = ad::AdamWState::zeros_like(state.model.params);
    }
    const std::size_t k = state.model.config.clusters;
    if (!state.centroids_initialized) {
        DenseMatrix z;
        for (const auto& t : data) {
            const DenseMatrix part = streamline_embeddings(t, state.model);
            z.cols = part.cols;
            z.rows += part.rows;
            z.values.insert(z.values.end(), part.values.begin(), part.values.end());
        }
        state.model.params.at(kCentroidsName).value = kmeans_init(z, k, derive_seed(state.seed, kKMeansStream)).values;
        state.centroids_initialized = true;
    }

    const auto& ecfg = state.model.config.embed;
    const std::size_t n = ecfg.n_points;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    const bool use_registration = cfg.joint_mode != JointMode::clustering_only;
    const bool use_clustering = cfg.joint_mode != JointMode::registration_only;
    std::vector<std::size_t> offsets;
    std::size_t total_rows = 0;
    for (const auto& t : data) {
        offsets.push_back(total_rows);
        total_rows += t.size();
    }

    while (state.epoch < static_cast<std::size_t>(cfg.joint_epochs)) {
        const std::size_t epoch = state.epoch;
        const double lr = ad::lr_schedule(epoch, cfg.joint_lr, cfg.lr_decay, static_cast<std::size_t>(cfg.lr_decay_every));
        EpochLog log;

        TargetDistribution target;
        if (use_clustering) {
            const DenseMatrix q = all_assignments(data, state.model);
            target = target_distribution(q);
            if (sink) {
                sink({epoch, "kl_all", kl_loss(target.p, q) / static_cast<double>(total_rows)});
                sink({epoch, "dead_clusters", static_cast<double>(target.dead_clusters)});
            }
        }

        for (std::size_t step = 0; step < data.size(); ++step) {
            const std::uint64_t step_seed = derive_seed(derive_seed(state.seed, kJointStream, epoch), step);
            std::mt19937_64 rng(derive_seed(step_seed, 0));
            std::size_t src = step, tgt = step;
            if (data.size() > 1) {
                src = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
                tgt = std::uniform_int_distribution<std::size_t>(0, data.size() - 2)(rng);
                if (tgt >= src) ++tgt;
            }
            const auto src_idx = sample_batch(data[src].size(), batch, derive_seed(step_seed, 1));
            const Tractogram bs = subset(data[src], src_idx);

            Tape tape;
            const BoundParameters bound(tape, state.model.params, true);
            const Tensor xs = points_tensor(tape, bs);
            const Tensor hs = embed_points(xs, bound, ecfg);
            const Tensor zs = pool_streamlines(hs, n);

            std::vector<Tensor> terms;
            if (use_registration) {
                const Tractogram bt = subset(data[tgt], sample_batch(data[tgt].size(), batch, derive_seed(step_seed, 2)));
                const Tensor xt = points_tensor(tape, bt);
                const Tensor kps = predict_keypoints(hs, bound, xs, ecfg.leaky_slope).keypoints;
                const Tensor kpt = predict_keypoints(embed_points(xt, bound, ecfg), bound, xt, ecfg.leaky_slope).keypoints;
                Tensor l_reg;
                try {
                    l_reg = registration_loss(ad::tps_warp(kps, kpt, xs, cfg.tps_lambda), xt, n);
                } catch (const TpsError& e) {
                    throw TrainingDiverged(std::string("joint: degenerate keypoint configuration: ") + e.what(), state);
                }
                log.add("registration", l_reg.item());
                terms.push_back(ad::mul_scalar(l_reg, cfg.w_registration));
            }
            if (use_clustering) {
                const Tensor q = soft_assign(zs, bound[kCentroidsName]);
                const DenseMatrix p = rows_of(target.p, offsets[src], src_idx);
                const Tensor l_kl = kl_loss(p, q);
                log.add("kl", l_kl.item());
                terms.push_back(ad::mul_scalar(l_kl, cfg.w_kl));
            }
            const Tensor l_metric = metric_alignment_loss(zs, pairwise_mdf(bs), cfg.huber_delta);
            log.add("metric_alignment", l_metric.item());
            terms.push_back(ad::mul_scalar(l_metric, cfg.w_metric));

            Tensor total = terms.front();
            for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
            total = ad::mul_scalar(total, 1.0 / static_cast<double>(terms.size()));
            tape.backward(total);
            optimizer_step(state, bound, total, lr, cfg, "joint");
            log.add("total", total.item());
            ++log.steps;
        }
        ++state.epoch;
        log.flush(epoch, sink);
    }
    return state;
}

// ---- monitors -----------------------------------------------------------------

double evaluate_equivariance(const Tractogram& t, const Model& model, const Config& cfg, std::uint64_t seed,
                             std::size_t draws) {
    const BoundingBox domain = bounding_box(t);
    const PointMatrix base = predict_keypoints(t, model);
    double total = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const Deformation def = sample_deformation(DeformationSpec::from_config(cfg, domain, derive_seed(seed, kProbeStream, i)));
        const PointMatrix moved = predict_keypoints(def.apply(t), model);
        total += (moved - def.apply(base)).squaredNorm() / static_cast<double>(base.rows());
    }
    return total / static_cast<double>(draws);
}

double evaluate_kl(std::span<const Tractogram> data, const Model& model) {
    const DenseMatrix q = all_assignments(data, model);
    return kl_loss(target_distribution(q).p, q) / static_cast<double>(q.rows);
}

}  // namespace tractorc
