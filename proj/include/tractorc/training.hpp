#pragma once

// Two-phase optimization. Pretraining fits keypoint equivariance (with the
// diversity hinge) and embedding metric alignment on randomly deformed
// copies of each tractogram. Joint training initializes centroids with
// k-means and then refines everything with the registration loss on sampled
// tractogram pairs, the KL clustering loss and metric alignment.
//
// Every random draw is derived from (seed, phase, epoch, step), so a state
// saved after epoch e resumes exactly like an uninterrupted run.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tractorc/autodiff.hpp"
#include "tractorc/clustering.hpp"
#include "tractorc/config.hpp"
#include "tractorc/geometry.hpp"
#include "tractorc/model.hpp"
#include "tractorc/optim.hpp"

namespace tractorc {

enum class Phase { pretrain = 0, joint = 1 };

struct TrainState {
    Model model;
    ad::AdamWState optimizer;
    std::size_t epoch = 0;  // completed epochs of the current phase
    Phase phase = Phase::pretrain;
    std::uint64_t seed = 0;
    bool centroids_initialized = false;

    static TrainState initialize(const Config& cfg);

    /// Model records, adam.m.* / adam.v.* moments and state.* scalars.
    std::vector<ad::NamedArray> to_records() const;
    static TrainState from_records(std::span<const ad::NamedArray> records);

    bool operator==(const TrainState&) const = default;
};

void write_train_state(const std::filesystem::path& path, const TrainState& s);
TrainState read_train_state(const std::filesystem::path& path);

struct LossRecord {
    std::size_t epoch = 0;
    std::string loss_name;
    double value = 0.0;

    bool operator==(const LossRecord&) const = default;
};

using LossSink = std::function<void(const LossRecord&)>;

/// {"epoch":..,"loss_name":..,"value":..}
std::string to_json_line(const LossRecord& r);

/// Thrown when a loss or gradient goes non-finite; carries the state from
/// before the failing step.
class TrainingDiverged : public ad::DivergenceError {
public:
    TrainingDiverged(const std::string& what, TrainState last_good)
        : ad::DivergenceError(what), last_good_(std::move(last_good)) {}
    const TrainState& last_good() const { return last_good_; }

private:
    TrainState last_good_;
};

/// sum over ordered pairs i != j of Huber(|z_i - z_j| - d(i, j)) / (B (B - 1));
/// zero for B < 2.
ad::Tensor metric_alignment_loss(const ad::Tensor& z, const DistanceMatrix& d, double delta);
double metric_alignment_loss(const DenseMatrix& z, const DistanceMatrix& d, double delta);

/// Runs pretraining epochs until state.epoch == cfg.pretrain_epochs.
/// Streamlines must already be resampled to cfg.n_points.
TrainState pretrain(std::span<const Tractogram> data, TrainState state, const Config& cfg, const LossSink& sink = {});

/// Switches a pretrained state to the joint phase (fresh optimizer moments,
/// k-means centroids on the current embeddings), then runs epochs until
/// state.epoch == cfg.joint_epochs.
TrainState joint_train(std::span<const Tractogram> data, TrainState state, const Config& cfg,
                       const LossSink& sink = {});

/// Uniform random subset of min(count, N) streamline indices, ascending.
std::vector<std::size_t> sample_batch(std::size_t n, std::size_t count, std::uint64_t seed);

/// Row-stacked streamline embeddings of a whole tractogram.
DenseMatrix streamline_embeddings(const Tractogram& t, const Model& model);

struct ClusterResult {
    DenseMatrix q;
    std::vector<int> labels;
};

ClusterResult cluster_tractogram(const Tractogram& t, const Model& model, double thr);

/// Deterministic monitors evaluated on whole tractograms.
/// Mean over `draws` seeded deformations of mean_a |f(G Phi(T))_a - G Phi(f(T)_a)|^2.
double evaluate_equivariance(const Tractogram& t, const Model& model, const Config& cfg, std::uint64_t seed,
                             std::size_t draws = 4);
/// KL(target(q) || q) per streamline over all streamlines of `data`.
double evaluate_kl(std::span<const Tractogram> data, const Model& model);

}  // namespace tractorc
