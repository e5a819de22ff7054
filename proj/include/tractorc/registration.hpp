#pragma once

// Registration branch: probabilistic keypoints (expectations of input points
// under per-keypoint softmax distributions over points), TPS fit between
// corresponding keypoint sets, and the registration / equivariance /
// diversity losses.

#include <random>
#include <utility>

#include "tractorc/autodiff.hpp"
#include "tractorc/embedding.hpp"
#include "tractorc/model.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/tps.hpp"

namespace tractorc {

/// head.layer0.{W,b}: D -> hidden, head.layer1.{W,b}: hidden -> keypoints.
void init_keypoint_head(ad::ParameterSet& params, std::size_t in_dim, std::size_t hidden, std::size_t keypoints,
                        std::mt19937_64& rng);

struct KeypointTensors {
    ad::Tensor weights;    // pi, [M, A]; each column sums to 1
    ad::Tensor keypoints;  // [A, 3]
};

/// Per-point logits from the head, softmax across the point axis, then
/// p_a = sum_i pi_ia x_i.
KeypointTensors predict_keypoints(const ad::Tensor& h, const BoundParameters& params, const ad::Tensor& coords,
                                  double slope);

/// Keypoints straight from logits, exposed for tests of the expectation form.
KeypointTensors keypoints_from_logits(const ad::Tensor& logits, const ad::Tensor& coords);

/// Symmetric nearest-neighbour MDF loss between two sets of `n_points`-point
/// streamlines stored as [N * n_points, 3]:
///   mean_i min_j d(w_i, t_j) + mean_j min_i d(w_i, t_j)
/// Subgradient through the selected pair and orientation (ties: lowest index,
/// direct before flipped).
ad::Tensor registration_loss(const ad::Tensor& warped, const ad::Tensor& target, std::size_t n_points);
double registration_loss(const Tractogram& warped, const Tractogram& target);

/// Applies G(Phi(.)) to [A, 3] keypoints, differentiably in the keypoints.
ad::Tensor deform_keypoints(const ad::Tensor& keypoints, const Deformation& d);

/// Mean over keypoints of |f(G Phi(T))_a - G Phi(f(T)_a)|^2.
ad::Tensor equivariance_loss(const ad::Tensor& keypoints_of_transformed, const ad::Tensor& keypoints_of_original,
                             const Deformation& d);

/// sum_{a<b} max(0, delta - |p_a - p_b|)^2 / (A (A - 1) / 2)
ad::Tensor diversity_loss(const ad::Tensor& keypoints, double delta);

/// Non-differentiable keypoints of a whole tractogram.
PointMatrix predict_keypoints(const Tractogram& t, const Model& model);

struct RegistrationResult {
    Tractogram warped;
    TpsTransform transform;
    PointMatrix source_keypoints;
    PointMatrix target_keypoints;
};

/// Keypoints on both tractograms with the shared head, TPS fit from source to
/// target keypoints by index, applied to the source.
RegistrationResult register_tractograms(const Tractogram& source, const Tractogram& target, const Model& model,
                                        double lambda);

}  // namespace tractorc
