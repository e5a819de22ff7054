#pragma once

// Point embedding network: per-streamline k-NN graphs and a stack of EdgeConv
// layers producing point embeddings h, pooled to streamline embeddings z.

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "tractorc/autodiff.hpp"
#include "tractorc/config.hpp"
#include "tractorc/geometry.hpp"
#include "tractorc/optim.hpp"

namespace tractorc {

struct EmbeddingConfig {
    std::vector<int> widths{32, 64, 64};
    std::size_t knn_k = 4;
    std::size_t n_points = kDefaultPointCount;
    double leaky_slope = 0.2;
    bool dynamic_graph = true;      // rebuild the graph in feature space after layer 0
    bool absolute_channels = true;  // layer 0 sees x_j as well as x_m - x_j
    double input_scale = 0.05;

    static EmbeddingConfig from_config(const Config& cfg);
    std::size_t point_dim() const { return static_cast<std::size_t>(widths.back()); }
    std::size_t streamline_dim() const { return 2 * point_dim(); }
};

/// Row j lists the k nearest rows to row j (Euclidean, excluding j); ties go
/// to the lower index. `points` is row-major [n, dim].
std::vector<std::size_t> knn_graph(std::span<const double> points, std::size_t n, std::size_t dim, std::size_t k);

/// Glorot-uniform weights, zero biases, registered as embed.layer{i}.{W,b}.
void init_embedding_params(ad::ParameterSet& params, const EmbeddingConfig& cfg, std::mt19937_64& rng);

/// Parameters copied onto a tape. Trainable bindings become variables whose
/// gradients can be read back in ParameterSet order.
class BoundParameters {
public:
    BoundParameters(ad::Tape& tape, const ad::ParameterSet& params, bool trainable);
    /// Binds tensors that already live on a tape, one per entry of `layout`.
    BoundParameters(const ad::ParameterSet& layout, std::vector<ad::Tensor> tensors);

    ad::Tensor operator[](std::string_view name) const;
    std::vector<std::vector<double>> gradients() const;

private:
    const ad::ParameterSet* params_;
    std::vector<ad::Tensor> tensors_;
};

/// One EdgeConv layer. `neighbors` holds k global row indices per row.
/// edge = concat(x_j, x_m - x_j) (or just x_m - x_j when !absolute), then
/// leaky(edge W + b), max over the k edges.
ad::Tensor edgeconv_layer(const ad::Tensor& features, std::span<const std::size_t> neighbors, std::size_t k,
                          const ad::Tensor& weight, const ad::Tensor& bias, double slope, bool absolute = true);

/// coords: [B * n_points, 3] in mm, streamlines contiguous. Returns h with
/// shape [B * n_points, D]. Graphs never cross streamlines.
ad::Tensor embed_points(const ad::Tensor& coords, const BoundParameters& params, const EmbeddingConfig& cfg);

/// [B * n_points, D] -> [B, 2D]: element-wise max concatenated with mean over
/// each streamline's points.
ad::Tensor pool_streamlines(const ad::Tensor& h, std::size_t n_points);

/// Non-differentiable batch inference.
struct PointEmbeddings {
    std::size_t rows = 0;  // total points
    std::size_t dim = 0;
    std::vector<double> values;
};

struct StreamlineEmbeddings {
    std::size_t rows = 0;  // streamlines
    std::size_t dim = 0;
    std::vector<double> values;
};

PointEmbeddings embed_points(const Tractogram& t, const ad::ParameterSet& params, const EmbeddingConfig& cfg);
StreamlineEmbeddings embed_streamlines(const Tractogram& t, const ad::ParameterSet& params, const EmbeddingConfig& cfg);

}  // namespace tractorc
