#pragma once

// The complete learnable state: embedding EdgeConv stack, keypoint head and
// cluster centroids, plus the structural hyperparameters needed to run it.

#include <cstdint>
#include <span>
#include <vector>

#include "tractorc/config.hpp"
#include "tractorc/embedding.hpp"
#include "tractorc/optim.hpp"

namespace tractorc {

struct ModelConfig {
    EmbeddingConfig embed;
    std::size_t keypoints = 128;
    std::size_t head_hidden = 64;
    std::size_t clusters = 800;

    static ModelConfig from_config(const Config& cfg);
};

inline constexpr const char* kCentroidsName = "cluster.centroids";

struct Model {
    ModelConfig config;
    ad::ParameterSet params;  // embed.*, head.*, cluster.centroids

    /// Seeded Glorot init; centroids start at zero until k-means init.
    static Model initialize(const ModelConfig& cfg, std::uint64_t seed);

    /// Parameter records plus `meta.*` scalars describing the structure.
    std::vector<ad::NamedArray> to_records() const;
    /// Rebuilds a model from records written by to_records (extra records
    /// such as optimizer moments are ignored).
    static Model from_records(std::span<const ad::NamedArray> records);

    bool operator==(const Model& o) const { return params == o.params; }
};

}  // namespace tractorc
