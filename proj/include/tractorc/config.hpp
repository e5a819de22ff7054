#pragma once

// Hyperparameters. Text format: one `key = value` per line, `#` starts a
// comment. Unknown keys and unparsable values are errors naming the key.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tractorc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class JointMode { joint, registration_only, clustering_only };

struct Config {
    // model
    int keypoints = 128;
    int clusters = 800;
    int n_points = 14;
    int knn_k = 4;
    std::vector<int> embed_widths{32, 64, 64};
    int head_hidden = 64;
    double leaky_slope = 0.2;
    bool dynamic_graph = true;
    bool absolute_channels = true;
    double input_scale = 0.05;  // mm -> network units

    // optimization
    int pretrain_epochs = 4000;
    double lr = 1e-3;
    double lr_decay = 0.1;
    int lr_decay_every = 1000;
    int joint_epochs = 10;
    double joint_lr = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 256;
    std::uint64_t seed = 0;

    // losses
    double huber_delta = 1.0;
    double diversity_delta_frac = 0.05;
    bool diversity_folded = true;
    double w_equivariance = 1.0;
    double w_diversity = 1.0;
    double w_metric = 1.0;
    double w_registration = 1.0;
    double w_kl = 1.0;
    JointMode joint_mode = JointMode::joint;

    // inference
    double confidence_thr = 0.4;
    double tps_lambda = 1e-6;

    // augmentation (G and Phi)
    double aug_scale = 0.05;
    double aug_rotation_deg = 10.0;
    double aug_translation = 5.0;
    double aug_nonlinear_amplitude = 2.0;
    int aug_grid = 3;

    // synthetic data
    int synth_bundles = 4;
    int synth_streamlines_per_bundle = 100;
    double synth_jitter = 1.5;
    double synth_spacing = 30.0;
    double synth_length = 60.0;

    /// Reduced sizes for desk-scale experiments: 16 keypoints, 8 clusters,
    /// 300 pretraining epochs, batches of 128 streamlines.
    static Config desk();

    bool operator==(const Config&) const = default;
};

/// Applies `key = value` lines on top of `base`.
Config parse_config(std::string_view text, Config base = {});
Config read_config(const std::filesystem::path& path, Config base = {});
/// Every key, in a fixed order, such that parse_config(dump_config(c)) == c.
std::string dump_config(const Config& c);
std::vector<std::string> config_keys();

std::string to_string(JointMode m);

}  // namespace tractorc
