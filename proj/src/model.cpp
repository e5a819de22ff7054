#include "tractorc/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "tractorc/registration.hpp"
#include "tractorc/synthetic.hpp"

namespace tractorc {

namespace {

const ad::NamedArray& find(std::span<const ad::NamedArray> records, const std::string& name) {
    for (const auto& r : records) {
        if (r.name == name) return r;
    }
    throw ad::CheckpointError("checkpoint has no record '" + name + "'");
}

double meta(std::span<const ad::NamedArray> records, const std::string& name) {
    const auto& r = find(records, "meta." + name);
    if (r.value.size() != 1) throw ad::CheckpointError("record meta." + name + " is not a scalar");
    return r.value[0];
}

}  // namespace

ModelConfig ModelConfig::from_config(const Config& cfg) {
    ModelConfig m;
    m.embed = EmbeddingConfig::from_config(cfg);
    m.keypoints = static_cast<std::size_t>(cfg.keypoints);
    m.head_hidden = static_cast<std::size_t>(cfg.head_hidden);
    m.clusters = static_cast<std::size_t>(cfg.clusters);
    return m;
}

Model Model::initialize(const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.config = cfg;
    std::mt19937_64 rng(derive_seed(seed, 0x696e6974));
    init_embedding_params(m.params, cfg.embed, rng);
    init_keypoint_head(m.params, cfg.embed.point_dim(), cfg.head_hidden, cfg.keypoints, rng);
    m.params.add(kCentroidsName, {cfg.clusters, cfg.embed.streamline_dim()},
                 std::vector<double>(cfg.clusters * cfg.embed.streamline_dim(), 0.0));
    return m;
}

std::vector<ad::NamedArray> Model::to_records() const {
    std::vector<ad::NamedArray> out = params.items();
    auto scalar = [&out](const std::string& name, double v) { out.push_back({"meta." + name, {}, {v}}); };
    const auto& e = config.embed;
    scalar("knn_k", static_cast<double>(e.knn_k));
    scalar("n_points", static_cast<double>(e.n_points));
    scalar("leaky_slope", e.leaky_slope);
    scalar("dynamic_graph", e.dynamic_graph ? 1.0 : 0.0);
    scalar("absolute_channels", e.absolute_channels ? 1.0 : 0.0);
    scalar("input_scale", e.input_scale);
    return out;
}

Model Model::from_records(std::span<const ad::NamedArray> records) {
    Model m;
    auto& e = m.config.embed;
    e.knn_k = static_cast<std::size_t>(meta(records, "knn_k"));
    e.n_points = static_cast<std::size_t>(meta(records, "n_points"));
    e.leaky_slope = meta(records, "leaky_slope");
    e.dynamic_graph = meta(records, "dynamic_graph") != 0.0;
    e.absolute_channels = meta(records, "absolute_channels") != 0.0;
    e.input_scale = meta(records, "input_scale");
    e.widths.clear();
    for (std::size_t l = 0;; ++l) {
        const std::string name = "embed.layer" + std::to_string(l) + ".W";
        bool present = false;
        for (const auto& r : records) present = present || r.name == name;
        if (!present) break;
        const auto& w = find(records, name);
        e.widths.push_back(static_cast<int>(w.shape.at(1)));
        m.params.add(w.name, w.shape, w.value);
        const auto& b = find(records, "embed.layer" + std::to_string(l) + ".b");
        m.params.add(b.name, b.shape, b.value);
    }
    if (e.widths.empty()) throw ad::CheckpointError("checkpoint has no embedding layers");
    for (const char* name : {"head.layer0.W", "head.layer0.b", "head.layer1.W", "head.layer1.b"}) {
        const auto& r = find(records, name);
        m.params.add(r.name, r.shape, r.value);
    }
    m.config.head_hidden = m.params.at("head.layer0.W").shape.at(1);
    m.config.keypoints = m.params.at("head.layer1.W").shape.at(1);
    const auto& c = find(records, kCentroidsName);
    m.params.add(c.name, c.shape, c.value);
    m.config.clusters = c.shape.at(0);
    return m;
}

}  // namespace tractorc
