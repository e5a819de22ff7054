#include "tractorc/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "tractorc/io.hpp"

namespace tractorc {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw ConfigError("");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid value '" + v + "' for key '" + key + "' (expected true/false)");
}

struct Field {
    const char* key;
    std::function<void(Config&, const std::string& key, const std::string& value)> set;
    std::function<std::string(const Config&)> get;
};

Field int_field(const char* key, int Config::*m) {
    return {key, [m](Config& c, const std::string& k, const std::string& v) { c.*m = parse_number<int>(k, v); },
            [m](const Config& c) { return std::to_string(c.*m); }};
}

Field double_field(const char* key, double Config::*m) {
    return {key, [m](Config& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); },
            [m](const Config& c) { return fmt_double(c.*m); }};
}

Field bool_field(const char* key, bool Config::*m) {
    return {key, [m](Config& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
            [m](const Config& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        int_field("keypoints", &Config::keypoints),
        int_field("clusters", &Config::clusters),
        int_field("n_points", &Config::n_points),
        int_field("knn_k", &Config::knn_k),
        {"embed_widths",
         [](Config& c, const std::string& k, const std::string& v) {
             std::vector<int> widths;
             std::stringstream ss(v);
             std::string tok;
             while (std::getline(ss, tok, ',')) widths.push_back(parse_number<int>(k, trim(tok)));
             if (widths.empty()) throw ConfigError("invalid value '" + v + "' for key '" + k + "'");
             c.embed_widths = widths;
         },
         [](const Config& c) {
             std::string s;
             for (std::size_t i = 0; i < c.embed_widths.size(); ++i) s += (i ? "," : "") + std::to_string(c.embed_widths[i]);
             return s;
         }},
        int_field("head_hidden", &Config::head_hidden),
        double_field("leaky_slope", &Config::leaky_slope),
        bool_field("dynamic_graph", &Config::dynamic_graph),
        bool_field("absolute_channels", &Config::absolute_channels),
        double_field("input_scale", &Config::input_scale),
        int_field("pretrain_epochs", &Config::pretrain_epochs),
        double_field("lr", &Config::lr),
        double_field("lr_decay", &Config::lr_decay),
        int_field("lr_decay_every", &Config::lr_decay_every),
        int_field("joint_epochs", &Config::joint_epochs),
        double_field("joint_lr", &Config::joint_lr),
        double_field("weight_decay", &Config::weight_decay),
        double_field("beta1", &Config::beta1),
        double_field("beta2", &Config::beta2),
        double_field("adam_eps", &Config::adam_eps),
        int_field("batch_size", &Config::batch_size),
        {"seed", [](Config& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
         [](const Config& c) { return std::to_string(c.seed); }},
        double_field("huber_delta", &Config::huber_delta),
        double_field("diversity_delta_frac", &Config::diversity_delta_frac),
        bool_field("diversity_folded", &Config::diversity_folded),
        double_field("w_equivariance", &Config::w_equivariance),
        double_field("w_diversity", &Config::w_diversity),
        double_field("w_metric", &Config::w_metric),
        double_field("w_registration", &Config::w_registration),
        double_field("w_kl", &Config::w_kl),
        {"joint_mode",
         [](Config& c, const std::string& k, const std::string& v) {
             if (v == "joint") c.joint_mode = JointMode::joint;
             else if (v == "registration_only") c.joint_mode = JointMode::registration_only;
             else if (v == "clustering_only") c.joint_mode = JointMode::clustering_only;
             else throw ConfigError("invalid value '" + v + "' for key '" + k + "'");
         },
         [](const Config& c) { return to_string(c.joint_mode); }},
        double_field("confidence_thr", &Config::confidence_thr),
        double_field("tps_lambda", &Config::tps_lambda),
        double_field("aug_scale", &Config::aug_scale),
        double_field("aug_rotation_deg", &Config::aug_rotation_deg),
        double_field("aug_translation", &Config::aug_translation),
        double_field("aug_nonlinear_amplitude", &Config::aug_nonlinear_amplitude),
        int_field("aug_grid", &Config::aug_grid),
        int_field("synth_bundles", &Config::synth_bundles),
        int_field("synth_streamlines_per_bundle", &Config::synth_streamlines_per_bundle),
        double_field("synth_jitter", &Config::synth_jitter),
        double_field("synth_spacing", &Config::synth_spacing),
        double_field("synth_length", &Config::synth_length),
    };
    return table;
}

void validate(const Config& c) {
    auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("invalid value for key '" + key + "': " + why); };
    if (c.keypoints < 1) fail("keypoints", "must be >= 1");
    if (c.clusters < 1) fail("clusters", "must be >= 1");
    if (c.n_points < 2) fail("n_points", "must be >= 2");
    if (c.knn_k < 1 || c.knn_k >= c.n_points) fail("knn_k", "must satisfy 1 <= knn_k < n_points");
    for (int w : c.embed_widths) {
        if (w < 1) fail("embed_widths", "widths must be >= 1");
    }
    if (c.head_hidden < 1) fail("head_hidden", "must be >= 1");
    if (c.pretrain_epochs < 0) fail("pretrain_epochs", "must be >= 0");
    if (c.joint_epochs < 0) fail("joint_epochs", "must be >= 0");
    if (!(c.lr > 0)) fail("lr", "must be > 0");
    if (!(c.joint_lr > 0)) fail("joint_lr", "must be > 0");
    if (c.batch_size < 2) fail("batch_size", "must be >= 2");
    if (!(c.huber_delta > 0)) fail("huber_delta", "must be > 0");
    if (c.tps_lambda < 0) fail("tps_lambda", "must be >= 0");
    if (c.aug_grid < 2) fail("aug_grid", "must be >= 2");
    if (c.aug_scale < 0 || c.aug_rotation_deg < 0 || c.aug_translation < 0 || c.aug_nonlinear_amplitude < 0) {
        fail("aug_*", "ranges must be nonnegative");
    }
    if (c.synth_bundles < 1) fail("synth_bundles", "must be >= 1");
    if (c.synth_streamlines_per_bundle < 1) fail("synth_streamlines_per_bundle", "must be >= 1");
    if (c.synth_jitter < 0) fail("synth_jitter", "must be >= 0");
}

}  // namespace

Config Config::desk() {
    Config c;
    c.keypoints = 16;
    c.clusters = 8;
    c.pretrain_epochs = 300;
    c.batch_size = 128;
    return c;
}

std::string to_string(JointMode m) {
    switch (m) {
        case JointMode::joint: return "joint";
        case JointMode::registration_only: return "registration_only";
        case JointMode::clustering_only: return "clustering_only";
    }
    return "joint";
}

Config parse_config(std::string_view text, Config base) {
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        bool found = false;
        for (const auto& f : fields()) {
            if (key == f.key) {
                f.set(base, key, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown key '" + key + "'");
    }
    validate(base);
    return base;
}

Config read_config(const std::filesystem::path& path, Config base) {
    return parse_config(io::read_file(path), std::move(base));
}

std::string dump_config(const Config& c) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.emplace_back(f.key);
    return keys;
}

}  // namespace tractorc
