#include "tractorc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "tractorc/clustering.hpp"
#include "tractorc/config.hpp"
#include "tractorc/gradcheck.hpp"
#include "tractorc/io.hpp"
#include "tractorc/metrics.hpp"
#include "tractorc/registration.hpp"
#include "tractorc/synthetic.hpp"
#include "tractorc/training.hpp"

namespace tractorc {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Streamlines that already have n points are kept as stored; arc-length
// resampling is not idempotent on polylines, so re-resampling would move them.
Tractogram load_tractogram(const fs::path& path, std::size_t n) {
    Tractogram t = io::read_tck(path);
    for (auto& s : t.streamlines) {
        if (s.size() != n) s = resample_streamline(s, n);
    }
    return t;
}

constexpr std::uint64_t kSubjectStream = 0x7375626a;
constexpr std::uint64_t kDeformStream = 0x64656672;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InternalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string preset = "default";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
};

Config load_config(const Globals& g, const std::string& path) {
    Config base;
    if (g.preset == "desk") base = Config::desk();
    else if (g.preset != "default") throw ConfigError("unknown preset '" + g.preset + "' (expected default or desk)");
    Config cfg = path.empty() ? base : read_config(path, base);
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

std::vector<Tractogram> load_dir(const fs::path& dir, const Config& cfg, std::ostream& err) {
    if (!fs::is_directory(dir)) throw io::IoError("data directory not found: " + dir.string());
    std::vector<Tractogram> data;
    for (const auto& p : io::list_tck(dir)) {
        data.push_back(load_tractogram(p, static_cast<std::size_t>(cfg.n_points)));
        err << "loaded " << p.filename().string() << " (" << data.back().size() << " streamlines)\n";
    }
    if (data.empty()) throw io::IoError("no .tck files in " + dir.string());
    for (const auto& t : data) {
        if (t.empty()) throw io::IoError("tractogram without streamlines in " + dir.string());
    }
    return data;
}

// Collects loss records for the NDJSON log and echoes epoch totals.
struct LossLog {
    std::ostream& err;
    std::string text;

    LossSink sink() {
        return [this](const LossRecord& r) {
            text += to_json_line(r) + "\n";
            if (r.loss_name == "total") {
                err << "epoch " << r.epoch << " total " << std::setprecision(6) << r.value << "\n";
            }
        };
    }
};

fs::path default_log(const fs::path& out) { return fs::path(out.string() + ".losses.ndjson"); }

template <typename Run>
int train_command(const std::string& what, const fs::path& out, const std::string& log_path, std::ostream& err,
                  Run&& run) {
    LossLog log{err, {}};
    try {
        const TrainState s = run(log.sink());
        write_train_state(out, s);
    } catch (const TrainingDiverged& e) {
        const fs::path keep(out.string() + ".last_good");
        write_train_state(keep, e.last_good());
        io::write_file_atomic(log_path.empty() ? default_log(out) : fs::path(log_path), log.text);
        throw InternalFailure(what + " diverged: " + e.what() + "; last good state written to " + keep.string());
    }
    io::write_file_atomic(log_path.empty() ? default_log(out) : fs::path(log_path), log.text);
    err << what << " finished, checkpoint " << out.string() << "\n";
    return kExitOk;
}

json metric(double value, const std::string& id, json params) {
    json j;
    j["value"] = value;
    j["definition_id"] = id;
    j["parameters"] = std::move(params);
    return j;
}

int max_label(const std::vector<std::vector<int>>& sets) {
    int m = -1;
    for (const auto& s : sets) {
        for (int l : s) m = std::max(m, l);
    }
    return m;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"tractorc: joint tractogram registration and streamline clustering"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all");
    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random draw (overrides the config)");
    app.add_option("--threads", g.threads, "Worker threads; 0 = hardware concurrency, 1 = sequential");
    app.add_option("--preset", g.preset, "Base configuration: default or desk")->check(CLI::IsMember({"default", "desk"}));

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic tractogram with ground-truth labels");
    std::string synth_spec, synth_out, synth_labels;
    std::size_t subject = 0;
    bool deform = false;
    synth->add_option("--spec", synth_spec, "Config file with synth_* keys");
    synth->add_option("--out", synth_out, "Output .tck")->required();
    synth->add_option("--labels", synth_labels, "Output label file");
    synth->add_option("--subject", subject, "Subject index, for several tractograms from one seed");
    synth->add_flag("--deform", deform, "Apply a random affine + TPS deformation");

    // pretrain / train
    std::string data_dir, cfg_path, ckpt_out, log_path, resume, init;
    std::optional<int> epochs;
    std::string mode;
    auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
    pre->add_option("--data", data_dir, "Directory of .tck files")->required();
    pre->add_option("--config", cfg_path, "Config file");
    pre->add_option("--out", ckpt_out, "Output checkpoint")->required();
    pre->add_option("--epochs", epochs, "Override pretrain_epochs");
    pre->add_option("--log", log_path, "Loss log (NDJSON); default <out>.losses.ndjson");
    pre->add_option("--resume", resume, "Continue from a pretraining checkpoint");

    auto* train = app.add_subcommand("train", "Joint registration + clustering training");
    train->add_option("--data", data_dir, "Directory of .tck files")->required();
    train->add_option("--init", init, "Pretrained (or joint) checkpoint")->required();
    train->add_option("--config", cfg_path, "Config file");
    train->add_option("--out", ckpt_out, "Output checkpoint")->required();
    train->add_option("--epochs", epochs, "Override joint_epochs");
    train->add_option("--log", log_path, "Loss log (NDJSON); default <out>.losses.ndjson");
    train->add_option("--mode", mode, "Override joint_mode")
        ->check(CLI::IsMember({"joint", "registration_only", "clustering_only"}));

    // register
    auto* reg = app.add_subcommand("register", "Warp a source tractogram into a target's space");
    std::string src_path, tgt_path, ckpt_path, reg_out, transform_out;
    std::optional<double> lambda;
    reg->add_option("--source", src_path, "Source .tck")->required();
    reg->add_option("--target", tgt_path, "Target .tck")->required();
    reg->add_option("--ckpt", ckpt_path, "Trained checkpoint")->required();
    reg->add_option("--out", reg_out, "Warped .tck")->required();
    reg->add_option("--save-transform", transform_out, "Write the fitted TPS");
    reg->add_option("--lambda", lambda, "TPS regularization (default: config tps_lambda)");
    reg->add_option("--config", cfg_path, "Config file");

    // cluster
    auto* clu = app.add_subcommand("cluster", "Assign streamlines to clusters");
    std::string clu_in, clu_labels, clu_summary;
    std::optional<double> thr;
    clu->add_option("--input", clu_in, "Input .tck")->required();
    clu->add_option("--ckpt", ckpt_path, "Trained checkpoint")->required();
    clu->add_option("--out-labels", clu_labels, "Output label file")->required();
    clu->add_option("--thr", thr, "Confidence threshold (default: config confidence_thr)");
    clu->add_option("--summary", clu_summary, "Also write the JSON summary to this file");
    clu->add_option("--config", cfg_path, "Config file");

    // eval
    auto* ev = app.add_subcommand("eval", "Compute evaluation metrics into a JSON report");
    std::vector<std::string> pred, truth, tracts;
    std::string warped_path, target_path, report_path;
    std::optional<std::size_t> clusters;
    double spacing = kDefaultVoxelSpacing;
    std::size_t min_count = kDefaultWmpgMinCount;
    ev->add_option("--pred-labels", pred, "Predicted label files, one per subject");
    ev->add_option("--true-labels", truth, "Ground-truth label files, aligned with --pred-labels");
    ev->add_option("--tractograms", tracts, "Tractograms, aligned with --pred-labels");
    ev->add_option("--warped", warped_path, "Registered tractogram (abd, wdice against --target)");
    ev->add_option("--target", target_path, "Target tractogram");
    ev->add_option("--clusters", clusters, "K for wmpg (default: largest label + 1)");
    ev->add_option("--voxel-spacing", spacing, "wdice voxel size, mm");
    ev->add_option("--min-count", min_count, "wmpg population threshold");
    ev->add_option("--report", report_path, "Output JSON report")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "End-to-end gradient check of every training loss");
    bool corrupt = false;
    std::string gc_report;
    gc->add_flag("--corrupt-gradient", corrupt, "Fault injection: perturb the TPS backward pass");
    gc->add_option("--report", gc_report, "Also write the JSON report to this file");

    // config
    auto* conf = app.add_subcommand("config", "Print the effective configuration");
    conf->add_option("--config", cfg_path, "Config file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    }
    if (*seed_opt) g.seed = seed_value;
    set_thread_count(g.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : g.threads);

    try {
        if (*synth) {
            const Config cfg = load_config(g, synth_spec);
            SyntheticData d = generate_synthetic(SyntheticSpec::from_config(cfg, derive_seed(cfg.seed, kSubjectStream, subject)));
            Tractogram t = d.tractogram;
            if (deform) {
                const auto spec = DeformationSpec::from_config(cfg, bounding_box(t), derive_seed(cfg.seed, kDeformStream, subject));
                t = sample_deformation(spec).apply(t);
            }
            io::write_tck(t, synth_out);
            if (!synth_labels.empty()) io::write_labels(d.labels, synth_labels);
            err << "wrote " << t.size() << " streamlines to " << synth_out << "\n";
            return kExitOk;
        }
        if (*pre) {
            Config cfg = load_config(g, cfg_path);
            if (epochs) cfg.pretrain_epochs = *epochs;
            if (cfg.pretrain_epochs < 0) throw UsageError("--epochs must be non-negative");
            const auto data = load_dir(data_dir, cfg, err);
            TrainState state = resume.empty() ? TrainState::initialize(cfg) : read_train_state(resume);
            if (state.phase != Phase::pretrain) throw UsageError("--resume checkpoint is not a pretraining state");
            return train_command("pretrain", ckpt_out, log_path, err,
                                 [&](const LossSink& sink) { return pretrain(data, state, cfg, sink); });
        }
        if (*train) {
            Config cfg = load_config(g, cfg_path);
            if (epochs) cfg.joint_epochs = *epochs;
            if (cfg.joint_epochs < 0) throw UsageError("--epochs must be non-negative");
            if (!mode.empty()) cfg = parse_config("joint_mode = " + mode, cfg);
            const auto data = load_dir(data_dir, cfg, err);
            TrainState state = read_train_state(init);
            if (g.seed) state.seed = *g.seed;
            return train_command("train", ckpt_out, log_path, err,
                                 [&](const LossSink& sink) { return joint_train(data, state, cfg, sink); });
        }
        if (*reg) {
            const Config cfg = load_config(g, cfg_path);
            const Model model = read_train_state(ckpt_path).model;
            const std::size_t n = model.config.embed.n_points;
            const Tractogram source = load_tractogram(src_path, n);
            const Tractogram target = load_tractogram(tgt_path, n);
            if (source.empty() || target.empty()) throw UsageError("register needs non-empty source and target");
            const RegistrationResult r = register_tractograms(source, target, model, lambda.value_or(cfg.tps_lambda));
            if (!transform_out.empty()) write_tps(r.transform, transform_out);
            io::write_tck(r.warped, reg_out);
            err << "registered " << source.size() << " streamlines, output " << reg_out << "\n";
            return kExitOk;
        }
        if (*clu) {
            const Config cfg = load_config(g, cfg_path);
            const Model model = read_train_state(ckpt_path).model;
            const Tractogram t = load_tractogram(clu_in, model.config.embed.n_points);
            if (t.empty()) throw UsageError("cluster input has no streamlines");
            const ClusterResult r = cluster_tractogram(t, model, thr.value_or(cfg.confidence_thr));
            const ClusterSummary s = summarize_labels(r.labels, model.config.clusters);
            json j;
            j["K"] = s.clusters;
            j["rejected_count"] = s.rejected;
            j["cluster_sizes"] = s.sizes;
            io::write_labels(r.labels, clu_labels);
            if (!clu_summary.empty()) io::write_file_atomic(clu_summary, json_text(j));
            out << json_text(j);
            return kExitOk;
        }
        if (*ev) {
            if (!truth.empty() && truth.size() != pred.size()) throw UsageError("--true-labels must match --pred-labels");
            if (!tracts.empty() && tracts.size() != pred.size()) throw UsageError("--tractograms must match --pred-labels");
            if (warped_path.empty() != target_path.empty()) throw UsageError("--warped and --target go together");
            std::vector<std::vector<int>> p, t;
            for (const auto& f : pred) p.push_back(io::read_labels(f));
            for (const auto& f : truth) t.push_back(io::read_labels(f));
            json report;
            // An undefined metric (say, every streamline rejected) is reported as null with the reason.
            auto put = [&report](const std::string& name, const std::string& id, json params, auto&& compute) {
                try {
                    report[name] = metric(compute(), id, params);
                } catch (const MetricError& e) {
                    report[name] = metric(0.0, id, std::move(params));
                    report[name]["value"] = nullptr;
                    report[name]["error"] = e.what();
                }
            };
            const auto subjects = p.size();
            if (!t.empty()) {
                put("ari", "ari.hubert-arabie.excluding-rejected", {{"subjects", subjects}}, [&] {
                    double ari = 0.0;
                    for (std::size_t i = 0; i < p.size(); ++i) ari += adjusted_rand_index(p[i], t[i]);
                    return ari / static_cast<double>(subjects);
                });
            }
            if (!p.empty()) {
                put("rejection_rate", "rejection.fraction-minus-one", {{"subjects", subjects}}, [&] {
                    double rej = 0.0;
                    for (const auto& l : p) rej += rejection_rate(l);
                    return rej / static_cast<double>(subjects);
                });
                const std::size_t k = clusters.value_or(static_cast<std::size_t>(std::max(max_label(p), 0) + 1));
                put("wmpg", "wmpg.populated-fraction.percent", {{"K", k}, {"min_count", min_count}, {"subjects", subjects}},
                    [&] { return 100.0 * wmpg(p, k, min_count); });
            }
            if (!tracts.empty()) {
                std::vector<Tractogram> trs;
                for (const auto& f : tracts) trs.push_back(load_tractogram(f, kDefaultPointCount));
                put("alpha", "alpha.member-to-medoid-mdf", {{"n_points", kDefaultPointCount}, {"subjects", subjects}}, [&] {
                    double a = 0.0;
                    for (std::size_t i = 0; i < p.size(); ++i) a += alpha_compactness(trs[i], p[i]);
                    return a / static_cast<double>(subjects);
                });
            }
            if (!warped_path.empty()) {
                const Tractogram w = load_tractogram(warped_path, kDefaultPointCount);
                const Tractogram tg = load_tractogram(target_path, kDefaultPointCount);
                put("abd", "abd.symmetric-mean-min-mdf", {{"n_points", kDefaultPointCount}}, [&] { return abd(w, tg); });
                put("wdice", "wdice.normalized-visitation", {{"voxel_spacing_mm", spacing}, {"supersample", 0.25}},
                    [&] { return wdice(w, tg, spacing); });
            }
            if (report.empty()) throw UsageError("eval: nothing to compute; pass labels or tractograms");
            io::write_file_atomic(report_path, json_text(report));
            err << "wrote " << report.size() << " metrics to " << report_path << "\n";
            return kExitOk;
        }
        if (*gc) {
            GradCheckOptions o;
            o.seed = g.seed.value_or(0);
            ad::set_corrupt_gradient(corrupt);
            const GradCheckReport r = run_gradcheck_battery(o);
            ad::set_corrupt_gradient(false);
            const std::string text = r.to_json() + "\n";
            if (!gc_report.empty()) io::write_file_atomic(gc_report, text);
            out << text;
            for (const auto& c : r.cases) {
                err << c.loss << " max relative error " << std::scientific << std::setprecision(3)
                    << c.result.max_relative_error << (c.passed ? "" : "  FAIL") << "\n";
            }
            return r.passed() ? kExitOk : kExitInternal;
        }
        if (*conf) {
            out << dump_config(load_config(g, cfg_path));
            return kExitOk;
        }
    } catch (const InternalFailure& e) {
        err << "error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const ad::DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const io::IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const ad::CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const GeometryError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const TpsError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitUser;
}

}  // namespace tractorc
