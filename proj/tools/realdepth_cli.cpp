// Command-line front end: synthetic data, degradation, labels, training,
// recovery, evaluation, gradient checks and figure panels.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "realdepth/config.hpp"
#include "realdepth/degrade.hpp"
#include "realdepth/gradcheck.hpp"
#include "realdepth/io.hpp"
#include "realdepth/metrics.hpp"
#include "realdepth/recover.hpp"
#include "realdepth/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace realdepth;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
    int precision = 64;
    bool precision_given = false;
};

void log_line(const std::string& msg) { std::cerr << "[realdepth] " << msg << '\n'; }

void log_config(const std::string& command, const Globals& g, const KeyValues& kv) {
    std::ostringstream out;
    out << command << " resolved config:\n";
    out << "  global.seed = " << g.seed << '\n';
    out << "  global.threads = " << g.threads << '\n';
    out << "  global.precision = " << g.precision << '\n';
    for (const auto& [key, value] : kv.entries()) out << "  " << key << " = " << value << '\n';
    std::cerr << out.str();
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; the first exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

fs::path relative_to(const fs::path& target, const fs::path& base) {
    return fs::relative(fs::absolute(target), fs::absolute(base));
}

io::DatasetManifest load_manifest(const fs::path& path) {
    io::DatasetManifest m = io::DatasetManifest::load(path);
    log_line("manifest " + path.string() + ": " + std::to_string(m.samples.size()) + " samples");
    return m;
}

/// Copy of `m` to be saved at `out_path` with paths rebased to its directory.
io::DatasetManifest rebase(const io::DatasetManifest& m, const fs::path& out_path) {
    io::DatasetManifest out = m;
    const fs::path base = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
    auto fix = [&](std::string& p) { p = relative_to(m.resolve(p), base).generic_string(); };
    for (auto& s : out.samples) {
        fix(s.rgb_path);
        fix(s.gt_path);
        if (s.raw_path) fix(*s.raw_path);
        if (s.rel_depth_path) fix(*s.rel_depth_path);
        if (s.uncertainty_path) fix(*s.uncertainty_path);
    }
    out.base_dir = base;
    return out;
}

std::string require_raw(const io::ManifestSample& s) {
    if (!s.raw_path) throw ParameterError("sample '" + s.id + "' has no raw_path");
    return *s.raw_path;
}

Grid2D read_gt(const io::DatasetManifest& m, const io::ManifestSample& s) {
    return io::read_depth(m.resolve(s.gt_path), m.depth_scale);
}

Grid2D read_raw(const io::DatasetManifest& m, const io::ManifestSample& s) {
    return io::read_depth(m.resolve(require_raw(s)), m.depth_scale);
}

std::optional<Grid2D> read_rel(const io::DatasetManifest& m, const io::ManifestSample& s,
                               bool wanted) {
    if (!wanted) return std::nullopt;
    if (!s.rel_depth_path) {
        throw ParameterError("sample '" + s.id + "' has no rel_depth_path but the config uses it");
    }
    return io::read_relative_depth(m.resolve(*s.rel_depth_path));
}

RunConfig resolve_run_config(const std::string& config_path, const Globals& g) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (g.seed_given) cfg.seed = g.seed;
    if (g.precision_given) cfg.precision = g.precision;
    cfg.validate();
    return cfg;
}

fs::path find_prediction(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".png", ".pfm"}) {
        const fs::path p = dir / (id + ext);
        if (fs::exists(p)) return p;
    }
    throw IoError("no prediction for sample '" + id + "' in " + dir.string() +
                  " (expected <id>.png or <id>.pfm)");
}

void write_history(const std::vector<double>& losses, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch\tloss\n";
    char buf[64];
    for (std::size_t e = 0; e < losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.17g\n", e, losses[e]);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + path.string());
}

// ------------------------------------------------------------------ commands

struct SynthArgs {
    std::string out_dir;
    int count = 8;
    int size = 64;
};

int run_synth(const SynthArgs& a, const Globals& g) {
    require(a.count >= 1, "synth: --count must be positive");
    KeyValues kv;
    kv.set("out_dir", a.out_dir);
    kv.set("count", a.count);
    kv.set("size", a.size);
    log_config("synth", g, kv);

    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    io::DatasetManifest m;
    m.depth_unit = "mm";
    m.depth_scale = 1.0;
    m.base_dir = dir;
    io::OutputSet outs;
    std::vector<std::pair<fs::path, fs::path>> staged;
    for (int i = 0; i < a.count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%04d", i);
        m.samples.push_back({id, std::string(id) + "_rgb.png", std::string(id) + "_gt.png",
                             std::nullopt, std::nullopt, std::nullopt});
        staged.emplace_back(outs.stage(dir / m.samples.back().rgb_path),
                            outs.stage(dir / m.samples.back().gt_path));
    }
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        Rng rng(derive_seed(g.seed, m.samples[i].id));
        const SyntheticScene scene = gen_synthetic_scene(a.size, a.size, rng);
        io::write_rgb(scene.rgb, staged[i].first);
        io::write_depth(scene.gt, staged[i].second, m.depth_scale);
    });
    m.save(outs.stage(dir / "manifest.json"));
    outs.commit();
    log_line("wrote " + std::to_string(a.count) + " scenes to " + dir.string());
    return 0;
}

struct GenerateArgs {
    std::string manifest;
    std::string recipe;
    std::string out_dir;
    std::string out_manifest;
};

int run_generate(const GenerateArgs& a, const Globals& g) {
    DegradeRecipe recipe = a.recipe.empty() ? DegradeRecipe{} : DegradeRecipe::from_keyvalues(
                                                                    KeyValues::load(a.recipe));
    recipe.validate();
    const io::DatasetManifest m = load_manifest(a.manifest);
    const fs::path out_dir =
        a.out_dir.empty() ? fs::path(a.manifest).parent_path() / "raw" : fs::path(a.out_dir);
    const fs::path out_manifest =
        a.out_manifest.empty() ? out_dir / "manifest.json" : fs::path(a.out_manifest);
    KeyValues kv;
    kv.merge("recipe", recipe.to_keyvalues());
    kv.set("recipe.seed_rule", std::string("derive_seed(global.seed, sample id)"));
    kv.set("out_dir", out_dir.string());
    kv.set("out_manifest", out_manifest.string());
    log_config("generate", g, kv);

    fs::create_directories(out_dir);
    if (!out_manifest.parent_path().empty()) fs::create_directories(out_manifest.parent_path());
    io::OutputSet outs;
    io::DatasetManifest updated = m;
    std::vector<fs::path> staged;
    for (auto& s : updated.samples) {
        const fs::path target = out_dir / (s.id + ".png");
        staged.push_back(outs.stage(target));
        s.raw_path = fs::absolute(target).string();
        s.uncertainty_path.reset();  // labels of a previous raw no longer apply
    }
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        DegradeRecipe r = recipe;
        r.seed = derive_seed(g.seed, m.samples[i].id);
        const RawDepthSample raw = generate_raw(read_gt(m, m.samples[i]), r);
        io::write_depth(raw.raw, staged[i], m.depth_scale);
    });
    rebase(updated, out_manifest).save(outs.stage(out_manifest));
    outs.commit();
    log_line("wrote raw depth for " + std::to_string(m.samples.size()) + " samples");
    return 0;
}

struct LabelArgs {
    std::string manifest;
    std::string out_dir;
    std::string out_manifest;
    double tau = 0.1;
};

int run_label(const LabelArgs& a, const Globals& g) {
    require(a.tau > 0.0, "label: --tau must be positive");
    const io::DatasetManifest m = load_manifest(a.manifest);
    const fs::path out_dir =
        a.out_dir.empty() ? fs::path(a.manifest).parent_path() / "labels" : fs::path(a.out_dir);
    const fs::path out_manifest =
        a.out_manifest.empty() ? out_dir / "manifest.json" : fs::path(a.out_manifest);
    KeyValues kv;
    kv.set("tau_frac", a.tau);
    kv.set("out_dir", out_dir.string());
    kv.set("out_manifest", out_manifest.string());
    log_config("label", g, kv);

    for (const auto& s : m.samples) require_raw(s);
    fs::create_directories(out_dir);
    if (!out_manifest.parent_path().empty()) fs::create_directories(out_manifest.parent_path());
    io::OutputSet outs;
    io::DatasetManifest updated = m;
    std::vector<fs::path> staged;
    for (auto& s : updated.samples) {
        const fs::path target = out_dir / (s.id + ".png");
        staged.push_back(outs.stage(target));
        s.uncertainty_path = fs::absolute(target).string();
    }
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        const auto& s = m.samples[i];
        io::write_uncertainty(make_label(read_raw(m, s), read_gt(m, s), a.tau), staged[i]);
    });
    rebase(updated, out_manifest).save(outs.stage(out_manifest));
    outs.commit();
    log_line("wrote labels for " + std::to_string(m.samples.size()) + " samples");
    return 0;
}

struct TrainArgs {
    std::string manifest;
    std::string config;
    std::string out;
    std::string history;
};

fs::path history_path(const TrainArgs& a) {
    if (!a.history.empty()) return a.history;
    fs::path p = a.out;
    p += ".history.tsv";
    return p;
}

int run_train_uncertainty(const TrainArgs& a, const Globals& g) {
    const RunConfig cfg = resolve_run_config(a.config, g);
    const io::DatasetManifest m = load_manifest(a.manifest);
    KeyValues kv = cfg.to_keyvalues();
    kv.set("out", a.out);
    kv.set("history", history_path(a).string());
    log_config("train-uncertainty", g, kv);

    std::vector<ClassifierSample> data;
    for (const auto& s : m.samples) {
        const Grid2D gt = read_gt(m, s);
        Grid2D raw = read_raw(m, s);
        UncertaintyMap labels = s.uncertainty_path
                                    ? io::read_uncertainty(m.resolve(*s.uncertainty_path))
                                    : make_label(raw, gt);
        Grid2D valid(gt.height(), gt.width());
        for (std::size_t i = 0; i < gt.size(); ++i) valid[i] = gt[i] > 0.0 ? 1.0 : 0.0;
        data.push_back({io::read_rgb(m.resolve(s.rgb_path)), std::move(raw),
                        read_rel(m, s, cfg.classifier.use_relative_depth), std::move(labels),
                        std::move(valid)});
    }
    const ClassifierTraining trained =
        classifier_train(cfg.classifier, data, cfg.classifier_schedule());
    log_line("final epoch loss " + std::to_string(trained.epoch_loss.back()));

    const fs::path out = a.out;
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    io::OutputSet outs;
    const fs::path staged = outs.stage(out);
    ClassifierModel{cfg.classifier, trained.params}.save(
        staged, cfg.precision == 32 ? nn::Dtype::f32 : nn::Dtype::f64);
    fs::path sidecar_from = staged;
    sidecar_from += ".cfg";
    fs::path sidecar_to = out;
    sidecar_to += ".cfg";
    fs::rename(sidecar_from, outs.stage(sidecar_to));
    write_history(trained.epoch_loss, outs.stage(history_path(a)));
    outs.commit();
    return 0;
}

int run_train_recover(const TrainArgs& a, const Globals& g) {
    const RunConfig cfg = resolve_run_config(a.config, g);
    const io::DatasetManifest m = load_manifest(a.manifest);
    KeyValues kv = cfg.to_keyvalues();
    kv.set("out", a.out);
    kv.set("history", history_path(a).string());
    log_config("train-recover", g, kv);

    std::vector<RecoverySample> data;
    for (const auto& s : m.samples) {
        std::optional<UncertaintyMap> labels;
        if (cfg.use_uncertainty && s.uncertainty_path) {
            labels = io::read_uncertainty(m.resolve(*s.uncertainty_path));
        }
        data.push_back({io::read_rgb(m.resolve(s.rgb_path)), read_raw(m, s),
                        read_rel(m, s, cfg.use_relative_depth), std::move(labels),
                        read_gt(m, s)});
    }
    RecoveryModel model(cfg.fam, cfg.use_relative_depth, cfg.encoder);
    model.init(cfg.seed);
    const TrainHistory history = train_toy(data, model, cfg.recovery_schedule());
    log_line("final epoch loss " + std::to_string(history.epoch_loss.back()));

    const fs::path out = a.out;
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    io::OutputSet outs;
    const fs::path staged = outs.stage(out);
    model.save(staged, cfg.precision == 32 ? nn::Dtype::f32 : nn::Dtype::f64);
    fs::rename(RecoveryModel::sidecar_path(staged),
               outs.stage(RecoveryModel::sidecar_path(out)));
    write_history(history.epoch_loss, outs.stage(history_path(a)));
    outs.commit();
    return 0;
}

struct RecoverArgs {
    std::string manifest;
    std::string model;
    std::string uncertainty_model;
    std::string out_dir;
    std::string format = "png";
};

int run_recover(const RecoverArgs& a, const Globals& g) {
    require(a.format == "png" || a.format == "pfm", "recover: --format must be png or pfm");
    const RecoveryModel model = RecoveryModel::load(a.model);
    std::optional<ClassifierModel> classifier;
    if (!a.uncertainty_model.empty()) classifier = ClassifierModel::load(a.uncertainty_model);
    const io::DatasetManifest m = load_manifest(a.manifest);
    KeyValues kv;
    kv.set("model", a.model);
    kv.merge("model.encoder", model.encoder_config().to_keyvalues());
    kv.merge("model.fam", model.config().to_keyvalues());
    kv.set("model.use_relative_depth", model.uses_relative_depth());
    kv.set("uncertainty_model", a.uncertainty_model.empty() ? "none" : a.uncertainty_model);
    kv.set("out_dir", a.out_dir);
    kv.set("format", a.format);
    log_config("recover", g, kv);

    for (const auto& s : m.samples) require_raw(s);
    fs::create_directories(a.out_dir);
    io::OutputSet outs;
    std::vector<fs::path> staged;
    for (const auto& s : m.samples) {
        staged.push_back(outs.stage(fs::path(a.out_dir) / (s.id + "." + a.format)));
    }
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        const auto& s = m.samples[i];
        const FeatureMap rgb = io::read_rgb(m.resolve(s.rgb_path));
        Grid2D raw = read_raw(m, s);
        if (classifier) {
            const auto rel = read_rel(m, s, classifier->cfg.use_relative_depth);
            raw = mask_raw(raw, classifier->predict(rgb, raw, rel));
        }
        const Grid2D out = model.recover(rgb, raw, read_rel(m, s, model.uses_relative_depth()));
        io::write_depth(out, staged[i], m.depth_scale);
    });
    outs.commit();
    log_line("recovered " + std::to_string(m.samples.size()) + " samples into " + a.out_dir);
    return 0;
}

struct EvaluateArgs {
    std::string manifest;
    std::string pred_dir;
    bool raw = false;
    std::string out;
    double delta = 1.05;
    bool pixel_weighted = false;
};

int run_evaluate(const EvaluateArgs& a, const Globals& g) {
    require(a.raw != !a.pred_dir.empty(), "evaluate: give exactly one of --pred-dir or --raw");
    const io::DatasetManifest m = load_manifest(a.manifest);
    KeyValues kv;
    kv.set("source", a.raw ? std::string("manifest raw_path") : a.pred_dir);
    kv.set("delta_threshold", a.delta);
    kv.set("pixel_weighted", a.pixel_weighted);
    kv.set("depth_unit", m.depth_unit);
    kv.set("out", a.out.empty() ? std::string("none") : a.out);
    log_config("evaluate", g, kv);

    std::vector<fs::path> sources;
    for (const auto& s : m.samples) {
        sources.push_back(a.raw ? m.resolve(require_raw(s)) : find_prediction(a.pred_dir, s.id));
    }
    std::vector<PairInput> pairs(m.samples.size());
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        pairs[i] = {m.samples[i].id, io::read_depth(sources[i], m.depth_scale),
                    read_gt(m, m.samples[i])};
    });
    const DatasetReport report = evaluate_dataset(pairs, a.delta, a.pixel_weighted, m.depth_unit);
    std::ostringstream table;
    write_report_table(table, report);
    std::cout << table.str();
    if (!a.out.empty()) {
        const fs::path out = a.out;
        if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
        io::OutputSet outs;
        std::ofstream file(outs.stage(out));
        file << table.str();
        file.close();
        if (!file) throw IoError("failed writing " + out.string());
        outs.commit();
    }
    if (report.failed > 0) {
        log_line(std::to_string(report.failed) + " samples failed and are excluded from the mean");
    }
    return 0;
}

struct GradcheckArgs {
    int seeds = 20;
    double tolerance = 1e-3;
};

int run_gradcheck(const GradcheckArgs& a, const Globals& g) {
    require(a.seeds >= 1, "gradcheck: --seeds must be positive");
    KeyValues kv;
    kv.set("seeds", a.seeds);
    kv.set("tolerance", a.tolerance);
    kv.set("arithmetic", std::string("64-bit, central differences, eps 1e-5"));
    log_config("gradcheck", g, kv);

    bool all_ok = true;
    std::printf("case\tseeds\tchecked\tkinks\tmax_rel_error\tstatus\n");
    for (const auto& c : gradcheck_suite()) {
        double worst = 0.0;
        std::size_t checked = 0;
        std::size_t kinks = 0;
        std::string where;
        for (int i = 0; i < a.seeds; ++i) {
            const auto r = c.run(derive_seed(g.seed, static_cast<std::uint64_t>(i)));
            checked += r.checked;
            kinks += r.kinks;
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                where = r.worst;
            }
        }
        const bool ok = worst < a.tolerance;
        all_ok = all_ok && ok;
        std::printf("%s\t%d\t%zu\t%zu\t%.3e\t%s\n", c.name.c_str(), a.seeds, checked, kinks, worst,
                    ok ? "pass" : ("FAIL at " + where).c_str());
    }
    std::fflush(stdout);
    return all_ok ? 0 : 2;
}

struct PanelArgs {
    std::string manifest;
    std::string pred_dir;
    std::string out_dir;
};

int run_render_panels(const PanelArgs& a, const Globals& g) {
    const io::DatasetManifest m = load_manifest(a.manifest);
    KeyValues kv;
    kv.set("pred_dir", a.pred_dir.empty() ? std::string("none") : a.pred_dir);
    kv.set("out_dir", a.out_dir);
    kv.set("layout", std::string(a.pred_dir.empty() ? "rgb|raw|gt" : "rgb|raw|recovered|gt"));
    log_config("render-panels", g, kv);

    fs::create_directories(a.out_dir);
    io::OutputSet outs;
    std::vector<fs::path> staged;
    for (const auto& s : m.samples) {
        staged.push_back(outs.stage(fs::path(a.out_dir) / (s.id + "_panel.png")));
    }
    parallel_for(m.samples.size(), g.threads, [&](std::size_t i) {
        const auto& s = m.samples[i];
        const FeatureMap rgb = io::read_rgb(m.resolve(s.rgb_path));
        const Grid2D gt = read_gt(m, s);
        std::vector<Grid2D> depths;
        depths.push_back(s.raw_path ? read_raw(m, s) : Grid2D(gt.height(), gt.width()));
        if (!a.pred_dir.empty()) {
            depths.push_back(io::read_depth(find_prediction(a.pred_dir, s.id), m.depth_scale));
        }
        depths.push_back(gt);
        for (const auto& d : depths) {
            require(d.same_shape(gt), "render-panels: '" + s.id + "' depth maps differ in size");
        }

        // Shared gray ramp over the gt range; invalid pixels stay black.
        const double peak = gt.max() > 0.0 ? gt.max() : 1.0;
        const int h = gt.height();
        const int w = gt.width();
        const int tiles = 1 + static_cast<int>(depths.size());
        FeatureMap panel(3, h, w * tiles);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) panel(c, y, x) = rgb(c, y, x);
            }
        }
        for (std::size_t t = 0; t < depths.size(); ++t) {
            const int x0 = w * static_cast<int>(t + 1);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double v = depths[t](y, x);
                    const double shade = v > 0.0 ? std::clamp(1.0 - v / peak, 0.0, 1.0) * 0.9 + 0.1
                                                 : 0.0;
                    for (int c = 0; c < 3; ++c) panel(c, y, x0 + x) = shade;
                }
            }
        }
        io::write_rgb(panel, staged[i]);
    });
    outs.commit();
    log_line("wrote " + std::to_string(m.samples.size()) + " panels to " + a.out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Real-world depth recovery toolkit"};
    app.require_subcommand(1);
    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "Base seed; per-sample seeds derive from it");
    app.add_option("--threads", g.threads, "Worker threads for per-sample work")
        ->check(CLI::Range(1, 256));
    auto* precision_opt = app.add_option("--precision", g.precision, "Training arithmetic (32 or 64)")
                              ->check(CLI::IsMember({32, 64}));

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Write synthetic RGB-D scenes and a manifest");
    c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    c_synth->add_option("--count", synth.count, "Number of scenes");
    c_synth->add_option("--size", synth.size, "Scene side in pixels (>= 64)");

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "Degrade ground truth into raw depth");
    c_gen->add_option("--manifest", gen.manifest, "Input manifest")->required();
    c_gen->add_option("--recipe", gen.recipe, "Degradation recipe (key = value file)");
    c_gen->add_option("--out-dir", gen.out_dir, "Raw depth directory");
    c_gen->add_option("--out-manifest", gen.out_manifest, "Updated manifest path");

    LabelArgs label;
    auto* c_label = app.add_subcommand("label", "Derive structure-uncertainty labels");
    c_label->add_option("--manifest", label.manifest, "Manifest with raw_path entries")->required();
    c_label->add_option("--out-dir", label.out_dir, "Label directory");
    c_label->add_option("--out-manifest", label.out_manifest, "Updated manifest path");
    c_label->add_option("--tau", label.tau, "Threshold as a fraction of max ground truth");

    TrainArgs tu;
    auto* c_tu = app.add_subcommand("train-uncertainty", "Train the uncertainty classifier");
    c_tu->add_option("--manifest", tu.manifest, "Training manifest")->required();
    c_tu->add_option("--config", tu.config, "Run config (key = value file)");
    c_tu->add_option("--out", tu.out, "Checkpoint path")->required();
    c_tu->add_option("--history", tu.history, "Loss history path");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train-recover", "Train the recovery model");
    c_tr->add_option("--manifest", tr.manifest, "Training manifest")->required();
    c_tr->add_option("--config", tr.config, "Run config (key = value file)");
    c_tr->add_option("--out", tr.out, "Checkpoint path")->required();
    c_tr->add_option("--history", tr.history, "Loss history path");

    RecoverArgs rec;
    auto* c_rec = app.add_subcommand("recover", "Run a trained recovery model");
    c_rec->add_option("--manifest", rec.manifest, "Manifest with raw_path entries")->required();
    c_rec->add_option("--model", rec.model, "Recovery checkpoint")->required();
    c_rec->add_option("--uncertainty-model", rec.uncertainty_model,
                      "Classifier checkpoint used to mask raw depth");
    c_rec->add_option("--out-dir", rec.out_dir, "Output directory")->required();
    c_rec->add_option("--format", rec.format, "png (manifest scale) or pfm");

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Metric table for predictions against ground truth");
    c_ev->add_option("--manifest", ev.manifest, "Manifest with ground truth")->required();
    c_ev->add_option("--pred-dir", ev.pred_dir, "Directory of <id>.png or <id>.pfm predictions");
    c_ev->add_flag("--raw", ev.raw, "Evaluate the manifest's raw depth instead");
    c_ev->add_option("--out", ev.out, "Also write the table to this file");
    c_ev->add_option("--delta", ev.delta, "Ratio threshold for the delta metric");
    c_ev->add_flag("--pixel-weighted", ev.pixel_weighted, "Weight the mean by valid pixel count");

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
    c_gc->add_option("--seeds", gc.seeds, "Random instances per case");
    c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error");

    PanelArgs pn;
    auto* c_pn = app.add_subcommand("render-panels", "Side-by-side RGB / raw / recovered / GT PNGs");
    c_pn->add_option("--manifest", pn.manifest, "Manifest")->required();
    c_pn->add_option("--pred-dir", pn.pred_dir, "Recovered depth directory");
    c_pn->add_option("--out-dir", pn.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    g.seed_given = seed_opt->count() > 0;
    g.precision_given = precision_opt->count() > 0;

    try {
        if (c_synth->parsed()) return run_synth(synth, g);
        if (c_gen->parsed()) return run_generate(gen, g);
        if (c_label->parsed()) return run_label(label, g);
        if (c_tu->parsed()) return run_train_uncertainty(tu, g);
        if (c_tr->parsed()) return run_train_recover(tr, g);
        if (c_rec->parsed()) return run_recover(rec, g);
        if (c_ev->parsed()) return run_evaluate(ev, g);
        if (c_gc->parsed()) return run_gradcheck(gc, g);
        if (c_pn->parsed()) return run_render_panels(pn, g);
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
