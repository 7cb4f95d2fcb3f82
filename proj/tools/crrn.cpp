// SPDX-License-Identifier: Apache-2.0
//
// crrn: train, infer, eval, gradcheck and synth subcommands.
// Exit codes: 0 ok, 1 usage, 2 runtime failure, 3 verification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crrn/checkpoint.hpp"
#include "crrn/data.hpp"
#include "crrn/metrics.hpp"
#include "crrn/network.hpp"
#include "crrn/synthetic.hpp"
#include "crrn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kVerification = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("bad JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    crrn::TrainConfig config;
    fs::path manifest;
    fs::path out;
    fs::path resume;
    double grad_clip = 0.0;
    int connectivity = 8;
    bool no_timing = false;
};

void add_model_flags(CLI::App* cmd, crrn::TrainConfig& c, int& connectivity) {
    cmd->add_option("--grid-rows", c.grid_rows, "Block grid rows")->capture_default_str();
    cmd->add_option("--grid-cols", c.grid_cols, "Block grid columns")->capture_default_str();
    cmd->add_option("--hidden-dim", c.hidden_dim, "Hidden units per vertex (a perfect square)")->capture_default_str();
    cmd->add_option("--residual-mid-channels", c.residual_mid_channels, "Channels inside the residual block")
        ->capture_default_str();
    cmd->add_option("--connectivity", connectivity, "Predecessor neighbourhood: 4 or 8")
        ->check(CLI::IsMember({4, 8}))
        ->capture_default_str();
    cmd->add_flag("--per-direction-params", c.per_direction_params, "Independent weights for each direction");
    cmd->add_flag("--fuse-post-residual", c.fuse_post_residual, "Fuse residual outputs instead of hidden states");
}

int cmd_train(TrainArgs& a, bool epochs_given) {
    crrn::TrainConfig& c = a.config;
    c.connectivity = static_cast<crrn::Connectivity>(a.connectivity);
    if (a.grad_clip > 0.0) c.grad_clip_norm = a.grad_clip;
    c.record_timing = !a.no_timing;

    std::optional<crrn::Checkpoint> resumed;
    if (!a.resume.empty()) {
        resumed = crrn::load_checkpoint(a.resume);
        const std::size_t epochs = epochs_given ? c.epochs : resumed->train.epochs;
        const int threads = c.threads;
        c = resumed->train;
        c.epochs = epochs;
        c.threads = threads;
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const auto dataset = crrn::load_dataset(a.manifest);
    if (dataset.empty()) throw std::runtime_error("manifest " + a.manifest.string() + " lists no samples");
    const auto& first = dataset.front().image;
    for (const auto& s : dataset) {
        if (s.image.shape() != first.shape()) {
            throw std::runtime_error("image " + s.id + " is " + crrn::shape_string(s.image.shape()) + ", expected " +
                                     crrn::shape_string(first.shape()) + " like the first image");
        }
    }
    const std::size_t classes = c.num_classes ? c.num_classes : crrn::infer_num_classes(dataset);

    crrn::TrainState state;
    if (resumed) {
        state = std::move(resumed->state);
        const auto& m = state.params.config;
        if (m.image_h != first.dim(1) || m.image_w != first.dim(2) || m.channels != first.dim(0)) {
            throw std::runtime_error("dataset extents do not match the resumed checkpoint");
        }
    } else {
        state = crrn::initial_state(c, crrn::model_config_for(c, first.dim(1), first.dim(2), first.dim(0), classes));
    }
    c.num_classes = state.params.config.num_classes;

    fs::create_directories(a.out);
    std::ofstream log(a.out / "log.jsonl", resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (a.out / "log.jsonl").string());

    crrn::train_loop(state, dataset, c, [&](const crrn::EpochLog& entry, const crrn::TrainState& st, bool improved) {
        log << json(entry).dump() << '\n' << std::flush;
        const crrn::Checkpoint ck{c, st};
        crrn::save_checkpoint(a.out / "last.ckpt", ck);
        if (improved) crrn::save_checkpoint(a.out / "best.ckpt", ck);
        std::fprintf(stderr, "epoch %zu  loss %.6f  val_pa %.4f  val_ca %.4f  lr %.6g\n", entry.epoch, entry.train_loss,
                     entry.val_pa, entry.val_ca, entry.lr);
    });
    if (state.epoch == 0 || !fs::exists(a.out / "last.ckpt")) {
        crrn::save_checkpoint(a.out / "last.ckpt", crrn::Checkpoint{c, state});
    }
    return kOk;
}

// ---------------------------------------------------------------------------

std::vector<std::array<unsigned char, 3>> read_palette(const fs::path& path) {
    const json j = read_json(path);
    if (!j.is_array()) throw std::runtime_error("palette " + path.string() + " must be a JSON array of [r, g, b]");
    std::vector<std::array<unsigned char, 3>> palette;
    for (const auto& entry : j) {
        if (!entry.is_array() || entry.size() != 3) throw std::runtime_error("palette entries must be [r, g, b]");
        std::array<unsigned char, 3> rgb{};
        for (std::size_t k = 0; k < 3; ++k) {
            const int v = entry.at(k).get<int>();
            if (v < 0 || v > 255) throw std::runtime_error("palette values must be in [0, 255]");
            rgb[k] = static_cast<unsigned char>(v);
        }
        palette.push_back(rgb);
    }
    return palette;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out, const fs::path& colors,
              int threads) {
    const crrn::Checkpoint ck = crrn::load_checkpoint(checkpoint);
    const crrn::Tensor image = crrn::load_image(image_path);
    const auto& cfg = ck.state.params.config;
    if (image.dim(0) != cfg.channels || image.dim(1) != cfg.image_h || image.dim(2) != cfg.image_w) {
        throw std::runtime_error("image " + image_path.string() + " is " + crrn::shape_string(image.shape()) +
                                 " but the checkpoint expects [" + std::to_string(cfg.channels) + "x" +
                                 std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "]");
    }
    std::vector<std::array<unsigned char, 3>> palette;
    if (!colors.empty()) {
        palette = read_palette(colors);
        if (palette.size() < cfg.num_classes) {
            throw std::runtime_error("palette has " + std::to_string(palette.size()) + " colours for " +
                                     std::to_string(cfg.num_classes) + " classes");
        }
    }
    const crrn::PredictionMap pred = crrn::infer(image, ck.state.params, threads);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    crrn::save_labels(out, pred.labels);
    if (!palette.empty()) {
        std::vector<unsigned char> rgb;
        rgb.reserve(pred.labels.data.size() * 3);
        for (std::int32_t l : pred.labels.data) rgb.insert(rgb.end(), palette[l].begin(), palette[l].end());
        fs::path colored = out;
        colored.replace_filename(out.stem().string() + "_color.png");
        crrn::save_rgb_png(colored, pred.labels.height, pred.labels.width, rgb);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out, bool oracle, int threads) {
    const auto dataset = crrn::load_dataset(manifest);
    if (dataset.empty()) throw std::runtime_error("manifest " + manifest.string() + " lists no samples");
    std::optional<crrn::Checkpoint> ck;
    if (!oracle) ck = crrn::load_checkpoint(checkpoint);
    const std::size_t classes = oracle ? crrn::infer_num_classes(dataset) : ck->state.params.config.num_classes;

    crrn::ConfusionMatrix cm(classes);
    for (const auto& s : dataset) {
        if (oracle) {
            cm.add(s.labels, s.labels);
        } else {
            cm.add(s.labels, crrn::infer(s.image, ck->state.params, threads).labels);
        }
    }
    const std::string report = crrn::metrics_report(cm).dump(2);
    std::cout << report << '\n';
    if (!out.empty()) {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_text(out, report + "\n");
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
    crrn::TrainConfig shape;
    std::size_t block_h = 4;
    std::size_t block_w = 4;
    std::size_t channels = 1;
    std::size_t num_classes = 3;
    std::uint64_t seed = 0;
    double tol = 1e-5;
    std::string format = "text";
    int connectivity = 8;
};

int cmd_gradcheck(GradcheckArgs& a) {
    const auto& s = a.shape;
    if (s.hidden_dim > 64 || s.grid_rows > 4 || s.grid_cols > 4) {
        throw UsageError("gradcheck is limited to hidden_dim <= 64 and grids up to 4x4");
    }
    crrn::ModelConfig m;
    m.image_h = s.grid_rows * a.block_h;
    m.image_w = s.grid_cols * a.block_w;
    m.channels = a.channels;
    m.grid_rows = s.grid_rows;
    m.grid_cols = s.grid_cols;
    m.hidden_dim = s.hidden_dim;
    m.residual_mid_channels = s.residual_mid_channels;
    m.num_classes = a.num_classes;
    m.connectivity = static_cast<crrn::Connectivity>(a.connectivity);
    m.per_direction_params = s.per_direction_params;
    m.fuse_post_residual = s.fuse_post_residual;
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const crrn::GradCheckReport report = crrn::grad_check(m, a.seed, a.tol);
    std::cout << (a.format == "jsonl" ? report.to_jsonl() : report.to_text());
    return report.passed() ? kOk : kVerification;
}

// ---------------------------------------------------------------------------

int cmd_synth(const fs::path& spec_path, std::size_t n, const fs::path& out, std::uint64_t seed,
              std::optional<std::size_t> size, std::optional<std::size_t> classes) {
    crrn::SynthSpec spec;
    if (!spec_path.empty()) spec = read_json(spec_path).get<crrn::SynthSpec>();
    if (size) spec.size = *size;
    if (classes) spec.num_classes = *classes;
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto samples = crrn::gen_synthetic(n, seed, spec);
    fs::create_directories(out / "images");
    fs::create_directories(out / "labels");
    std::vector<crrn::ManifestEntry> entries;
    for (const auto& s : samples) {
        const fs::path image = fs::path("images") / (s.id + ".png");
        const fs::path labels = fs::path("labels") / (s.id + ".png");
        crrn::save_image(out / image, s.image);
        crrn::save_labels(out / labels, s.labels);
        entries.push_back({image, labels});
    }
    crrn::write_manifest(out / "manifest.tsv", entries);
    write_text(out / "spec.json", json(spec).dump(2) + "\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual recurrent residual network for per-pixel labelling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "crrn checkpoint format version " + std::to_string(crrn::kCheckpointVersion));

    int threads = 1;
    auto add_threads = [&threads](CLI::App* cmd) {
        cmd->add_option("--threads", threads, "Worker threads per wavefront; 1 is bitwise reproducible")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    };

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train on a manifest of labelled images");
    {
        auto& c = train.config;
        train_cmd->add_option("--manifest", train.manifest, "TSV of <image>\\t<labels> lines")->required();
        train_cmd->add_option("--out", train.out, "Output directory for checkpoints and log.jsonl")->required();
        train_cmd->add_option("--resume", train.resume, "Continue from this checkpoint");
        train_cmd->add_option("--epochs", c.epochs, "Total epochs to train")->capture_default_str();
        train_cmd->add_option("--learning-rate", c.learning_rate, "Initial learning rate")->capture_default_str();
        train_cmd->add_option("--decay-rate", c.decay_rate, "Learning-rate decay factor")->capture_default_str();
        train_cmd->add_option("--decay-every-epochs", c.decay_every_epochs, "Epochs between decays")
            ->capture_default_str();
        train_cmd->add_flag("--decay-once", c.decay_once, "Decay a single time instead of periodically");
        train_cmd->add_option("--batch-size", c.batch_size, "Images per SGD step")->capture_default_str();
        train_cmd->add_option("--seed", c.seed, "Seed for initialization, split and shuffling")->capture_default_str();
        train_cmd->add_option("--grad-clip-norm", train.grad_clip, "Global gradient-norm clip (0 disables)")
            ->capture_default_str();
        train_cmd->add_option("--num-classes", c.num_classes, "Number of classes (0 infers from labels)")
            ->capture_default_str();
        add_model_flags(train_cmd, c, train.connectivity);
        train_cmd->add_flag("--eval-running-stats", c.eval_running_stats,
                            "Evaluate batch norm with running statistics instead of per-map ones");
        train_cmd->add_flag("--no-recurrence", c.no_recurrence, "Hold W at zero (context ablation)");
        train_cmd->add_flag("--flip", c.flip, "Random horizontal flips");
        train_cmd->add_option("--validation-fraction", c.validation_fraction, "Share of images held out")
            ->capture_default_str();
        train_cmd->add_flag("--no-timing", train.no_timing, "Log seconds as 0 so logs compare byte for byte");
        add_threads(train_cmd);
    }

    fs::path infer_ckpt, infer_image, infer_out, infer_colors;
    auto* infer_cmd = app.add_subcommand("infer", "Label one image");
    infer_cmd->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
    infer_cmd->add_option("--image", infer_image, "Input image (PNG, PPM or PGM)")->required();
    infer_cmd->add_option("--out", infer_out, "Output label map (.png or .pgm)")->required();
    infer_cmd->add_option("--colors", infer_colors, "JSON palette [[r,g,b], ...]; also writes <out>_color.png");
    add_threads(infer_cmd);

    fs::path eval_ckpt, eval_manifest, eval_out;
    bool eval_oracle = false;
    auto* eval_cmd = app.add_subcommand("eval", "Pixel and class accuracy over a manifest");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint");
    eval_cmd->add_option("--manifest", eval_manifest, "TSV of <image>\\t<labels> lines")->required();
    eval_cmd->add_option("--out", eval_out, "Also write the JSON report here");
    eval_cmd->add_flag("--oracle", eval_oracle, "Score the ground truth against itself");
    add_threads(eval_cmd);

    GradcheckArgs gc;
    gc.shape.grid_rows = 2;
    gc.shape.grid_cols = 2;
    gc.shape.hidden_dim = 16;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
    add_model_flags(gc_cmd, gc.shape, gc.connectivity);
    gc_cmd->add_option("--block-h", gc.block_h, "Block height in pixels")->capture_default_str();
    gc_cmd->add_option("--block-w", gc.block_w, "Block width in pixels")->capture_default_str();
    gc_cmd->add_option("--channels", gc.channels, "Image channels")->capture_default_str();
    gc_cmd->add_option("--num-classes", gc.num_classes, "Number of classes")->capture_default_str();
    gc_cmd->add_option("--seed", gc.seed, "Seed for parameters and sample")->capture_default_str();
    gc_cmd->add_option("--tol", gc.tol, "Maximum relative error per tensor")->capture_default_str();
    gc_cmd->add_option("--format", gc.format, "text or jsonl")
        ->check(CLI::IsMember({"text", "jsonl"}))
        ->capture_default_str();

    fs::path synth_spec, synth_out;
    std::size_t synth_n = 10;
    std::uint64_t synth_seed = 0;
    std::optional<std::size_t> synth_size, synth_classes;
    auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic context dataset");
    synth_cmd->add_option("--spec", synth_spec, "JSON {size, num_classes, marker_distance_min, texture_seed_params}");
    synth_cmd->add_option("--n", synth_n, "Number of images")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--size", synth_size, "Override the image side length");
    synth_cmd->add_option("--num-classes", synth_classes, "Override the class count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train_cmd) {
            train.config.threads = threads;
            return cmd_train(train, train_cmd->count("--epochs") > 0);
        }
        if (*infer_cmd) return cmd_infer(infer_ckpt, infer_image, infer_out, infer_colors, threads);
        if (*eval_cmd) {
            if (!eval_oracle && eval_ckpt.empty()) throw UsageError("eval needs --checkpoint unless --oracle is given");
            return cmd_eval(eval_ckpt, eval_manifest, eval_out, eval_oracle, threads);
        }
        if (*gc_cmd) return cmd_gradcheck(gc);
        if (*synth_cmd) return cmd_synth(synth_spec, synth_n, synth_out, synth_seed, synth_size, synth_classes);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
