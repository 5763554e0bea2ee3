// Command-line driver: dataset generation, training, inference, evaluation,
// and schedule inspection for the recursive-denoising segmentation library.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffseg/diffseg.hpp"

namespace fs = std::filesystem;
using Scalar = float;  // training/inference precision; oracles in tests use double

// Exit codes (documented in the README):
//   0 success, 64 usage, 65 validation/data, 66 I/O, 70 training divergence.
enum ExitCode : int {
    kOk = 0,
    kUsage = 64,
    kValidation = 65,
    kIo = 66,
    kDiverged = 70,
};

namespace {

std::string default_out(const std::string& subcommand) {
    if (const char* root = std::getenv("DIFFSEG_OUT_ROOT")) {
        return std::string(root) + "/" + subcommand;
    }
    return {};
}

diffseg::ClassPalette palette_for(const std::string& name, int classes) {
    if (name == "uavid") return diffseg::uavid_palette();
    if (name == "shapes") return diffseg::shapes_palette(classes);
    if (name == "auto") return classes <= 4 ? diffseg::shapes_palette(classes) : diffseg::uavid_palette();
    throw diffseg::InvalidParameterError("unknown palette: " + name);
}

void echo_config(CLI::App* sub, const std::string& out_dir) {
    std::ofstream os(out_dir + "/config_resolved.ini");
    os << sub->config_to_str(true, true);
}

std::vector<int> parse_step_list(const std::string& csv) {
    std::vector<int> steps;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) steps.push_back(std::stoi(tok));
    }
    return steps;
}

/// Soft maps are stored as a one-line text header followed by little-endian
/// f32 data, channel-major.
void save_soft_map(const std::string& path, const diffseg::Tensor<Scalar>& soft) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw diffseg::IoError("cannot write " + path);
    os << "diffseg-softmap 1 " << soft.channels << " " << soft.height << " " << soft.width << "\n";
    std::vector<std::uint8_t> bytes;
    bytes.reserve(soft.data.size() * 4);
    for (const Scalar v : soft.data) diffseg::append_f32_le(bytes, static_cast<float>(v));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct TrainFlags {
    std::string data_dir, out_dir, resume, palette = "auto";
    int classes = 3;
    int base_channels = 32, depth = 3, embed_dim = 64;
    bool no_attention = false, no_augment = false, vflip = false, record_steps = false;
    int checkpoint_every = 1;
    diffseg::TrainConfig cfg;
};

int run_train(const TrainFlags& f, CLI::App* sub) {
    using namespace diffseg;
    fs::create_directories(f.out_dir);
    echo_config(sub, f.out_dir);

    const ClassPalette pal = palette_for(f.palette, f.classes);
    std::vector<Sample<Scalar>> dataset = load_dataset_dir<Scalar>(f.data_dir, pal);

    TrainConfig cfg = f.cfg;
    cfg.augment_enabled = !f.no_augment;
    if (f.vflip) cfg.augment.vflip_p = 0.5;
    cfg.record_step_losses = f.record_steps;

    std::unique_ptr<DenoiserNetwork<Scalar>> net;
    std::unique_ptr<AdamW<Scalar>> opt;
    int start_epoch = 0;

    if (!f.resume.empty()) {
        Checkpoint<Scalar> ck = load_checkpoint<Scalar>(f.resume);
        if (ck.denoiser.num_classes != pal.num_classes()) {
            throw CompatibilityError("checkpoint has " + std::to_string(ck.denoiser.num_classes) +
                                     " classes, dataset palette has " + std::to_string(pal.num_classes()));
        }
        net = std::move(ck.net);
        opt = std::move(ck.opt);
        cfg = ck.train;
        if (sub->count("--epochs") > 0) cfg.epochs = f.cfg.epochs;  // allow extending a finished run
        start_epoch = ck.epochs_done;
    } else {
        DenoiserConfig dcfg;
        dcfg.base_channels = f.base_channels;
        dcfg.depth = f.depth;
        dcfg.embed_dim = f.embed_dim;
        dcfg.num_classes = pal.num_classes();
        dcfg.attention_at_bottleneck = !f.no_attention;
        net = std::make_unique<DenoiserNetwork<Scalar>>(dcfg);
        net->init(cfg.seed);
        opt = std::make_unique<AdamW<Scalar>>(net->params(),
                                              typename AdamW<Scalar>::Hyper{0.9, 0.999, 1e-8, cfg.weight_decay});
    }

    std::ofstream log(f.out_dir + "/train_log.txt", start_epoch > 0 ? std::ios::app : std::ios::out);
    const std::string ckpt_path = f.out_dir + "/checkpoint.ckpt";

    TrainHooks<Scalar> hooks;
    hooks.on_step = [&](int epoch, int sample_idx, const StepLoss& s) {
        log << "epoch=" << epoch << " sample=" << sample_idx << " scale=" << s.scale << " t=" << s.t
            << " loss=" << s.loss << "\n";
    };
    hooks.on_epoch = [&](int epochs_done, const TrainReport& rep) {
        std::cout << "epoch " << epochs_done << "/" << cfg.epochs << "  mean loss "
                  << rep.epoch_mean_loss.back() << std::endl;
        if (f.checkpoint_every > 0 && (epochs_done % f.checkpoint_every == 0 || epochs_done == cfg.epochs)) {
            save_checkpoint(*net, *opt, cfg, epochs_done, ckpt_path);
        }
    };

    TrainReport report;
    try {
        report = train_loop(*net, *opt, dataset, cfg, start_epoch, hooks);
    } catch (const DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (fs::exists(ckpt_path)) std::cerr << "last good checkpoint retained at " << ckpt_path << "\n";
        return kDiverged;
    }

    save_checkpoint(*net, *opt, cfg, cfg.epochs, ckpt_path);

    {
        std::ofstream losses(f.out_dir + "/losses_epoch.txt");
        for (std::size_t i = 0; i < report.epoch_mean_loss.size(); ++i) {
            losses << (start_epoch + static_cast<int>(i) + 1) << " " << report.epoch_mean_loss[i] << "\n";
        }
        std::ofstream rep(f.out_dir + "/report.txt");
        rep << "epochs " << cfg.epochs << "\n";
        rep << "wall_seconds " << report.wall_seconds << "\n";
        rep << "param_checksum " << report.param_checksum << "\n";
    }
    std::cout << "checkpoint: " << ckpt_path << "  param checksum " << report.param_checksum << std::endl;
    return kOk;
}

struct InferFlags {
    std::string checkpoint, images, out, steps_csv, palette = "auto";
    int stride = 1, scales = 1, ensemble = 1;
    std::uint64_t seed = 0;
    bool save_soft = false;
};

int run_infer(const InferFlags& f, CLI::App* sub) {
    using namespace diffseg;
    fs::create_directories(f.out);
    echo_config(sub, f.out);

    Checkpoint<Scalar> ck = load_checkpoint<Scalar>(f.checkpoint);
    DenoiserNetwork<Scalar>& net = *ck.net;
    const ClassPalette pal = palette_for(f.palette, net.num_classes());
    if (pal.num_classes() != net.num_classes()) {
        throw CompatibilityError("palette has " + std::to_string(pal.num_classes()) + " classes, checkpoint has " +
                                 std::to_string(net.num_classes()));
    }
    const NoiseSchedule schedule = make_schedule(ck.train.time_steps);

    SampleConfig scfg;
    scfg.stride = f.stride;
    scfg.scales = f.scales;
    scfg.ensemble = f.ensemble;
    scfg.seed = f.seed;
    if (!f.steps_csv.empty()) scfg.steps = parse_step_list(f.steps_csv);

    // Accept either a dataset directory (manifest) or a flat directory of PNGs.
    std::vector<std::pair<std::string, std::string>> images;  // (path, basename)
    if (fs::exists(fs::path(f.images) / "manifest.txt")) {
        for (const auto& [img_rel, lbl_rel] : read_manifest(f.images)) {
            images.emplace_back(f.images + "/" + img_rel, fs::path(img_rel).filename().string());
        }
    } else {
        for (const auto& e : fs::directory_iterator(f.images)) {
            if (e.path().extension() == ".png") images.emplace_back(e.path().string(), e.path().filename().string());
        }
        std::sort(images.begin(), images.end());
    }
    if (images.empty()) throw IoError("no input images found in " + f.images);

    for (const auto& [path, base] : images) {
        Tensor<Scalar> img = load_image_png<Scalar>(path);
        SampleResult<Scalar> r = f.ensemble > 1 ? sample_ensemble(net, img, schedule, scfg)
                                                : sample(net, img, schedule, scfg);
        save_label_png(f.out + "/" + base, r.labels, pal);
        if (f.save_soft) {
            save_soft_map(f.out + "/" + fs::path(base).stem().string() + ".soft", r.soft);
        }
    }
    std::cout << "wrote " << images.size() << " predictions to " << f.out << std::endl;
    return kOk;
}

struct EvalFlags {
    std::string pred, truth, out, palette = "auto";
    int classes = 3;
};

int run_eval(const EvalFlags& f) {
    using namespace diffseg;
    const ClassPalette pal = palette_for(f.palette, f.classes);

    auto collect = [](const std::string& dir) {
        std::string base = dir;
        if (fs::exists(fs::path(dir) / "labels")) base = dir + "/labels";
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(base)) {
            if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
        }
        std::sort(names.begin(), names.end());
        return std::make_pair(base, names);
    };

    const auto [pred_base, pred_names] = collect(f.pred);
    const auto [truth_base, truth_names] = collect(f.truth);

    std::vector<std::string> only_pred, only_truth, common;
    std::set_difference(pred_names.begin(), pred_names.end(), truth_names.begin(), truth_names.end(),
                        std::back_inserter(only_pred));
    std::set_difference(truth_names.begin(), truth_names.end(), pred_names.begin(), pred_names.end(),
                        std::back_inserter(only_truth));
    std::set_intersection(pred_names.begin(), pred_names.end(), truth_names.begin(), truth_names.end(),
                          std::back_inserter(common));
    if (!only_pred.empty() || !only_truth.empty()) {
        std::cerr << "error: prediction and ground-truth files do not align\n";
        for (const auto& n : only_pred) std::cerr << "  only in predictions: " << n << "\n";
        for (const auto& n : only_truth) std::cerr << "  only in ground truth: " << n << "\n";
        return kValidation;
    }
    if (common.empty()) {
        std::cerr << "error: no label files found\n";
        return kValidation;
    }

    ConfusionMatrix cm(pal.num_classes());
    for (const auto& name : common) {
        IndexMap p = load_label_png(pred_base + "/" + name, pal);
        IndexMap t = load_label_png(truth_base + "/" + name, pal);
        cm.accumulate(p, t);
    }

    const std::string table = metrics_text_report(cm, pal.names);
    std::cout << table;
    if (!f.out.empty()) {
        fs::create_directories(fs::path(f.out).parent_path().empty() ? "." : fs::path(f.out).parent_path().string());
        std::ofstream os(f.out);
        os << metrics_kv_report(cm, pal.names);
    }
    return kOk;
}

struct InspectFlags {
    int time_steps = 25, stride = 1, scales = 1, width = 64, height = 64;
    std::string steps_csv, strip_out, labels_png, at_csv, palette = "auto";
    int classes = 3;
    std::uint64_t seed = 0;
};

int run_inspect(const InspectFlags& f) {
    using namespace diffseg;
    const NoiseSchedule sched = make_schedule(f.time_steps);

    std::cout << "noise schedule, T = " << sched.steps << "\n";
    std::cout << "  t     beta_t\n";
    for (int t = 0; t <= sched.steps; ++t) {
        std::printf("  %-5d %.6f\n", t, sched.beta(t));
    }

    std::vector<int> steps = f.steps_csv.empty() ? make_step_list(f.time_steps, f.stride)
                                                 : parse_step_list(f.steps_csv);
    validate_step_list(steps, f.time_steps);
    std::cout << "executed steps (" << steps.size() << "):";
    for (int t : steps) std::cout << " " << t;
    std::cout << "\n";

    std::cout << "scale ladder for " << f.width << "x" << f.height << ":\n";
    for (int m = f.scales; m >= 1; --m) {
        const int fdiv = 1 << (m - 1);
        std::cout << "  m=" << m << " -> " << (f.width / fdiv) << "x" << (f.height / fdiv) << "\n";
    }

    if (!f.strip_out.empty()) {
        if (f.labels_png.empty() || f.at_csv.empty()) {
            throw InvalidParameterError("--noise-strip needs --labels and --at");
        }
        const ClassPalette pal = palette_for(f.palette, f.classes);
        IndexMap labels = load_label_png(f.labels_png, pal);
        Tensor<float> onehot = one_hot_encode<float>(labels, pal.num_classes());
        std::vector<int> ats = parse_step_list(f.at_csv);
        Rng rng(f.seed);

        // One colored panel per requested t, argmax of the noised map.
        Tensor<float> strip(3, labels.height, labels.width * static_cast<int>(ats.size()));
        for (std::size_t i = 0; i < ats.size(); ++i) {
            auto [noisy, z] = diffuse(onehot, ats[i], sched, rng);
            IndexMap noisy_labels = argmax_decode(noisy);
            for (int y = 0; y < labels.height; ++y) {
                for (int x = 0; x < labels.width; ++x) {
                    const Rgb c = pal.colors[static_cast<std::size_t>(noisy_labels.at(y, x))];
                    strip.at(0, y, static_cast<int>(i) * labels.width + x) = static_cast<float>(c.r) / 255.0f;
                    strip.at(1, y, static_cast<int>(i) * labels.width + x) = static_cast<float>(c.g) / 255.0f;
                    strip.at(2, y, static_cast<int>(i) * labels.width + x) = static_cast<float>(c.b) / 255.0f;
                }
            }
        }
        save_image_png(f.strip_out, strip);
        std::cout << "noise strip written to " << f.strip_out << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recursive-denoising diffusion for multi-class semantic segmentation"};
    app.require_subcommand(1);

    // --- gen-data ---------------------------------------------------------
    struct {
        std::string out;
        int n = 100, size = 64, width = 0, height = 0, classes = 3;
        std::uint64_t seed = 0;
        bool overwrite = false;
    } gd;
    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset split");
    gen->add_option("--out", gd.out, "Output directory")->default_str(default_out("gen-data"));
    gen->add_option("--n", gd.n, "Number of samples")->check(CLI::NonNegativeNumber);
    gen->add_option("--size", gd.size, "Square image size");
    gen->add_option("--width", gd.width, "Image width (overrides --size)");
    gen->add_option("--height", gd.height, "Image height (overrides --size)");
    gen->add_option("--classes", gd.classes, "Class count (2..4)");
    gen->add_option("--seed", gd.seed, "Generator seed");
    gen->add_flag("--overwrite", gd.overwrite, "Allow writing into a non-empty directory");

    // --- train ------------------------------------------------------------
    TrainFlags tf;
    CLI::App* tr = app.add_subcommand("train", "Train with recursive denoising");
    tr->set_config("--config", "", "INI config file; command-line flags override file values");
    tr->add_option("--data", tf.data_dir, "Dataset directory (from gen-data)")->required();
    tr->add_option("--out", tf.out_dir, "Output directory")->default_str(default_out("train"));
    tr->add_option("--classes", tf.classes, "Class count for the palette");
    tr->add_option("--palette", tf.palette, "Palette: shapes, uavid or auto");
    tr->add_option("--time-steps", tf.cfg.time_steps, "Training time steps T");
    tr->add_option("--scales", tf.cfg.scales, "Hierarchical scales M (1 = plain recursive)");
    tr->add_option("--lr", tf.cfg.lr, "Initial learning rate");
    tr->add_option("--lr-decay-gamma", tf.cfg.lr_decay_gamma, "Per-epoch learning-rate multiplier");
    tr->add_option("--weight-decay", tf.cfg.weight_decay, "Decoupled weight decay");
    tr->add_option("--clip-norm", tf.cfg.clip_norm, "Global gradient-norm ceiling");
    tr->add_option("--epochs", tf.cfg.epochs, "Epoch count");
    tr->add_option("--seed", tf.cfg.seed, "Run seed");
    tr->add_option("--base-channels", tf.base_channels, "Network width");
    tr->add_option("--depth", tf.depth, "Down/up stages");
    tr->add_option("--embed-dim", tf.embed_dim, "Time-embedding width");
    tr->add_flag("--no-attention", tf.no_attention, "Disable bottleneck attention");
    tr->add_flag("--no-augment", tf.no_augment, "Disable data augmentation");
    tr->add_flag("--vflip", tf.vflip, "Also apply 50% vertical flips");
    tr->add_flag("--record-steps", tf.record_steps, "Keep per-step losses in the report");
    tr->add_option("--checkpoint-every", tf.checkpoint_every, "Checkpoint every k epochs (0 = end only)");
    tr->add_option("--resume", tf.resume, "Resume from a checkpoint file");

    // --- infer ------------------------------------------------------------
    InferFlags inf;
    CLI::App* in = app.add_subcommand("infer", "Predict segmentation maps for images");
    in->set_config("--config", "", "INI config file; command-line flags override file values");
    in->add_option("--checkpoint", inf.checkpoint, "Trained checkpoint")->required();
    in->add_option("--images", inf.images, "Dataset directory or directory of PNGs")->required();
    in->add_option("--out", inf.out, "Output directory")->default_str(default_out("infer"));
    in->add_option("--stride", inf.stride, "Execute every stride-th step from T down");
    in->add_option("--steps", inf.steps_csv, "Explicit decreasing step list, e.g. 25,20,15,10,5,1");
    in->add_option("--scales", inf.scales, "Hierarchical scales at inference");
    in->add_option("--ensemble", inf.ensemble, "Independent runs to average");
    in->add_option("--seed", inf.seed, "Noise seed");
    in->add_option("--palette", inf.palette, "Palette: shapes, uavid or auto");
    in->add_flag("--save-soft", inf.save_soft, "Also write continuous soft maps");

    // --- eval -------------------------------------------------------------
    EvalFlags ev;
    CLI::App* evc = app.add_subcommand("eval", "Evaluate predictions against ground truth");
    evc->add_option("--pred", ev.pred, "Predictions directory")->required();
    evc->add_option("--truth", ev.truth, "Ground-truth directory (dataset dir or label PNGs)")->required();
    evc->add_option("--classes", ev.classes, "Class count");
    evc->add_option("--palette", ev.palette, "Palette: shapes, uavid or auto");
    evc->add_option("--out", ev.out, "Write machine-readable key-value report here");

    // --- inspect-schedule ---------------------------------------------------
    InspectFlags is;
    CLI::App* ins = app.add_subcommand("inspect-schedule", "Print the noise schedule, step list and scale ladder");
    ins->add_option("--time-steps", is.time_steps, "T");
    ins->add_option("--stride", is.stride, "Step-list stride");
    ins->add_option("--steps", is.steps_csv, "Explicit step list");
    ins->add_option("--scales", is.scales, "Scales M");
    ins->add_option("--width", is.width, "Reference width");
    ins->add_option("--height", is.height, "Reference height");
    ins->add_option("--noise-strip", is.strip_out, "Write a PNG strip of noised label maps");
    ins->add_option("--labels", is.labels_png, "Label PNG for the noise strip");
    ins->add_option("--at", is.at_csv, "Time steps for the noise strip, e.g. 25,12,1");
    ins->add_option("--classes", is.classes, "Class count");
    ins->add_option("--palette", is.palette, "Palette: shapes, uavid or auto");
    ins->add_option("--seed", is.seed, "Noise seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) {
            if (gd.out.empty()) throw diffseg::InvalidParameterError("--out is required (or set DIFFSEG_OUT_ROOT)");
            if (gd.size < 1 && (gd.width < 1 || gd.height < 1)) {
                throw diffseg::InvalidParameterError("image size must be >= 1");
            }
            const int w = gd.width > 0 ? gd.width : gd.size;
            const int h = gd.height > 0 ? gd.height : gd.size;
            if (w < 1 || h < 1) throw diffseg::InvalidParameterError("image size must be >= 1");
            if (fs::exists(gd.out) && !fs::is_empty(gd.out) && !gd.overwrite) {
                std::cerr << "error: " << gd.out << " is not empty (use --overwrite)\n";
                return kValidation;
            }
            auto samples = diffseg::generate_shapes_dataset<Scalar>(gd.n, w, h, gd.classes, gd.seed);
            diffseg::save_dataset_dir(gd.out, samples, diffseg::shapes_palette(gd.classes));
            echo_config(gen, gd.out);
            std::cout << "wrote " << samples.size() << " samples to " << gd.out << std::endl;
            return kOk;
        }
        if (tr->parsed()) {
            if (tf.out_dir.empty()) throw diffseg::InvalidParameterError("--out is required (or set DIFFSEG_OUT_ROOT)");
            return run_train(tf, tr);
        }
        if (in->parsed()) {
            if (inf.out.empty()) throw diffseg::InvalidParameterError("--out is required (or set DIFFSEG_OUT_ROOT)");
            return run_infer(inf, in);
        }
        if (evc->parsed()) return run_eval(ev);
        if (ins->parsed()) return run_inspect(is);
    } catch (const diffseg::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const diffseg::DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const diffseg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kOk;
}
