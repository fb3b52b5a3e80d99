// bnfk: binary-network fake-image detector pipeline
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bnfk/binops.hpp"
#include "bnfk/data.hpp"
#include "bnfk/features.hpp"
#include "bnfk/metrics.hpp"
#include "bnfk/model.hpp"
#include "bnfk/train.hpp"

namespace fs = std::filesystem;
using namespace bnfk;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;
constexpr int kExitNumeric = 5;

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text;
        if (text.empty() || text.back() != '\n') std::cout << "\n";
        return;
    }
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    if (bytes.empty() || bytes.back() != '\n') bytes.push_back('\n');
    write_file(out_path, bytes);
}

FeatureConfig parse_channels(const std::string& spec) {
    FeatureConfig cfg;
    cfg.fft = cfg.lbp = cfg.sobel = false;
    if (spec.empty() || spec == "none" || spec == "rgb") return cfg;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "fft") cfg.fft = true;
        else if (tok == "lbp") cfg.lbp = true;
        else if (tok == "sobel") cfg.sobel = true;
        else throw CLI::ValidationError("--channels", "unknown channel: " + tok);
    }
    return cfg;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct TrainArgs {
    std::string data, out, log_path;
    std::string channels = "fft,lbp";
    std::uint64_t seed = 0;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::size_t img_size = 224;
    bool freeze = false;
    bool no_augment = false;
    double target_acc = 0.0, target_auc = 0.0;

    TrainConfig to_config() const {
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.max_epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.freeze_backbone = freeze;
        if (no_augment) {
            cfg.flips = false;
            cfg.rotations = false;
            cfg.color_jitter = 0.0;
        }
        cfg.channels = parse_channels(channels);
        cfg.crop_size = img_size;
        cfg.resize_longest = img_size * 9 / 8;  // keeps the 252:224 recipe ratio
        cfg.target_val_acc = target_acc;
        cfg.target_val_auc = target_auc;
        return cfg;
    }
};

TrainResult run_training(const TrainArgs& args, const TrainConfig& cfg,
                         std::ofstream* log_file) {
    DatasetManifest manifest = scan_directory(args.data);
    if (manifest.train.empty()) throw data_error("training split is empty");
    LoadedSplit train = load_split(manifest.train);
    LoadedSplit val = load_split(manifest.val);
    const Tensor& probe = train.images.front();
    ModelSpec spec = default_desk_spec(cfg.channels.channel_count(), cfg.crop_size,
                                       cfg.crop_size);
    (void)probe;
    ModelState init = make_initial_state(spec, cfg.seed);
    auto sink = [&](const std::string& line) {
        if (log_file) (*log_file) << line << "\n";
    };
    return train_loop(train, val, std::move(init), cfg, sink);
}

ModelState load_model_checked(const std::string& path) {
    if (!fs::exists(path)) throw data_error("model file not found: " + path);
    return load_model(path);
}

int cmd_synth(const std::string& out, std::size_t n, std::size_t size, std::uint64_t seed) {
    SyntheticParams p;
    p.n_per_class = n;
    p.size = size;
    p.seed = seed;
    generate_synthetic(p, out);
    std::cout << "{\"written\":" << 2 * n << ",\"root\":\"" << out << "\"}\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    TrainConfig cfg = args.to_config();
    const std::string log_path = args.log_path.empty() ? args.out + ".log" : args.log_path;
    std::string log_tmp = log_path + ".tmp";
    std::ofstream log_file(log_tmp, std::ios::trunc);
    if (!log_file) throw data_error("cannot open log file: " + log_tmp);
    TrainResult result = run_training(args, cfg, &log_file);
    log_file.close();
    if (std::rename(log_tmp.c_str(), log_path.c_str()) != 0)
        throw data_error("rename failed: " + log_path);
    save_model(result.best, args.out);
    const EpochStats& last = result.epochs.back();
    std::cout << "{\"epochs\":" << result.epochs.size() << ",\"val_acc\":" << fmt(last.val_acc)
              << ",\"val_auc\":" << fmt(last.val_auc) << ",\"model\":\"" << args.out
              << "\",\"log\":\"" << log_path << "\"}\n";
    return 0;
}

int cmd_eval(const std::string& data, const std::string& model_path, const std::string& out,
             const std::string& channels, std::size_t img_size) {
    ModelState model = load_model_checked(model_path);
    DatasetManifest manifest = scan_directory(data);
    const auto& entries = !manifest.test.empty() ? manifest.test
                         : !manifest.val.empty() ? manifest.val
                                                 : manifest.train;
    if (entries.empty()) throw data_error("no images to evaluate under " + data);
    TrainConfig cfg;
    cfg.channels = parse_channels(channels);
    cfg.crop_size = img_size;
    cfg.resize_longest = img_size * 9 / 8;
    if (cfg.channels.channel_count() != model.spec.in_channels)
        throw data_error("--channels does not match the model's input channel count");
    LoadedSplit split = load_split(entries);
    EvalReport report = evaluate(split, model, cfg);
    emit(out, report.to_json());
    return 0;
}

int cmd_predict(const std::string& image_path, const std::string& model_path,
                const std::string& out, const std::string& channels, std::size_t img_size) {
    ModelState model = load_model_checked(model_path);
    TrainConfig cfg;
    cfg.channels = parse_channels(channels);
    cfg.crop_size = img_size;
    cfg.resize_longest = img_size * 9 / 8;
    if (cfg.channels.channel_count() != model.spec.in_channels)
        throw data_error("--channels does not match the model's input channel count");
    Tensor image = load_pnm(image_path);
    const double p = predict_probability(image, model, cfg);
    std::ostringstream os;
    os << "{\"probability_fake\":" << fmt(p) << ",\"label\":\""
       << (p >= 0.5 ? "fake" : "real") << "\"}";
    emit(out, os.str());
    return 0;
}

int cmd_features(const std::string& image_path, const std::string& out_dir) {
    Tensor rgb = load_pnm(image_path);
    fs::create_directories(out_dir);
    write_file((fs::path(out_dir) / "gray.pgm").string(), encode_pgm(to_grayscale(rgb)));
    write_file((fs::path(out_dir) / "fft.pgm").string(),
               encode_pgm(fft_magnitude_channel(rgb)));
    write_file((fs::path(out_dir) / "lbp.pgm").string(), encode_pgm(lbp_channel(rgb)));
    write_file((fs::path(out_dir) / "sobel.pgm").string(), encode_pgm(sobel_channel(rgb)));
    std::cout << "{\"out_dir\":\"" << out_dir << "\",\"channels\":[\"gray\",\"fft\",\"lbp\",\"sobel\"]}\n";
    return 0;
}

int cmd_flops(const std::string& model_path, const std::string& channels,
              std::size_t img_size, const std::string& out) {
    ModelSpec spec;
    if (!model_path.empty()) {
        spec = load_model_checked(model_path).spec;
    } else {
        FeatureConfig fc = parse_channels(channels);
        spec = default_desk_spec(fc.channel_count(), img_size, img_size);
    }
    std::ostringstream os;
    os << "{\"layers\":[";
    auto layers = count_ops_per_layer(spec);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) os << ",";
        os << "{\"name\":\"" << layers[i].name << "\",\"flops\":" << layers[i].counts.flops
           << ",\"bops\":" << layers[i].counts.bops << ",\"effective_flops\":"
           << fmt(layers[i].counts.effective_flops) << ",\"param_bytes\":"
           << layers[i].counts.param_bytes << "}";
    }
    OpCounts t = count_ops(spec);
    OpCounts fp = count_ops_full_precision(spec);
    os << "],\"total\":{\"flops\":" << t.flops << ",\"bops\":" << t.bops
       << ",\"effective_flops\":" << fmt(t.effective_flops) << ",\"param_bytes\":"
       << t.param_bytes << "},\"full_precision_flops\":" << fp.flops << "}";
    emit(out, os.str());
    return 0;
}

int cmd_bench(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
              std::size_t pad, std::size_t input, std::size_t reps, bool suite,
              const std::string& out) {
    std::ostringstream os;
    if (suite) {
        const ConvSpec specs[] = {
            {1, 1, 1, 1, 1, 0},
            {16, 16, 3, 3, 1, 1},
            {64, 64, 3, 3, 1, 1},
            {256, 256, 3, 3, 1, 1},
        };
        const std::size_t sizes[] = {32, 32, 56, 56};
        for (int i = 0; i < 4; ++i)
            os << bench_conv(specs[i], sizes[i], sizes[i], reps).to_json() << "\n";
    } else {
        ConvSpec spec{in_c, out_c, kernel, kernel, stride, pad};
        os << bench_conv(spec, input, input, reps).to_json() << "\n";
    }
    emit(out, os.str());
    return 0;
}

int cmd_ablate(const TrainArgs& base, const std::string& out) {
    const char* configs[8] = {"",    "fft",       "lbp",       "sobel",
                              "fft,lbp", "fft,sobel", "lbp,sobel", "fft,lbp,sobel"};
    DatasetManifest manifest = scan_directory(base.data);
    if (manifest.train.empty()) throw data_error("training split is empty");
    LoadedSplit train = load_split(manifest.train);
    LoadedSplit val = load_split(manifest.val);
    const auto& eval_entries = !manifest.test.empty() ? manifest.test : manifest.val;
    if (eval_entries.empty()) throw data_error("no held-out split for ablation");
    LoadedSplit held = load_split(eval_entries);

    std::ostringstream os;
    os << "[";
    for (int i = 0; i < 8; ++i) {
        TrainArgs args = base;
        args.channels = configs[i];
        TrainConfig cfg = args.to_config();
        ModelSpec spec = default_desk_spec(cfg.channels.channel_count(), cfg.crop_size,
                                           cfg.crop_size);
        TrainResult result =
            train_loop(train, val, make_initial_state(spec, cfg.seed), cfg, {});
        EvalReport rep = evaluate(held, result.best, cfg);
        if (i) os << ",";
        os << "{\"channels\":\"" << (configs[i][0] ? configs[i] : "baseline")
           << "\",\"accuracy\":" << fmt(rep.accuracy) << ",\"auc\":" << fmt(rep.auc) << "}";
    }
    os << "]";
    emit(out, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"binary-network fake-image detection pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    std::string synth_out;
    std::size_t synth_n = 100, synth_size = 64;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--n-per-class", synth_n, "images per class");
    synth->add_option("--size", synth_size, "image side length");
    synth->add_option("--seed", synth_seed, "generator seed");

    // train
    auto* train = app.add_subcommand("train", "train a detector");
    TrainArgs targs;
    train->add_option("--data", targs.data, "dataset root")->required();
    train->add_option("--out", targs.out, "model output path")->required();
    train->add_option("--log", targs.log_path, "JSONL training log path");
    train->add_option("--seed", targs.seed, "training seed");
    train->add_option("--epochs", targs.epochs, "epoch limit");
    train->add_option("--batch-size", targs.batch_size, "batch size");
    train->add_option("--channels", targs.channels, "augmentation channels (fft,lbp[,sobel])");
    train->add_option("--img-size", targs.img_size, "network input side (224 = paper recipe)");
    train->add_flag("--freeze-backbone", targs.freeze, "exclude backbone parameters from updates");
    train->add_flag("--no-augment", targs.no_augment, "disable flips/rotations/color jitter");
    train->add_option("--target-acc", targs.target_acc, "stop once validation accuracy reached");
    train->add_option("--target-auc", targs.target_auc, "stop once validation AUC reached");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a model on the held-out split");
    std::string eval_data, eval_model, eval_out, eval_channels = "fft,lbp";
    std::size_t eval_img_size = 224;
    eval->add_option("--data", eval_data, "dataset root")->required();
    eval->add_option("--model", eval_model, "model path")->required();
    eval->add_option("--out", eval_out, "report path (default stdout)");
    eval->add_option("--channels", eval_channels, "channels used at train time");
    eval->add_option("--img-size", eval_img_size, "network input side");

    // predict
    auto* predict = app.add_subcommand("predict", "classify a single image");
    std::string pred_image, pred_model, pred_out, pred_channels = "fft,lbp";
    std::size_t pred_img_size = 224;
    predict->add_option("--image", pred_image, "PNM image")->required();
    predict->add_option("--model", pred_model, "model path")->required();
    predict->add_option("--out", pred_out, "output path (default stdout)");
    predict->add_option("--channels", pred_channels, "channels used at train time");
    predict->add_option("--img-size", pred_img_size, "network input side");

    // features
    auto* features = app.add_subcommand("features", "write augmentation channels as PGM");
    std::string feat_image, feat_out;
    features->add_option("--image", feat_image, "PNM image")->required();
    features->add_option("--out", feat_out, "output directory")->required();

    // flops
    auto* flops = app.add_subcommand("flops", "per-layer op accounting");
    std::string flops_model, flops_channels = "fft,lbp", flops_out;
    std::size_t flops_img_size = 224;
    flops->add_option("--model", flops_model, "model path (otherwise default topology)");
    flops->add_option("--channels", flops_channels, "channels for the default topology");
    flops->add_option("--img-size", flops_img_size, "nominal input side");
    flops->add_option("--out", flops_out, "output path (default stdout)");

    // bench
    auto* bench = app.add_subcommand("bench", "binary vs float convolution timings");
    std::size_t b_in = 16, b_out = 16, b_k = 3, b_stride = 1, b_pad = 1, b_input = 32,
                b_reps = 5;
    bool b_suite = false;
    std::string bench_out;
    bench->add_option("--in-channels", b_in);
    bench->add_option("--out-channels", b_out);
    bench->add_option("--kernel", b_k);
    bench->add_option("--stride", b_stride);
    bench->add_option("--pad", b_pad);
    bench->add_option("--input", b_input, "square input side");
    bench->add_option("--reps", b_reps, "repetitions (median)");
    bench->add_flag("--suite", b_suite, "run the standard shape suite");
    bench->add_option("--out", bench_out, "output path (default stdout)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train/eval every channel subset");
    TrainArgs aargs;
    std::string ablate_out;
    ablate->add_option("--data", aargs.data, "dataset root")->required();
    ablate->add_option("--seed", aargs.seed, "training seed");
    ablate->add_option("--epochs", aargs.epochs, "epoch limit");
    ablate->add_option("--batch-size", aargs.batch_size, "batch size");
    ablate->add_option("--img-size", aargs.img_size, "network input side");
    ablate->add_flag("--no-augment", aargs.no_augment, "disable flips/rotations/color jitter");
    ablate->add_option("--target-acc", aargs.target_acc, "early-stop validation accuracy");
    ablate->add_option("--target-auc", aargs.target_auc, "early-stop validation AUC");
    ablate->add_option("--out", ablate_out, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, synth_n, synth_size, synth_seed);
        if (train->parsed()) return cmd_train(targs);
        if (eval->parsed())
            return cmd_eval(eval_data, eval_model, eval_out, eval_channels, eval_img_size);
        if (predict->parsed())
            return cmd_predict(pred_image, pred_model, pred_out, pred_channels, pred_img_size);
        if (features->parsed()) return cmd_features(feat_image, feat_out);
        if (flops->parsed())
            return cmd_flops(flops_model, flops_channels, flops_img_size, flops_out);
        if (bench->parsed())
            return cmd_bench(b_in, b_out, b_k, b_stride, b_pad, b_input, b_reps, b_suite,
                             bench_out);
        if (ablate->parsed()) return cmd_ablate(aargs, ablate_out);
    } catch (const model_format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitModel;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitUsage;
}
