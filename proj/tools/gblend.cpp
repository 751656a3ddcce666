// gblend command-line driver.
//
// Exit codes: 0 success, 1 user error (bad flags, bad input files),
// 2 internal error.

#include "gblend/assets.hpp"
#include "gblend/blendpose.hpp"
#include "gblend/metrics.hpp"
#include "gblend/rasterizer.hpp"
#include "gblend/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct UserError : gblend::Error {
    using gblend::Error::Error;
};

int g_threads = 0;

gblend::RasterSettings raster_settings() {
    gblend::RasterSettings s;
    s.threads = g_threads;
    return s;
}

Eigen::Vector3d background_from(const std::vector<double> &bg) {
    if (bg.size() != 3) throw UserError("--background needs three values (r g b)");
    return {bg[0], bg[1], bg[2]};
}

void write_text(const fs::path &path, const std::string &text) {
    gblend::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Flags from a JSON object are appended unless already given on the command
// line, so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string> &args) {
    std::vector<std::string> out;
    std::optional<std::string> config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UserError("--config needs a file name");
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (!config) return out;
    std::ifstream in(*config);
    if (!in) throw UserError("cannot open config file " + *config);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw UserError("config file " + *config + " is not valid JSON");
    }
    if (!j.is_object()) throw UserError("config file must hold a JSON object of flag values");
    auto given = [&](const std::string &flag) {
        for (const std::string &a : out)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    auto scalar = [](const json &v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        if (v.is_number()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
            return buf;
        }
        throw UserError("config values must be strings, numbers, booleans or arrays of those");
    };
    for (const auto &[key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (given(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            out.push_back(flag);
            for (const json &v : value) out.push_back(scalar(v));
        } else {
            out.push_back(flag);
            out.push_back(scalar(value));
        }
    }
    return out;
}

// --- render / animate ---------------------------------------------------

gblend::Camera resized(gblend::Camera cam, int width, int height) {
    if (width <= 0 && height <= 0) return cam;
    const int w = width > 0 ? width : cam.width;
    const int h = height > 0 ? height : cam.height;
    const double sx = static_cast<double>(w) / cam.width, sy = static_cast<double>(h) / cam.height;
    cam.fx *= sx;
    cam.cx *= sx;
    cam.fy *= sy;
    cam.cy *= sy;
    cam.width = w;
    cam.height = h;
    return cam;
}

fs::path frames_file(const fs::path &p) { return fs::is_directory(p) ? p / "frames.json" : p; }

struct RenderArgs {
    std::string model, frames, out;
    int index = 0, width = 0, height = 0;
    std::vector<double> background{0, 0, 0};
};

int cmd_render(const RenderArgs &a) {
    const gblend::BlendshapeModel model = gblend::load_model(a.model);
    const gblend::FrameParamsFile params = gblend::load_frame_params(frames_file(a.frames));
    if (a.index < 0 || a.index >= static_cast<int>(params.frames.size()))
        throw UserError("frame index " + std::to_string(a.index) + " out of range: the sequence has " +
                        std::to_string(params.frames.size()) + " frames (valid 0.." +
                        std::to_string(static_cast<long>(params.frames.size()) - 1) + ")");
    gblend::FrameParams frame = params.frames[a.index];
    frame.camera = resized(frame.camera, a.width, a.height);
    const auto r = gblend::render_frame(model, frame, background_from(a.background), raster_settings());
    gblend::save_image(r.output.rgb, a.out);
    return 0;
}

struct AnimateArgs {
    std::string model, frames, out_dir;
    int width = 0, height = 0;
    std::vector<double> background{0, 0, 0};
};

int cmd_animate(const AnimateArgs &a) {
    const gblend::BlendshapeModel model = gblend::load_model(a.model);
    const gblend::FrameParamsFile params = gblend::load_frame_params(frames_file(a.frames));
    if (params.frames.empty()) throw UserError("the sequence has no frames");
    fs::create_directories(a.out_dir);
    const Eigen::Vector3d bg = background_from(a.background);
    double render_s = 0.0;
    for (gblend::FrameParams frame : params.frames) {
        frame.camera = resized(frame.camera, a.width, a.height);
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = gblend::render_frame(model, frame, bg, raster_settings());
        render_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char name[32];
        std::snprintf(name, sizeof name, "%05d.png", frame.index);
        gblend::save_image(r.output.rgb, fs::path(a.out_dir) / name);
    }
    const std::size_t n = params.frames.size();
    ordered_json report;
    report["frames"] = n;
    report["render_seconds"] = render_s;
    report["fps"] = render_s > 0 ? static_cast<double>(n) / render_s : 0.0;
    write_text(fs::path(a.out_dir) / "report.json", report.dump(2) + "\n");
    std::printf("rendered %zu frames in %.3f s (%.2f frames/s)\n", n, render_s, report["fps"].get<double>());
    return 0;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data_dir, out, init;
    int iters = 500;
    std::uint64_t seed = 0;
    int holdout = 4;
    int checkpoint_every = 0;
    gblend::TrainConfig config;
    int sh_degree = 0;
    std::vector<double> init_center{0, 0, 0};
    std::vector<double> init_radii{0.1, 0.12, 0.1};
    std::vector<double> mouth_volume; // cx cy cz radius half_height, axis x
    std::vector<double> background{0, 0, 0};
};

double mean_loss(const gblend::BlendshapeModel &model, std::span<const gblend::FrameParams> frames,
                 std::span<const gblend::FrameImagePair> targets, const gblend::TrainConfig &config) {
    double sum = 0.0;
    for (std::size_t f = 0; f < frames.size(); ++f) sum += gblend::frame_loss(model, frames[f], targets[f], config).total;
    return sum / static_cast<double>(frames.size());
}

int cmd_train(TrainArgs a) {
    const gblend::Sequence seq = gblend::load_sequence(a.data_dir);
    const std::size_t total = seq.params.frames.size();
    if (a.holdout < 0 || static_cast<std::size_t>(a.holdout) >= total)
        throw UserError("--holdout must leave at least one training frame (sequence has " + std::to_string(total) +
                        " frames)");
    const std::size_t n_train = total - static_cast<std::size_t>(a.holdout);
    const std::span<const gblend::FrameParams> train_frames(seq.params.frames.data(), n_train);
    const std::span<const gblend::FrameImagePair> train_targets(seq.images.data(), n_train);

    gblend::TrainConfig &cfg = a.config;
    cfg.iterations = a.iters;
    cfg.seed = a.seed;
    cfg.checkpoint_interval = a.checkpoint_every;
    cfg.background = background_from(a.background);
    cfg.raster = raster_settings();

    gblend::BlendshapeModel model;
    if (!a.mouth_volume.empty()) {
        if (a.mouth_volume.size() != 5) throw UserError("--mouth-volume needs cx cy cz radius half_height");
        cfg.volume.center = {a.mouth_volume[0], a.mouth_volume[1], a.mouth_volume[2]};
        cfg.volume.axis = Eigen::Vector3d::UnitX();
        cfg.volume.radius = a.mouth_volume[3];
        cfg.volume.half_height = a.mouth_volume[4];
    }
    if (!a.init.empty()) {
        model = gblend::load_model(a.init);
        if (static_cast<int>(model.expression_count()) != seq.params.expression_count ||
            model.joint_count != seq.params.joint_count)
            throw UserError("initial model dimensions do not match the frame parameters");
        if (a.mouth_volume.empty()) cfg.volume = gblend::CylinderVolume::fit(model.mouth.centers);
    } else {
        if (a.init_center.size() != 3 || a.init_radii.size() != 3)
            throw UserError("--init-center and --init-radii need three values each");
        gblend::InitSpec spec;
        spec.expression_count = seq.params.expression_count;
        spec.joint_count = seq.params.joint_count;
        spec.mouth_joint = seq.params.joint_count - 1;
        spec.sh_degree = a.sh_degree;
        spec.ellipsoid_center = {a.init_center[0], a.init_center[1], a.init_center[2]};
        spec.ellipsoid_radii = {a.init_radii[0], a.init_radii[1], a.init_radii[2]};
        if (a.mouth_volume.empty()) {
            // lower front of the bounding ellipsoid, horizontal
            const Eigen::Vector3d r = spec.ellipsoid_radii;
            cfg.volume.center = spec.ellipsoid_center + Eigen::Vector3d(0, -0.4 * r.y(), 0.6 * r.z());
            cfg.volume.axis = Eigen::Vector3d::UnitX();
            cfg.volume.radius = 0.15 * r.minCoeff();
            cfg.volume.half_height = 0.3 * r.x();
        }
        model = gblend::initialize_model(cfg, spec);
    }
    cfg.validate();

    const fs::path out(a.out);
    fs::create_directories(out);
    if (cfg.checkpoint_interval > 0) fs::create_directories(out / "checkpoints");
    std::ofstream log(out / "loss_log.jsonl", std::ios::trunc);
    if (!log) throw gblend::IoError("cannot write " + (out / "loss_log.jsonl").string());

    const double initial = mean_loss(model, train_frames, train_targets, cfg);
    gblend::TrainState state = gblend::TrainState::fresh(std::move(model), cfg.seed);
    gblend::TrainHooks hooks;
    hooks.on_step = [&](const gblend::LogRecord &r) { log << gblend::to_json(r) << "\n"; };
    hooks.on_checkpoint = [&](const gblend::TrainState &s) {
        char name[48];
        std::snprintf(name, sizeof name, "ckpt_%06llu.gbck", static_cast<unsigned long long>(s.iteration));
        gblend::save_checkpoint(s.to_checkpoint(), out / "checkpoints" / name);
    };
    const auto t0 = std::chrono::steady_clock::now();
    gblend::train(state, train_frames, train_targets, cfg, hooks);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.close();
    gblend::save_model(state.model, out / "model.gbav");
    if (cfg.checkpoint_interval > 0) gblend::save_checkpoint(state.to_checkpoint(), out / "checkpoints" / "final.gbck");

    const double final_loss = mean_loss(state.model, train_frames, train_targets, cfg);
    ordered_json summary;
    summary["iterations"] = state.iteration;
    summary["train_frames"] = n_train;
    summary["heldout_frames"] = a.holdout;
    summary["initial_loss"] = initial;
    summary["final_loss"] = final_loss;
    summary["loss_ratio"] = initial > 0 ? final_loss / initial : 0.0;
    summary["train_seconds"] = seconds;
    if (a.holdout > 0) {
        const gblend::QualityReport q = gblend::evaluate(
            state.model, std::span(seq.params.frames).subspan(n_train), std::span(seq.images).subspan(n_train),
            cfg.background, cfg.raster);
        summary["heldout"] = json::parse(gblend::to_json(q));
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::printf("trained %llu iterations in %.1f s: loss %.6g -> %.6g (%.1f%%)", static_cast<unsigned long long>(state.iteration),
                seconds, initial, final_loss, 100.0 * summary["loss_ratio"].get<double>());
    if (a.holdout > 0) std::printf(", held-out PSNR %.2f dB", summary["heldout"]["mean_psnr"].get<double>());
    std::printf("\n");
    return 0;
}

// --- metrics --------------------------------------------------------------

int cmd_stability(const std::string &dir, const std::string &json_out) {
    gblend::VideoSequence video;
    video.frames = gblend::load_image_directory(dir);
    if (video.frames.size() < 2) throw UserError("stability metrics need at least two frames in " + dir);
    const gblend::StabilityReport r = gblend::stability_report(video);
    std::cout << gblend::to_text(r);
    const std::string j = gblend::to_json(r);
    std::cout << j << "\n";
    if (!json_out.empty()) write_text(json_out, j + "\n");
    return 0;
}

int cmd_quality(const std::string &render_dir, const std::string &target_dir, const std::string &json_out) {
    const std::vector<gblend::Image> renders = gblend::load_image_directory(render_dir);
    const std::vector<gblend::Image> targets = gblend::load_image_directory(target_dir);
    if (renders.empty()) throw UserError("no images in " + render_dir);
    if (renders.size() != targets.size())
        throw UserError(render_dir + " holds " + std::to_string(renders.size()) + " images but " + target_dir +
                        " holds " + std::to_string(targets.size()));
    const gblend::QualityReport r = gblend::quality_report(renders, targets);
    std::cout << gblend::to_text(r);
    const std::string j = gblend::to_json(r);
    std::cout << j << "\n";
    if (!json_out.empty()) write_text(json_out, j + "\n");
    return 0;
}

// --- synth ----------------------------------------------------------------

int cmd_synth(const gblend::SynthConfig &cfg, const std::string &out_dir) {
    const gblend::SynthDataset ds = gblend::synth_dataset(cfg);
    gblend::write_dataset(ds, out_dir);
    std::printf("wrote %d frames (%dx%d), %d Gaussians + %zu mouth, %d blendshapes to %s\n", cfg.frames, cfg.width,
                cfg.height, cfg.gaussians, ds.ground_truth.mouth.size(), cfg.blendshapes, out_dir.c_str());
    return 0;
}

int run(int argc, char **argv) {
    CLI::App app{"Gaussian blendshape head avatars: render, animate, train, evaluate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "gblend 1.0");
    int threads = -1;
    app.add_option("--threads", threads, "Worker cap (default: GBLEND_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--config", "JSON object of flag values; explicit flags take precedence");

    std::function<int()> action;

    RenderArgs ra;
    auto *render = app.add_subcommand("render", "Render one frame of a sequence");
    render->add_option("--model", ra.model, "Model file (.gbav)")->required();
    render->add_option("--frames", ra.frames, "frames.json or a sequence directory")->required();
    render->add_option("--frame-index", ra.index, "Position of the frame in the sequence")->required();
    render->add_option("--out", ra.out, "Output image (.png, .ppm)")->required();
    render->add_option("--width", ra.width, "Override output width")->check(CLI::PositiveNumber);
    render->add_option("--height", ra.height, "Override output height")->check(CLI::PositiveNumber);
    render->add_option("--background", ra.background, "Background colour r g b")->expected(3);
    render->callback([&] { action = [&] { return cmd_render(ra); }; });

    AnimateArgs aa;
    auto *animate = app.add_subcommand("animate", "Render a whole sequence and report throughput");
    animate->add_option("--model", aa.model, "Model file (.gbav)")->required();
    animate->add_option("--frames", aa.frames, "frames.json or a sequence directory")->required();
    animate->add_option("--out-dir", aa.out_dir, "Output directory")->required();
    animate->add_option("--width", aa.width, "Override output width")->check(CLI::PositiveNumber);
    animate->add_option("--height", aa.height, "Override output height")->check(CLI::PositiveNumber);
    animate->add_option("--background", aa.background, "Background colour r g b")->expected(3);
    animate->callback([&] { action = [&] { return cmd_animate(aa); }; });

    TrainArgs ta;
    auto *train = app.add_subcommand("train", "Fit a blendshape model to a sequence");
    train->add_option("--data-dir", ta.data_dir, "Sequence directory")->required();
    train->add_option("--out", ta.out, "Output directory")->required();
    train->add_option("--iters", ta.iters, "Iterations")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", ta.seed, "Random seed");
    train->add_option("--init", ta.init, "Start from this model instead of sampling one");
    train->add_option("--holdout", ta.holdout, "Trailing frames kept for evaluation")->check(CLI::NonNegativeNumber);
    train->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval (0: off)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--lr-center", ta.config.rates.center)->check(CLI::PositiveNumber);
    train->add_option("--lr-opacity", ta.config.rates.opacity)->check(CLI::PositiveNumber);
    train->add_option("--lr-scale", ta.config.rates.scale)->check(CLI::PositiveNumber);
    train->add_option("--lr-rotation", ta.config.rates.rotation)->check(CLI::PositiveNumber);
    train->add_option("--lr-sh", ta.config.rates.sh)->check(CLI::PositiveNumber);
    train->add_option("--beta1", ta.config.adam.beta1);
    train->add_option("--beta2", ta.config.adam.beta2);
    train->add_option("--epsilon", ta.config.adam.epsilon);
    train->add_option("--position-lr-scale", ta.config.position_lr_scale, "Center rate multiplier (scene extent)");
    train->add_option("--lr-decay", ta.config.lr_decay, "Per-iteration rate multiplier (1: constant)");
    train->add_option("--weight-rgb", ta.config.weights.rgb);
    train->add_option("--weight-alpha", ta.config.weights.alpha);
    train->add_option("--weight-reg", ta.config.weights.reg);
    train->add_option("--lambda-rgb", ta.config.weights.lambda_rgb);
    train->add_option("--neutral-count", ta.config.neutral_count)->check(CLI::PositiveNumber);
    train->add_option("--mouth-count", ta.config.mouth_count)->check(CLI::PositiveNumber);
    train->add_option("--sh-degree", ta.sh_degree)->check(CLI::Range(0, 3));
    train->add_option("--init-center", ta.init_center, "Sampling ellipsoid center")->expected(3);
    train->add_option("--init-radii", ta.init_radii, "Sampling ellipsoid radii")->expected(3);
    train->add_option("--mouth-volume", ta.mouth_volume, "Mouth cylinder: cx cy cz radius half_height (x axis)")
        ->expected(5);
    train->add_option("--background", ta.background, "Background colour r g b")->expected(3);
    train->callback([&] { action = [&] { return cmd_train(ta); }; });

    std::string video_dir, render_dir, target_dir, json_out;
    auto *metrics = app.add_subcommand("metrics", "Image quality and video stability metrics");
    metrics->require_subcommand(1);
    auto *stability = metrics->add_subcommand("stability", "ITF / ISI of a frame directory");
    stability->add_option("--video-dir", video_dir, "Directory of frames")->required();
    stability->add_option("--json", json_out, "Also write the JSON report here");
    stability->callback([&] { action = [&] { return cmd_stability(video_dir, json_out); }; });
    auto *quality = metrics->add_subcommand("quality", "PSNR / SSIM of renders against targets");
    quality->add_option("--render-dir", render_dir, "Rendered frames")->required();
    quality->add_option("--target-dir", target_dir, "Reference frames")->required();
    quality->add_option("--json", json_out, "Also write the JSON report here");
    quality->callback([&] { action = [&] { return cmd_quality(render_dir, target_dir, json_out); }; });

    gblend::SynthConfig sc;
    std::string synth_out;
    auto *synth = app.add_subcommand("synth", "Generate a synthetic training sequence");
    synth->add_option("--out-dir", synth_out, "Output directory")->required();
    synth->add_option("--gaussians", sc.gaussians)->check(CLI::PositiveNumber);
    synth->add_option("--mouth-gaussians", sc.mouth_gaussians, "Default: gaussians / 5");
    synth->add_option("--blendshapes", sc.blendshapes)->check(CLI::NonNegativeNumber);
    synth->add_option("--frames", sc.frames)->check(CLI::PositiveNumber);
    synth->add_option("--seed", sc.seed);
    synth->add_option("--width", sc.width)->check(CLI::PositiveNumber);
    synth->add_option("--height", sc.height)->check(CLI::PositiveNumber);
    synth->add_option("--sh-degree", sc.sh_degree)->check(CLI::Range(0, 3));
    synth->add_option("--focal", sc.focal, "Focal length in pixels at 128 px width")->check(CLI::PositiveNumber);
    synth->add_option("--noise-center", sc.noise_center)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-scale", sc.noise_scale)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-rotation", sc.noise_rotation)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-opacity", sc.noise_opacity)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-sh-dc", sc.noise_sh_dc)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-sh-rest", sc.noise_sh_rest)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-delta-sh", sc.noise_delta_sh)->check(CLI::NonNegativeNumber);
    synth->add_option("--noise-delta-scale", sc.noise_delta_scale)->check(CLI::NonNegativeNumber);
    synth->callback([&] { action = [&] { return cmd_synth(sc, synth_out); }; });

    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (threads >= 0) {
        g_threads = threads;
    } else if (const char *env = std::getenv("GBLEND_THREADS"); env && *env) {
        char *end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 0) throw UserError("GBLEND_THREADS must be a nonnegative integer");
        g_threads = static_cast<int>(v);
    }
    return action ? action() : 1;
}

} // namespace

int main(int argc, char **argv) {
    try {
        return run(argc, argv);
    } catch (const gblend::Error &e) {
        std::fprintf(stderr, "gblend: error: %s\n", e.what());
        return 1;
    } catch (const std::filesystem::filesystem_error &e) {
        std::fprintf(stderr, "gblend: error: %s\n", e.what());
        return 1;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "gblend: internal error: %s\n", e.what());
        return 2;
    }
}
