#include "gblend/assets.hpp"

#include "gblend/blendpose.hpp"
#include "gblend/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gblend {

namespace {

constexpr double kShC0 = 0.28209479177387814;

// Head-shaped ellipsoid shell in rest space; the jaw hinges below and
// behind the mouth.
const Eigen::Vector3d kHeadRadii(0.09, 0.115, 0.1);
const Eigen::Vector3d kJawPivot(0.0, -0.02, -0.01);

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Quaternion (w, x, y, z) turning +z onto n.
Eigen::Vector4d quat_from_z(const Eigen::Vector3d &n) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), n);
    return {q.w(), q.x(), q.y(), q.z()};
}

Eigen::Vector3d skin_color(const Eigen::Vector3d &p, const Eigen::Vector3d &phase) {
    Eigen::Vector3d base(0.66, 0.5, 0.42);
    for (int c = 0; c < 3; ++c)
        base[c] += 0.12 * std::sin(40.0 * p.x() + phase[c]) * std::cos(30.0 * p.y() - phase[c]) +
                   0.05 * std::sin(25.0 * p.z() + 2.0 * phase[c]);
    return base;
}

void set_rgb(GaussianSet &set, std::size_t i, const Eigen::Vector3d &rgb) {
    for (int c = 0; c < 3; ++c) set.sh[i * set.sh_stride() + c] = static_cast<float>((rgb[c] - 0.5) / kShC0);
}

RigidTransform head_pose(double yaw, double pitch, const Eigen::Vector3d &shift) {
    RigidTransform t = rotation_about(Eigen::Vector3d::UnitY(), yaw) * rotation_about(Eigen::Vector3d::UnitX(), pitch);
    t.translation = shift;
    return t;
}

RigidTransform jaw_pose(const RigidTransform &head, double open) {
    return head * translation(kJawPivot) * rotation_about(Eigen::Vector3d::UnitX(), open) * translation(-kJawPivot);
}

BlendshapeModel ground_truth(const SynthConfig &cfg, Rng &rng) {
    const std::size_t n = static_cast<std::size_t>(cfg.gaussians);
    const std::size_t m = static_cast<std::size_t>(cfg.mouth_gaussians < 0 ? cfg.gaussians / 5 : cfg.mouth_gaussians);
    const int degree = cfg.sh_degree;
    BlendshapeModel model;
    model.joint_count = 2;
    model.mouth_joint = 1;
    model.neutral = GaussianSet(n, degree);
    model.skin_weights.assign(2 * n, 0.0f);

    // Surfels on the shell: Fibonacci lattice with jitter, thin along the
    // normal so the silhouette stays crisp.
    const double area = 4.0 * std::numbers::pi * std::pow(kHeadRadii.prod(), 2.0 / 3.0);
    const double spacing = std::sqrt(area / std::max<double>(1.0, static_cast<double>(n)));
    const Eigen::Vector3d phase(rng.uniform(0, 6.3), rng.uniform(0, 6.3), rng.uniform(0, 6.3));
    std::vector<Eigen::Vector3d> normals(n);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (static_cast<double>(i) + rng.uniform(0.25, 0.75)) / static_cast<double>(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double th = golden * static_cast<double>(i) + rng.uniform(-0.1, 0.1);
        const Eigen::Vector3d u(r * std::cos(th), y, r * std::sin(th));
        const Eigen::Vector3d p = u.cwiseProduct(kHeadRadii);
        const Eigen::Vector3d nrm = p.cwiseQuotient(kHeadRadii.cwiseProduct(kHeadRadii)).normalized();
        normals[i] = nrm;
        const Eigen::Vector4d q0 = quat_from_z(nrm);
        const double ang = rng.uniform(0, std::numbers::pi);
        const Eigen::Vector4d q = quat_multiply(q0, Eigen::Vector4d(std::cos(ang / 2), 0, 0, std::sin(ang / 2)));
        const double tangential = spacing * rng.uniform(0.75, 0.95);
        const double thin = spacing * 0.12;
        for (int a = 0; a < 3; ++a) model.neutral.centers[3 * i + a] = static_cast<float>(p[a]);
        model.neutral.scales[3 * i] = static_cast<float>(std::log(tangential));
        model.neutral.scales[3 * i + 1] = static_cast<float>(std::log(tangential * rng.uniform(0.8, 1.0)));
        model.neutral.scales[3 * i + 2] = static_cast<float>(std::log(thin));
        for (int a = 0; a < 4; ++a) model.neutral.rotations[4 * i + a] = static_cast<float>(q[a]);
        model.neutral.opacities[i] = static_cast<float>(logit(rng.uniform(0.93, 0.99)));
        set_rgb(model.neutral, i, skin_color(p, phase));
        for (int k = 3; k < model.neutral.sh_stride(); ++k)
            model.neutral.sh[i * model.neutral.sh_stride() + k] = static_cast<float>(rng.normal(0.0, 0.05));

        const double jaw = smoothstep(-0.02, -0.06, p.y()) * smoothstep(-0.02, 0.04, p.z());
        model.skin_weights[2 * i] = static_cast<float>(1.0 - jaw);
        model.skin_weights[2 * i + 1] = static_cast<float>(jaw);
    }

    // Expression bases: local bumps on the front of the face moving
    // surfels along their normals and recolouring them.
    model.deltas.assign(static_cast<std::size_t>(cfg.blendshapes), GaussianSet(n, degree));
    for (GaussianSet &d : model.deltas) {
        const Eigen::Vector3d dir = Eigen::Vector3d(rng.uniform(-0.7, 0.7), rng.uniform(-0.6, 0.4), 1.0).normalized();
        const Eigen::Vector3d focus = dir.cwiseProduct(kHeadRadii);
        const double width = rng.uniform(0.025, 0.04);
        const double push = rng.uniform(-0.006, 0.006);
        const Eigen::Vector3d tint(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
        const double grow = rng.uniform(-0.15, 0.15);
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::Vector3d p = model.neutral.center(i).cast<double>();
            const double b = std::exp(-(p - focus).squaredNorm() / (2.0 * width * width));
            for (int a = 0; a < 3; ++a) {
                d.centers[3 * i + a] = static_cast<float>(b * push * normals[i][a]);
                d.scales[3 * i + a] = a < 2 ? static_cast<float>(b * grow) : 0.0f;
            }
            for (int c = 0; c < 3; ++c) d.sh[i * d.sh_stride() + c] = static_cast<float>(b * tint[c] / kShC0);
        }
    }

    // Lips: small blobs in a horizontal cylinder poking through the shell
    // at the mouth, rigidly attached to the jaw.
    model.mouth = GaussianSet(m, degree);
    const Eigen::Vector3d mouth_center(0.0, -0.045, 0.085);
    for (std::size_t i = 0; i < m; ++i) {
        Eigen::Vector2d disc;
        do {
            disc = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        } while (disc.squaredNorm() > 1.0);
        const Eigen::Vector3d p = mouth_center + Eigen::Vector3d(rng.uniform(-0.028, 0.028), 0.012 * disc.x(), 0.012 * disc.y());
        for (int a = 0; a < 3; ++a) {
            model.mouth.centers[3 * i + a] = static_cast<float>(p[a]);
            model.mouth.scales[3 * i + a] = static_cast<float>(std::log(rng.uniform(0.004, 0.007)));
        }
        model.mouth.rotations[4 * i] = 1.0f;
        model.mouth.opacities[i] = static_cast<float>(logit(0.9));
        set_rgb(model.mouth, i, Eigen::Vector3d(0.75, 0.25 + 0.1 * disc.x(), 0.3));
    }
    model.validate();
    return model;
}

void jitter(std::vector<float> &values, double sigma, Rng &rng) {
    if (sigma <= 0) return;
    for (float &v : values) v = static_cast<float>(v + rng.normal(0.0, sigma));
}

BlendshapeModel perturb(const BlendshapeModel &truth, const SynthConfig &cfg, Rng &rng) {
    BlendshapeModel b = truth;
    auto perturb_set = [&](GaussianSet &s) {
        jitter(s.centers, cfg.noise_center, rng);
        jitter(s.scales, cfg.noise_scale, rng);
        jitter(s.rotations, cfg.noise_rotation, rng);
        jitter(s.opacities, cfg.noise_opacity, rng);
        const int stride = s.sh_stride();
        for (std::size_t i = 0; i < s.sh.size(); ++i) {
            const double sigma = static_cast<int>(i % stride) < 3 ? cfg.noise_sh_dc : cfg.noise_sh_rest;
            s.sh[i] = static_cast<float>(s.sh[i] + rng.normal(0.0, sigma));
        }
    };
    perturb_set(b.neutral);
    perturb_set(b.mouth);
    for (GaussianSet &d : b.deltas) {
        jitter(d.sh, cfg.noise_delta_sh, rng);
        jitter(d.scales, cfg.noise_delta_scale, rng);
    }
    return b;
}

Image quantize(const Image &img) {
    Image out = img;
    for (double &v : out.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

} // namespace

void SynthConfig::validate() const {
    if (gaussians <= 0) throw InvalidArgument("synth: gaussian count must be positive");
    if (blendshapes < 0) throw InvalidArgument("synth: blendshape count must be nonnegative");
    if (frames <= 0) throw InvalidArgument("synth: frame count must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("synth: image size must be positive");
    if (!(focal > 0)) throw InvalidArgument("synth: focal length must be positive");
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InvalidArgument("synth: SH degree must be 0..3");
}

SynthDataset synth_dataset(const SynthConfig &cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SynthDataset ds;
    ds.ground_truth = ground_truth(cfg, rng);

    Camera cam;
    cam.width = cfg.width;
    cam.height = cfg.height;
    cam.fx = cam.fy = cfg.focal * cfg.width / 128.0;
    cam.cx = 0.5 * cfg.width;
    cam.cy = 0.5 * cfg.height;
    cam.near = 0.01;
    cam.far = 10.0;
    cam.world_to_camera.rotation = Eigen::Vector3d(1, -1, -1).asDiagonal();
    cam.world_to_camera.translation = Eigen::Vector3d(0, 0, 0.6);

    // Smooth trajectories: a sinusoid per channel with random rate and phase.
    const int n = cfg.blendshapes;
    std::vector<double> rate(n + 3), phase(n + 3);
    for (int k = 0; k < n + 3; ++k) {
        rate[k] = rng.uniform(0.4, 1.2) * 2.0 * std::numbers::pi;
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    ds.params.expression_count = n;
    ds.params.joint_count = 2;
    for (int f = 0; f < cfg.frames; ++f) {
        const double t = static_cast<double>(f) / std::max(1, cfg.frames);
        FrameParams fp;
        fp.index = f;
        fp.camera = cam;
        for (int k = 0; k < n; ++k) fp.expression.push_back(0.5 + 0.5 * std::sin(rate[k] * t + phase[k]));
        const RigidTransform head = head_pose(0.12 * std::sin(rate[n] * t + phase[n]),
                                              0.06 * std::sin(rate[n + 1] * t + phase[n + 1]), Eigen::Vector3d::Zero());
        const double open = 0.15 * (0.5 + 0.5 * std::sin(rate[n + 2] * t + phase[n + 2]));
        fp.pose.joints = {head, jaw_pose(head, open)};
        ds.params.frames.push_back(std::move(fp));
    }
    ds.params.validate();

    for (const FrameParams &fp : ds.params.frames) {
        const RawGaussianSetD blended = blend_expression(ds.ground_truth, fp.expression);
        const PosedGaussianSet posed =
            concatenate(lbs(blended, ds.ground_truth.skin_weights, fp.pose), pose_mouth(ds.ground_truth, fp.pose));
        const RenderOutput out = render(posed, fp.camera);
        ds.images.push_back(FrameImagePair{quantize(out.rgb), binarize(out.alpha, 0.5)});
    }

    ds.init = perturb(ds.ground_truth, cfg, rng);
    return ds;
}

void write_dataset(const SynthDataset &ds, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    save_frame_params(ds.params, dir / "frames.json");
    for (std::size_t f = 0; f < ds.images.size(); ++f) {
        const int index = ds.params.frames[f].index;
        save_image(ds.images[f].target, frame_image_path(dir, index));
        save_image(ds.images[f].mask, frame_mask_path(dir, index));
    }
    save_model(ds.ground_truth, dir / "ground_truth.gbav");
    save_model(ds.init, dir / "init.gbav");
}

} // namespace gblend
