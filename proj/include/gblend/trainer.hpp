#pragma once

#include "gblend/assets.hpp"
#include "gblend/losses.hpp"
#include "gblend/metrics.hpp"
#include "gblend/rasterizer.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace gblend {

/// Per-property learning rates.
struct LearningRates {
    double center = 3.2e-7;
    double opacity = 5e-5;
    double scale = 5e-4;
    double rotation = 1e-4;
    double sh = 1.25e-3;
};

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    LearningRates rates;
    AdamParams adam;
    int iterations = 500;
    std::uint64_t seed = 0;
    LossWeights weights;
    CylinderVolume volume;
    int neutral_count = 50000;
    int mouth_count = 14000;
    /// Multiplies the center rate (3DGS-style scene-extent scaling).
    double position_lr_scale = 1.0;
    /// Every rate is multiplied by lr_decay^iteration; 1 keeps rates constant.
    double lr_decay = 1.0;
    /// Zero disables periodic checkpoints.
    int checkpoint_interval = 0;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    RasterSettings raster;

    void validate() const;
};

/// Gradients for every trainable array of a BlendshapeModel.
struct ModelGradients {
    GradientSet neutral;
    std::vector<GradientSet> deltas;
    GradientSet mouth;

    /// Total number of scalars, matching parameter_count(model).
    std::size_t size() const;
    /// Concatenated in canonical order: neutral, deltas, mouth; each as
    /// centers, scales, rotations, opacities, sh.
    std::vector<double> flatten() const;
};

std::size_t parameter_count(const BlendshapeModel &model);
std::vector<float> flatten_parameters(const BlendshapeModel &model);
void unflatten_parameters(std::span<const float> values, BlendshapeModel &model);

enum class ParamGroup { Center, Scale, Rotation, Opacity, Sh };
const char *group_name(ParamGroup group);
double group_rate(const LearningRates &rates, ParamGroup group);

/// Property group and human-readable location of flat parameter `index`.
struct ParamLocation {
    ParamGroup group;
    std::string where; // e.g. "delta 2 opacity[17]"
};
ParamLocation locate_parameter(const BlendshapeModel &model, std::size_t index);

struct TrainState {
    BlendshapeModel model;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t iteration = 0;
    Rng rng;

    static TrainState fresh(BlendshapeModel model, std::uint64_t seed);
    void validate() const;

    Checkpoint to_checkpoint() const;
    static TrainState from_checkpoint(const Checkpoint &checkpoint);
};

/// One bias-corrected Adam update over the whole model with per-group rates.
/// Throws NumericError naming the group and index of a non-finite gradient.
void adam_step(TrainState &state, const ModelGradients &grads, const TrainConfig &config);

/// Adam on a flat float array; `t` is the 1-based step number.
void adam_update(std::span<float> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, double rate, const AdamParams &adam, std::uint64_t t);

/// Forward chain for one frame: blend, skin, pose mouth, merge, render.
struct FrameRender {
    RawGaussianSetD blended;
    RenderOutput output;
};
FrameRender render_frame(const BlendshapeModel &model, const FrameParams &frame,
                         const Eigen::Vector3d &background = Eigen::Vector3d::Zero(),
                         const RasterSettings &settings = {});

struct FrameLoss {
    double total = 0.0;
    LossBreakdown terms;
};

/// Objective on one frame without gradients.
FrameLoss frame_loss(const BlendshapeModel &model, const FrameParams &frame, const FrameImagePair &target,
                     const TrainConfig &config);

/// Objective on one frame with the gradient for every model parameter.
FrameLoss frame_gradients(const BlendshapeModel &model, const FrameParams &frame, const FrameImagePair &target,
                          const TrainConfig &config, ModelGradients &grads);

/// Gradient evaluation followed by adam_step.
FrameLoss train_step(TrainState &state, const FrameParams &frame, const FrameImagePair &target,
                     const TrainConfig &config);

/// How initialize_model places the neutral Gaussians.
struct InitSpec {
    int expression_count = 0;
    int joint_count = 1;
    int mouth_joint = 0;
    int sh_degree = 0;
    /// Uniform samples inside this ellipsoid unless surface points are given.
    Eigen::Vector3d ellipsoid_center = Eigen::Vector3d::Zero();
    Eigen::Vector3d ellipsoid_radii = Eigen::Vector3d::Constant(0.1);
    /// Optional seeds (3P floats); neutral centers are drawn from these
    /// with replacement.
    std::vector<float> surface_points;
    /// Optional rest-space joint positions (3J); each Gaussian is bound to
    /// its nearest joint. Without them everything binds to joint 0.
    std::vector<double> joint_positions;
};

BlendshapeModel initialize_model(const TrainConfig &config, const InitSpec &spec);

/// Renders each frame and scores it against its target.
QualityReport evaluate(const BlendshapeModel &model, std::span<const FrameParams> frames,
                       std::span<const FrameImagePair> targets, const Eigen::Vector3d &background = Eigen::Vector3d::Zero(),
                       const RasterSettings &settings = {});

/// One line of the progress log.
struct LogRecord {
    std::uint64_t iter = 0;
    double total = 0.0;
    LossBreakdown terms;
    double wall_ms = 0.0;
};
std::string to_json(const LogRecord &record);

struct TrainHooks {
    /// Called after every step.
    std::function<void(const LogRecord &)> on_step;
    /// Called every checkpoint_interval steps.
    std::function<void(const TrainState &)> on_checkpoint;
};

/// Runs config.iterations steps (continuing from state.iteration), sampling
/// training frames uniformly with replacement from state.rng.
void train(TrainState &state, std::span<const FrameParams> frames, std::span<const FrameImagePair> targets,
           const TrainConfig &config, const TrainHooks &hooks = {});

} // namespace gblend
