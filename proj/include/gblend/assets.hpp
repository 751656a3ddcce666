#pragma once

#include "gblend/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gblend {

// ---------------------------------------------------------------------------
// Errors. Every loader rejects malformed input with one of these and never
// returns a partially filled object.

class FormatError : public Error {
public:
    using Error::Error;
};
class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};
class CountMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};
class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Binary model file ("GBAV", little-endian, see docs/formats.md).

constexpr std::uint32_t kModelFormatVersion = 1;
constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const BlendshapeModel &model);
BlendshapeModel decode_model(const std::vector<std::uint8_t> &bytes);
void save_model(const BlendshapeModel &model, const std::filesystem::path &path);
BlendshapeModel load_model(const std::filesystem::path &path);

/// Optimiser snapshot ("GBCK"). Moment buffers follow the model's parameter
/// order: neutral, deltas in order, mouth; each as centers, scales,
/// rotations, opacities, sh.
struct Checkpoint {
    std::uint64_t iteration = 0;
    BlendshapeModel model;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::string rng_state;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes);
void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes);

// ---------------------------------------------------------------------------
// Images. PNG (decoded at 8 bits) and binary PPM (P6) / PGM (P5, up to
// 16-bit), normalised to [0,1].

Image load_image(const std::filesystem::path &path);
/// 8-bit output; the format follows the extension (.png, .ppm, .pgm).
void save_image(const Image &image, const std::filesystem::path &path);
/// Values ≥ threshold become 1, the rest 0.
Image binarize(const Image &image, double threshold = 0.5);
/// Single-channel view of a mask image (first channel).
Image first_channel(const Image &image);

// ---------------------------------------------------------------------------
// Per-frame parameters (JSON, see docs/formats.md).

struct FrameParams {
    int index = 0;
    ExpressionCoeffs expression;
    PoseParams pose;
    Camera camera;
};

struct FrameParamsFile {
    int expression_count = 0;
    int joint_count = 0;
    std::vector<FrameParams> frames;

    void validate() const;
};

std::string frame_params_to_json(const FrameParamsFile &file);
FrameParamsFile frame_params_from_json(const std::string &text);
void save_frame_params(const FrameParamsFile &file, const std::filesystem::path &path);
FrameParamsFile load_frame_params(const std::filesystem::path &path);

struct FrameImagePair {
    Image target; // H x W x 3
    Image mask;   // H x W x 1, binarised
};

struct Sequence {
    FrameParamsFile params;
    std::vector<FrameImagePair> images;
};

/// Sequence directory layout: frames.json, images/NNNNN.{png,ppm},
/// masks/NNNNN.{png,pgm,ppm} with NNNNN the zero-padded frame index.
std::filesystem::path frame_image_path(const std::filesystem::path &dir, int index);
std::filesystem::path frame_mask_path(const std::filesystem::path &dir, int index);
Sequence load_sequence(const std::filesystem::path &dir, bool with_images = true);

/// Frames in a plain directory of images, sorted by file name.
std::vector<Image> load_image_directory(const std::filesystem::path &dir);

// ---------------------------------------------------------------------------
// Synthetic datasets: a random smooth head-like ground-truth model, smooth
// expression and pose trajectories, rendered targets and masks.

struct SynthConfig {
    int gaussians = 500;        // neutral set
    int mouth_gaussians = -1;   // negative: gaussians / 5
    int blendshapes = 4;
    int frames = 20;
    int width = 128;
    int height = 128;
    int sh_degree = 1;
    std::uint64_t seed = 0;
    /// Focal length in pixels for a 128-pixel-wide image (scaled with width).
    double focal = 200.0;

    // Perturbation applied to the ground truth to produce the training
    // start point (standard deviations in raw parameter units).
    double noise_center = 1e-4;
    double noise_scale = 0.25;
    double noise_rotation = 0.07;
    double noise_opacity = 0.05;
    double noise_sh_dc = 0.6;
    double noise_sh_rest = 0.3;
    double noise_delta_sh = 0.15;
    double noise_delta_scale = 0.05;

    void validate() const;
};

struct SynthDataset {
    BlendshapeModel ground_truth;
    BlendshapeModel init;
    FrameParamsFile params;
    /// Targets quantised to 8 bits exactly as written to disk.
    std::vector<FrameImagePair> images;
};

SynthDataset synth_dataset(const SynthConfig &config);
/// Writes frames.json, images/, masks/, ground_truth.gbav and init.gbav.
void write_dataset(const SynthDataset &dataset, const std::filesystem::path &dir);

} // namespace gblend
