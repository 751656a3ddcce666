#pragma once

#include "gblend/model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gblend {

struct RasterSettings {
    int tile_size = 16;
    /// Contributions with α′ below this are skipped.
    double alpha_cutoff = 1.0 / 255.0;
    /// A pixel stops compositing once its transmittance drops below this.
    /// Non-positive disables early termination.
    double min_transmittance = 1e-4;
    /// Added to the diagonal of every projected covariance, pixels².
    double low_pass = 0.3;
    /// Projected means further than this fraction of the image outside
    /// the frame are culled.
    double guard_band = 0.3;
    /// Worker cap; 0 lets OpenMP decide.
    int threads = 0;
};

/// One projected Gaussian. Pixel (x, y) is sampled at (x + 0.5, y + 0.5).
struct SplatRecord {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity(); // dilated
    double depth = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double opacity = 0.0;
    std::uint32_t source = 0;
    std::uint8_t clamped = 0; // colour channels clamped to [0,1]
};

/// Per-record gradient of a scalar loss.
struct SplatGradient {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    /// Full-matrix gradient w.r.t. the inverse covariance (conic).
    Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double opacity = 0.0;
};

struct RenderOutput {
    Image rgb;   // H x W x 3
    Image alpha; // H x W x 1, accumulated opacity
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    RasterSettings settings;
    /// Depth-sorted (stable, ties by source index).
    std::vector<SplatRecord> records;

    // Compositing trace, present only for the tiled path.
    bool has_trace = false;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::uint32_t> tile_offsets; // tiles + 1 prefix offsets into tile_entries
    std::vector<std::uint32_t> tile_entries; // record indices per tile, depth order
    std::vector<std::uint32_t> pixel_end;    // per pixel: tile-list position after the last visited entry
    std::vector<std::uint64_t> pixel_signature;

    // Inputs retained by render() so the backward pass can be replayed.
    std::optional<PosedGaussianSet> posed;
    std::optional<Camera> camera;

    /// Hash of every discrete decision of the forward pass (culling, colour
    /// clamping, per-pixel contributor lists, termination). Two renders with
    /// equal signatures lie on the same smooth piece of the render function.
    std::uint64_t structure_signature() const;
};

/// EWA projection of posed Gaussians. Records come back in source order.
std::vector<SplatRecord> project(const PosedGaussianSet &set, const Camera &camera,
                                 const RasterSettings &settings = {});

/// Tile-based front-to-back compositing.
RenderOutput rasterize(std::vector<SplatRecord> records, int width, int height,
                       const Eigen::Vector3d &background = Eigen::Vector3d::Zero(),
                       const RasterSettings &settings = {});

/// Brute-force per-pixel loop over all sorted records; verification oracle.
RenderOutput rasterize_reference(std::vector<SplatRecord> records, int width, int height,
                                 const Eigen::Vector3d &background = Eigen::Vector3d::Zero(),
                                 const RasterSettings &settings = {});

/// Adjoint of the compositing step, one entry per output record.
std::vector<SplatGradient> composite_backward(const RenderOutput &output, const Image &d_rgb,
                                              const Image &d_alpha);

/// Chains record gradients through colour evaluation and EWA projection to
/// the posed, activated Gaussian parameters. Culled Gaussians get zeros.
GradientSet project_backward(const PosedGaussianSet &set, const Camera &camera,
                             std::span<const SplatRecord> records, std::span<const SplatGradient> grads);

/// project + rasterize, keeping the inputs for render_backward.
RenderOutput render(const PosedGaussianSet &set, const Camera &camera,
                    const Eigen::Vector3d &background = Eigen::Vector3d::Zero(),
                    const RasterSettings &settings = {});

/// Gradient w.r.t. the posed, activated set passed to render().
GradientSet render_backward(const RenderOutput &output, const Image &d_rgb, const Image &d_alpha);

/// Gradient w.r.t. the raw parameters of `raw`, assuming `output` came from
/// render(activate(raw), ...) with no skinning in between.
GradientSet rasterize_backward(const RenderOutput &output, const GaussianSet &raw, const Image &d_rgb,
                               const Image &d_alpha);

} // namespace gblend
