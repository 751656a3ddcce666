#pragma once

#include "gblend/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gblend {

/// Gaussian-window SSIM parameters, on [0,1] intensities.
struct SsimOptions {
    int radius = 5; // 11x11 window
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

/// PSNR reported for identical images.
constexpr double kPsnrCap = 100.0;

double mse(const Image &a, const Image &b);
/// 10 log10(1 / MSE), capped at kPsnrCap.
double psnr(const Image &a, const Image &b);
/// Mean local SSIM over pixels and channels. Windows are truncated at the
/// border and renormalised over the in-bounds taps.
double ssim(const Image &a, const Image &b, const SsimOptions &options = {});
/// SSIM plus its gradient w.r.t. `a`.
double ssim_with_grad(const Image &a, const Image &b, Image &d_a, const SsimOptions &options = {});

struct VideoSequence {
    std::vector<Image> frames;
    std::optional<double> fps;
};

/// Inter-frame transformation fidelity: mean PSNR of adjacent frames.
double itf(const VideoSequence &video);
/// Inter-frame similarity index: mean SSIM of adjacent frames.
double isi(const VideoSequence &video);

/// Translates each frame by an independent integer offset drawn uniformly
/// from [-max_shift, max_shift]^2, replicating edge pixels.
VideoSequence inject_jitter(const VideoSequence &video, int max_shift, std::uint64_t seed);

/// Integer translation with edge replication: out(x, y) = in(x - dx, y - dy).
Image shift_image(const Image &image, int dx, int dy);

struct QualityReport {
    std::vector<double> psnr;
    std::vector<double> ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

struct StabilityReport {
    std::size_t frames = 0;
    double itf = 0.0;
    double isi = 0.0;
};

QualityReport quality_report(const std::vector<Image> &renders, const std::vector<Image> &targets);
StabilityReport stability_report(const VideoSequence &video);

std::string to_text(const QualityReport &report);
std::string to_text(const StabilityReport &report);
std::string to_json(const QualityReport &report);
std::string to_json(const StabilityReport &report);

} // namespace gblend
