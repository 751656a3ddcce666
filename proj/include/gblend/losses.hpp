#pragma once

#include "gblend/common.hpp"
#include "gblend/metrics.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace gblend {

struct LossWeights {
    double rgb = 1.0;        // λ1
    double alpha = 10.0;     // λ2
    double reg = 100.0;      // λ3
    double lambda_rgb = 0.2; // L1 share of the RGB term

    void validate() const;
};

/// Finite cylinder: `axis` is unit length, the solid spans ±half_height
/// along it from `center`.
struct CylinderVolume {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d axis = Eigen::Vector3d::UnitY();
    double radius = 1.0;
    double half_height = 1.0;

    void validate() const;
    /// y-axis cylinder around the bounding box of `centers` (3N), radius and
    /// half height inflated by `inflate`.
    static CylinderVolume fit(std::span<const float> centers, double inflate = 1.1);
};

/// Value of a scalar image loss and its gradient w.r.t. the first argument.
struct ImageLoss {
    double value = 0.0;
    Image grad;
};

double l1_loss(const Image &img, const Image &target);
ImageLoss l1_loss_with_grad(const Image &img, const Image &target);

/// (1 - SSIM) / 2
double dssim_loss(const Image &img, const Image &target);
ImageLoss dssim_loss_with_grad(const Image &img, const Image &target);

double rgb_loss(const Image &img, const Image &target, double lambda_rgb = 0.2);
ImageLoss rgb_loss_with_grad(const Image &img, const Image &target, double lambda_rgb = 0.2);

/// Frame-averaged mean squared error between accumulated opacity and mask.
double alpha_loss(std::span<const Image> alphas, std::span<const Image> masks);
ImageLoss alpha_loss_with_grad(const Image &alpha, const Image &mask);

double cylinder_sdf(const Eigen::Vector3d &x, const CylinderVolume &v);
/// Gradient of cylinder_sdf w.r.t. x (a subgradient on creases).
Eigen::Vector3d cylinder_sdf_grad(const Eigen::Vector3d &x, const CylinderVolume &v);

/// Mean of max(SDF, 0)² over mouth centres (3N floats).
double reg_loss(std::span<const float> centers, const CylinderVolume &v);
/// Same, writing d/d(centres) into `grad` (3N).
double reg_loss_with_grad(std::span<const float> centers, const CylinderVolume &v, std::span<double> grad);

struct LossBreakdown {
    double rgb = 0.0;
    double alpha = 0.0;
    double reg = 0.0;
};

/// λ1 L_rgb + λ2 L_α + λ3 L_reg
double combine(const LossBreakdown &terms, const LossWeights &weights);

/// Total objective for one frame with gradients for the backward chain.
struct TotalLoss {
    double total = 0.0;
    LossBreakdown terms;
    Image d_rgb;                         // d total / d rendered rgb
    Image d_alpha;                       // d total / d I_α
    std::vector<double> d_mouth_centers; // d total / d rest-space mouth centres
};

TotalLoss total_loss(const Image &rgb, const Image &target, const Image &alpha, const Image &mask,
                     std::span<const float> mouth_centers, const CylinderVolume &volume,
                     const LossWeights &weights);

} // namespace gblend
