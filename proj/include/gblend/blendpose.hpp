#pragma once

#include "gblend/model.hpp"

#include <span>

namespace gblend {

/// B0 + Σ ψ_k ΔB_k over every raw property, accumulated in double.
RawGaussianSetD blend_expression(const BlendshapeModel &model, std::span<const double> psi);

/// Blended per-Gaussian joint transform.
struct SkinTransform {
    Eigen::Matrix3d linear;   // Σ w_j R_j, used for centers
    Eigen::Vector3d translation;
    Eigen::Vector4d rotation; // nearest rotation to `linear`, as a quaternion
};

SkinTransform blend_joint_transforms(std::span<const float> weights_row, const PoseParams &pose);

/// Nearest proper rotation to m (polar decomposition).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d &m);

/// Activates `set` and poses it with linear blend skinning. `weights` is
/// N x J row-major with J = pose.joint_count().
template <typename T>
PosedGaussianSet lbs(const GaussianArrays<T> &set, std::span<const float> weights, const PoseParams &pose);

/// Gradient of lbs w.r.t. the raw (pre-activation) input parameters.
template <typename T>
GradientSet lbs_backward(const GaussianArrays<T> &set, std::span<const float> weights,
                         const PoseParams &pose, const GradientSet &d_posed);

/// Mouth set rigidly bound to the jaw joint.
PosedGaussianSet pose_mouth(const BlendshapeModel &model, const PoseParams &pose);
GradientSet pose_mouth_backward(const BlendshapeModel &model, const PoseParams &pose,
                                const GradientSet &d_posed);

/// Splits d(loss)/d(blended raw set) into neutral and per-delta gradients.
/// The blend is linear, so the neutral gets g and delta k gets ψ_k g.
void blend_expression_backward(std::span<const double> psi, const GradientSet &d_blended,
                               GradientSet &d_neutral, std::span<GradientSet> d_deltas);

} // namespace gblend
