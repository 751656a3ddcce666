#pragma once

#include "gblend/common.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace gblend {

constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Structure-of-arrays Gaussian storage. Quaternions are (w, x, y, z).
/// SH coefficients are laid out per Gaussian as [coefficient][channel].
template <typename T>
struct GaussianArrays {
    int sh_degree = 0;
    std::vector<T> centers;   // 3N
    std::vector<T> scales;    // 3N
    std::vector<T> rotations; // 4N
    std::vector<T> opacities; // N
    std::vector<T> sh;        // N * 3 * (d+1)^2

    GaussianArrays() = default;
    explicit GaussianArrays(std::size_t n, int degree = 0) : sh_degree(degree) { resize(n); }

    std::size_t size() const { return opacities.size(); }
    bool empty() const { return opacities.empty(); }
    int sh_stride() const { return 3 * sh_coeff_count(sh_degree); }

    void resize(std::size_t n) {
        centers.resize(3 * n);
        scales.resize(3 * n);
        rotations.resize(4 * n);
        opacities.resize(n);
        sh.resize(n * static_cast<std::size_t>(sh_stride()));
    }

    bool well_formed() const {
        const std::size_t n = size();
        return sh_degree >= 0 && sh_degree <= kMaxShDegree && centers.size() == 3 * n &&
               scales.size() == 3 * n && rotations.size() == 4 * n &&
               sh.size() == n * static_cast<std::size_t>(sh_stride());
    }

    Eigen::Matrix<T, 3, 1> center(std::size_t i) const {
        return {centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]};
    }
    Eigen::Matrix<T, 3, 1> scale(std::size_t i) const {
        return {scales[3 * i], scales[3 * i + 1], scales[3 * i + 2]};
    }
    Eigen::Matrix<T, 4, 1> rotation(std::size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }
    std::span<T> sh_of(std::size_t i) {
        return {sh.data() + i * sh_stride(), static_cast<std::size_t>(sh_stride())};
    }
    std::span<const T> sh_of(std::size_t i) const {
        return {sh.data() + i * sh_stride(), static_cast<std::size_t>(sh_stride())};
    }

    /// Visit the five property arrays in canonical order
    /// (centers, scales, rotations, opacities, sh).
    template <typename F>
    void for_each_field(F &&f) {
        f(centers);
        f(scales);
        f(rotations);
        f(opacities);
        f(sh);
    }
    template <typename F>
    void for_each_field(F &&f) const {
        f(centers);
        f(scales);
        f(rotations);
        f(opacities);
        f(sh);
    }
};

/// Raw parameters: log-scale, logit-opacity, unnormalised quaternion.
using GaussianSet = GaussianArrays<float>;
/// exp(scale), sigmoid(opacity), unit quaternion.
using ActivatedGaussianSet = GaussianArrays<double>;
using PosedGaussianSet = ActivatedGaussianSet;
/// Partial derivatives, shaped like the set they refer to.
using GradientSet = GaussianArrays<double>;

GradientSet zero_gradients_like(const GaussianSet &set);

/// Rigid transform x -> R x + t.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }
    static RigidTransform from_rows(std::span<const double> rows12);
    std::array<double, 12> to_rows() const;

    Eigen::Vector3d apply(const Eigen::Vector3d &x) const { return rotation * x + translation; }
    RigidTransform inverse() const;
    RigidTransform operator*(const RigidTransform &rhs) const;
    /// Throws InvalidArgument unless the linear part is a proper rotation.
    void validate(double tol = 1e-5) const;
};

RigidTransform translation(const Eigen::Vector3d &t);
RigidTransform rotation_about(const Eigen::Vector3d &axis, double radians);

/// Per-joint world transforms (Θ).
struct PoseParams {
    std::vector<RigidTransform> joints;

    static PoseParams identity(int joint_count);
    std::size_t joint_count() const { return joints.size(); }
    void validate() const;
};

struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    RigidTransform world_to_camera;
    int width = 0, height = 0;
    double near = 0.01, far = 100.0;

    void validate() const;
    Eigen::Vector3d position() const;
};

using ExpressionCoeffs = std::vector<double>;

struct BlendshapeModel {
    GaussianSet neutral;
    std::vector<GaussianSet> deltas;
    /// N x J row-major.
    std::vector<float> skin_weights;
    int joint_count = 1;
    GaussianSet mouth;
    int mouth_joint = 0;

    int sh_degree() const { return neutral.sh_degree; }
    std::size_t expression_count() const { return deltas.size(); }
    float weight(std::size_t gaussian, int joint) const {
        return skin_weights[gaussian * joint_count + joint];
    }
    /// Throws InvalidArgument on any broken invariant.
    void validate() const;
};

// quaternion helpers, (w, x, y, z)
Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d &q);
Eigen::Vector4d matrix_to_quat(const Eigen::Matrix3d &r);
Eigen::Vector4d quat_multiply(const Eigen::Vector4d &a, const Eigen::Vector4d &b);
/// dL/dq for a unit quaternion given dL/dR of R = quat_to_matrix(q).
Eigen::Vector4d quat_to_matrix_backward(const Eigen::Vector4d &q, const Eigen::Matrix3d &d_r);

double sigmoid(double x);
double logit(double p);

/// Raw parameters carried in double precision (output of expression blending).
using RawGaussianSetD = GaussianArrays<double>;

/// Throws NumericError naming the Gaussian whose quaternion has zero norm.
template <typename T>
ActivatedGaussianSet activate(const GaussianArrays<T> &set);
/// Chain gradients w.r.t. activated parameters back to raw parameters.
template <typename T>
GradientSet activate_backward(const GaussianArrays<T> &raw, const GradientSet &d_activated);

template <typename T>
GaussianArrays<T> concatenate(const GaussianArrays<T> &a, const GaussianArrays<T> &b);

/// Σ = R S Sᵀ Rᵀ from an activated scale and unit quaternion.
Eigen::Matrix3d covariance3d(const Eigen::Vector3d &scale, const Eigen::Vector4d &rotation);

} // namespace gblend
