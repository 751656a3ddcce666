#include "gblend/blendpose.hpp"

#include <Eigen/SVD>

#include <sstream>

namespace gblend {

RawGaussianSetD blend_expression(const BlendshapeModel &model, std::span<const double> psi) {
    if (psi.size() != model.deltas.size()) {
        std::ostringstream os;
        os << "blend_expression: expected " << model.deltas.size() << " coefficients, got " << psi.size();
        throw DimensionError(os.str());
    }
    const GaussianSet &b0 = model.neutral;
    RawGaussianSetD out(b0.size(), b0.sh_degree);

    auto blend_field = [&](std::vector<double> &dst, auto member) {
        const std::vector<float> &base = b0.*member;
        for (std::size_t i = 0; i < base.size(); ++i) dst[i] = base[i];
        for (std::size_t k = 0; k < psi.size(); ++k) {
            const double c = psi[k];
            if (c == 0.0) continue;
            const std::vector<float> &delta = model.deltas[k].*member;
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * static_cast<double>(delta[i]);
        }
    };
    blend_field(out.centers, &GaussianSet::centers);
    blend_field(out.scales, &GaussianSet::scales);
    blend_field(out.rotations, &GaussianSet::rotations);
    blend_field(out.opacities, &GaussianSet::opacities);
    blend_field(out.sh, &GaussianSet::sh);
    return out;
}

void blend_expression_backward(std::span<const double> psi, const GradientSet &d_blended,
                               GradientSet &d_neutral, std::span<GradientSet> d_deltas) {
    if (d_deltas.size() != psi.size()) throw DimensionError("blend_expression_backward: delta count mismatch");
    auto add = [](std::vector<double> &dst, const std::vector<double> &src, double c) {
        if (dst.size() != src.size()) throw DimensionError("blend_expression_backward: shape mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
    };
    auto accumulate = [&](GradientSet &dst, double c) {
        add(dst.centers, d_blended.centers, c);
        add(dst.scales, d_blended.scales, c);
        add(dst.rotations, d_blended.rotations, c);
        add(dst.opacities, d_blended.opacities, c);
        add(dst.sh, d_blended.sh, c);
    };
    accumulate(d_neutral, 1.0);
    for (std::size_t k = 0; k < psi.size(); ++k) {
        if (psi[k] == 0.0) continue; // chain factor is exactly zero
        accumulate(d_deltas[k], psi[k]);
    }
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d &m) {
    const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho < 1e-12 && m.determinant() > 0.0) return m;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return u * v.transpose();
}

SkinTransform blend_joint_transforms(std::span<const float> w, const PoseParams &pose) {
    SkinTransform s;
    // I + Σ w_j (R_j - I): stays exactly I for identity joints despite float weight sums
    s.linear.setIdentity();
    s.translation.setZero();
    for (std::size_t j = 0; j < pose.joints.size(); ++j) {
        const double wj = w[j];
        if (wj == 0.0) continue;
        s.linear += wj * (pose.joints[j].rotation - Eigen::Matrix3d::Identity());
        s.translation += wj * pose.joints[j].translation;
    }
    s.rotation = matrix_to_quat(nearest_rotation(s.linear));
    return s;
}

namespace {

void check_weights(std::size_t count, std::span<const float> weights, const PoseParams &pose) {
    const std::size_t joints = pose.joint_count();
    if (joints == 0) throw InvalidArgument("lbs: pose has no joints");
    if (weights.size() != count * joints) {
        std::ostringstream os;
        os << "lbs: weight matrix has " << weights.size() << " entries, expected " << count << " x " << joints;
        throw DimensionError(os.str());
    }
    for (std::size_t i = 0; i < count; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < joints; ++j) sum += weights[i * joints + j];
        if (std::abs(sum - 1.0) > 1e-4) {
            std::ostringstream os;
            os << "lbs: skin weights of Gaussian " << i << " sum to " << sum;
            throw InvalidArgument(os.str());
        }
    }
}

// Left multiplication by a fixed quaternion r as a 4x4 matrix: r ⊗ q = L(r) q.
Eigen::Matrix4d left_multiplication(const Eigen::Vector4d &r) {
    Eigen::Matrix4d l;
    l << r[0], -r[1], -r[2], -r[3],
         r[1], r[0], -r[3], r[2],
         r[2], r[3], r[0], -r[1],
         r[3], -r[2], r[1], r[0];
    return l;
}

} // namespace

template <typename T>
PosedGaussianSet lbs(const GaussianArrays<T> &set, std::span<const float> weights, const PoseParams &pose) {
    const std::size_t n = set.size();
    check_weights(n, weights, pose);
    PosedGaussianSet out = activate(set);
    const std::size_t joints = pose.joint_count();
    for (std::size_t i = 0; i < n; ++i) {
        const SkinTransform s = blend_joint_transforms(weights.subspan(i * joints, joints), pose);
        const Eigen::Vector3d c = out.center(i);
        const Eigen::Vector3d moved = s.linear * c + s.translation;
        for (int a = 0; a < 3; ++a) out.centers[3 * i + a] = moved[a];
        const Eigen::Vector4d q = quat_multiply(s.rotation, out.rotation(i));
        for (int a = 0; a < 4; ++a) out.rotations[4 * i + a] = q[a];
    }
    return out;
}

template <typename T>
GradientSet lbs_backward(const GaussianArrays<T> &set, std::span<const float> weights, const PoseParams &pose,
                         const GradientSet &d_posed) {
    const std::size_t n = set.size();
    check_weights(n, weights, pose);
    if (d_posed.size() != n) throw DimensionError("lbs_backward: gradient count mismatch");
    const std::size_t joints = pose.joint_count();
    GradientSet d_activated = d_posed;
    for (std::size_t i = 0; i < n; ++i) {
        const SkinTransform s = blend_joint_transforms(weights.subspan(i * joints, joints), pose);
        const Eigen::Vector3d dc = s.linear.transpose() * d_posed.center(i);
        for (int a = 0; a < 3; ++a) d_activated.centers[3 * i + a] = dc[a];
        const Eigen::Vector4d dq = left_multiplication(s.rotation).transpose() * d_posed.rotation(i);
        for (int a = 0; a < 4; ++a) d_activated.rotations[4 * i + a] = dq[a];
    }
    return activate_backward(set, d_activated);
}

template PosedGaussianSet lbs(const GaussianArrays<float> &, std::span<const float>, const PoseParams &);
template PosedGaussianSet lbs(const GaussianArrays<double> &, std::span<const float>, const PoseParams &);
template GradientSet lbs_backward(const GaussianArrays<float> &, std::span<const float>, const PoseParams &,
                                  const GradientSet &);
template GradientSet lbs_backward(const GaussianArrays<double> &, std::span<const float>, const PoseParams &,
                                  const GradientSet &);

namespace {

std::vector<float> jaw_weights(const BlendshapeModel &model, const PoseParams &pose) {
    const auto joints = static_cast<int>(pose.joint_count());
    if (model.mouth_joint < 0 || model.mouth_joint >= joints) {
        std::ostringstream os;
        os << "pose_mouth: mouth joint " << model.mouth_joint << " out of range for " << joints << " joints";
        throw InvalidArgument(os.str());
    }
    std::vector<float> w(model.mouth.size() * joints, 0.0f);
    for (std::size_t i = 0; i < model.mouth.size(); ++i) w[i * joints + model.mouth_joint] = 1.0f;
    return w;
}

} // namespace

PosedGaussianSet pose_mouth(const BlendshapeModel &model, const PoseParams &pose) {
    const std::vector<float> w = jaw_weights(model, pose);
    return lbs(model.mouth, w, pose);
}

GradientSet pose_mouth_backward(const BlendshapeModel &model, const PoseParams &pose, const GradientSet &d_posed) {
    const std::vector<float> w = jaw_weights(model, pose);
    return lbs_backward(model.mouth, w, pose, d_posed);
}

} // namespace gblend
