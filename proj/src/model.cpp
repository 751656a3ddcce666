#include "gblend/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace gblend {

GradientSet zero_gradients_like(const GaussianSet &set) {
    return GradientSet(set.size(), set.sh_degree);
}

RigidTransform RigidTransform::from_rows(std::span<const double> rows12) {
    if (rows12.size() != 12) throw InvalidArgument("rigid transform needs 12 values (3x4 row-major)");
    RigidTransform t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) t.rotation(r, c) = rows12[r * 4 + c];
        t.translation[r] = rows12[r * 4 + 3];
    }
    return t;
}

std::array<double, 12> RigidTransform::to_rows() const {
    std::array<double, 12> out{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out[r * 4 + c] = rotation(r, c);
        out[r * 4 + 3] = translation[r];
    }
    return out;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform &rhs) const {
    RigidTransform out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
}

void RigidTransform::validate(double tol) const {
    if (!rotation.allFinite() || !translation.allFinite())
        throw InvalidArgument("rigid transform has non-finite entries");
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > tol || rotation.determinant() <= 0.0) {
        std::ostringstream os;
        os << "rigid transform linear part is not a rotation (|RtR - I| = " << ortho
           << ", det = " << rotation.determinant() << ")";
        throw InvalidArgument(os.str());
    }
}

RigidTransform translation(const Eigen::Vector3d &t) {
    RigidTransform out;
    out.translation = t;
    return out;
}

RigidTransform rotation_about(const Eigen::Vector3d &axis, double radians) {
    RigidTransform out;
    out.rotation = Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
    return out;
}

PoseParams PoseParams::identity(int joint_count) {
    PoseParams p;
    p.joints.assign(static_cast<std::size_t>(joint_count), RigidTransform::identity());
    return p;
}

void PoseParams::validate() const {
    for (std::size_t j = 0; j < joints.size(); ++j) {
        try {
            joints[j].validate();
        } catch (const InvalidArgument &e) {
            throw InvalidArgument("joint " + std::to_string(j) + ": " + e.what());
        }
    }
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
    if (!(near > 0.0) || !(near < far)) throw InvalidArgument("camera requires 0 < near < far");
    if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
    world_to_camera.validate();
}

Eigen::Vector3d Camera::position() const {
    return -(world_to_camera.rotation.transpose() * world_to_camera.translation);
}

void BlendshapeModel::validate() const {
    const std::size_t n = neutral.size();
    if (!neutral.well_formed()) throw InvalidArgument("neutral set is malformed");
    if (!mouth.well_formed()) throw InvalidArgument("mouth set is malformed");
    if (mouth.sh_degree != neutral.sh_degree) throw InvalidArgument("mouth SH degree differs from neutral");
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        if (!deltas[k].well_formed() || deltas[k].size() != n || deltas[k].sh_degree != neutral.sh_degree)
            throw InvalidArgument("delta " + std::to_string(k) + " does not match the neutral set");
    }
    if (joint_count <= 0) throw InvalidArgument("joint count must be positive");
    if (skin_weights.size() != n * static_cast<std::size_t>(joint_count))
        throw InvalidArgument("skin weight matrix must be N x J");
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < joint_count; ++j) {
            const float w = weight(i, j);
            if (!(w >= 0.0f)) throw InvalidArgument("negative skin weight at Gaussian " + std::to_string(i));
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw InvalidArgument("skin weights of Gaussian " + std::to_string(i) + " do not sum to 1");
    }
    if (mouth_joint < 0 || mouth_joint >= joint_count)
        throw InvalidArgument("mouth joint index out of range");
}

Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Vector4d matrix_to_quat(const Eigen::Matrix3d &m) {
    // Shepperd: branch on the largest diagonal term for stability
    const double tr = m.trace();
    Eigen::Vector4d q;
    if (tr > 0.0) {
        const double s = std::sqrt(tr + 1.0) * 2.0;
        q << 0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
        q << (m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
        const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
        q << (m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s;
    } else {
        const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
        q << (m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s;
    }
    if (q[0] < 0.0) q = -q;
    return q;
}

Eigen::Vector4d quat_multiply(const Eigen::Vector4d &a, const Eigen::Vector4d &b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Eigen::Vector4d quat_to_matrix_backward(const Eigen::Vector4d &q, const Eigen::Matrix3d &g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d d;
    d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

template <typename T>
ActivatedGaussianSet activate(const GaussianArrays<T> &set) {
    if (!set.well_formed()) throw InvalidArgument("activate: malformed Gaussian set");
    const std::size_t n = set.size();
    ActivatedGaussianSet out(n, set.sh_degree);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            out.centers[3 * i + a] = set.centers[3 * i + a];
            out.scales[3 * i + a] = std::exp(static_cast<double>(set.scales[3 * i + a]));
        }
        const Eigen::Vector4d q = set.rotation(i).template cast<double>();
        const double norm = q.norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw NumericError("activate: zero-norm quaternion at Gaussian " + std::to_string(i));
        for (int a = 0; a < 4; ++a) out.rotations[4 * i + a] = q[a] / norm;
        out.opacities[i] = sigmoid(set.opacities[i]);
    }
    for (std::size_t k = 0; k < set.sh.size(); ++k) out.sh[k] = static_cast<double>(set.sh[k]);
    return out;
}

template <typename T>
GradientSet activate_backward(const GaussianArrays<T> &raw, const GradientSet &d) {
    const std::size_t n = raw.size();
    if (d.size() != n || d.sh.size() != raw.sh.size())
        throw DimensionError("activate_backward: gradient does not match the raw set");
    GradientSet out(n, raw.sh_degree);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            out.centers[3 * i + a] = d.centers[3 * i + a];
            out.scales[3 * i + a] = d.scales[3 * i + a] * std::exp(static_cast<double>(raw.scales[3 * i + a]));
        }
        const Eigen::Vector4d q = raw.rotation(i).template cast<double>();
        const double norm = q.norm();
        const Eigen::Vector4d qn = q / norm;
        const Eigen::Vector4d dq(d.rotations[4 * i], d.rotations[4 * i + 1], d.rotations[4 * i + 2],
                                 d.rotations[4 * i + 3]);
        const Eigen::Vector4d draw = (dq - qn * qn.dot(dq)) / norm;
        for (int a = 0; a < 4; ++a) out.rotations[4 * i + a] = draw[a];
        const double s = sigmoid(raw.opacities[i]);
        out.opacities[i] = d.opacities[i] * s * (1.0 - s);
    }
    out.sh = d.sh;
    return out;
}

template <typename T>
GaussianArrays<T> concatenate(const GaussianArrays<T> &a, const GaussianArrays<T> &b) {
    if (a.sh_degree != b.sh_degree) throw InvalidArgument("concatenate: SH degree mismatch");
    GaussianArrays<T> out;
    out.sh_degree = a.sh_degree;
    auto append = [](std::vector<T> &dst, const std::vector<T> &x, const std::vector<T> &y) {
        dst.reserve(x.size() + y.size());
        dst.insert(dst.end(), x.begin(), x.end());
        dst.insert(dst.end(), y.begin(), y.end());
    };
    append(out.centers, a.centers, b.centers);
    append(out.scales, a.scales, b.scales);
    append(out.rotations, a.rotations, b.rotations);
    append(out.opacities, a.opacities, b.opacities);
    append(out.sh, a.sh, b.sh);
    return out;
}

template ActivatedGaussianSet activate(const GaussianArrays<float> &);
template ActivatedGaussianSet activate(const GaussianArrays<double> &);
template GradientSet activate_backward(const GaussianArrays<float> &, const GradientSet &);
template GradientSet activate_backward(const GaussianArrays<double> &, const GradientSet &);
template GaussianArrays<float> concatenate(const GaussianArrays<float> &, const GaussianArrays<float> &);
template GaussianArrays<double> concatenate(const GaussianArrays<double> &, const GaussianArrays<double> &);

Eigen::Matrix3d covariance3d(const Eigen::Vector3d &scale, const Eigen::Vector4d &rotation) {
    const Eigen::Matrix3d m = quat_to_matrix(rotation) * scale.asDiagonal();
    Eigen::Matrix3d sigma;
    for (int r = 0; r < 3; ++r) {
        for (int c = r; c < 3; ++c) {
            const double v = m(r, 0) * m(c, 0) + m(r, 1) * m(c, 1) + m(r, 2) * m(c, 2);
            sigma(r, c) = v;
            sigma(c, r) = v;
        }
    }
    return sigma;
}

} // namespace gblend
