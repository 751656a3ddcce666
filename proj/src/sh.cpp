#include "gblend/sh.hpp"

#include "gblend/model.hpp"

#include <array>

namespace gblend {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                       -1.0925484305920792, 0.5462742152960396};
constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                       0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                       -0.5900435899266435};

struct Basis {
    std::array<double, 16> value{};
    std::array<Eigen::Vector3d, 16> grad{};
};

// Basis functions on a unit direction and their gradients w.r.t. (x, y, z).
Basis evaluate_basis(int degree, const Eigen::Vector3d &d, bool with_grad) {
    Basis b;
    const double x = d.x(), y = d.y(), z = d.z();
    b.value[0] = kC0;
    if (with_grad) b.grad.fill(Eigen::Vector3d::Zero());
    if (degree < 1) return b;
    b.value[1] = -kC1 * y;
    b.value[2] = kC1 * z;
    b.value[3] = -kC1 * x;
    if (with_grad) {
        b.grad[1] = {0, -kC1, 0};
        b.grad[2] = {0, 0, kC1};
        b.grad[3] = {-kC1, 0, 0};
    }
    if (degree < 2) return b;
    const double xx = x * x, yy = y * y, zz = z * z;
    b.value[4] = kC2[0] * x * y;
    b.value[5] = kC2[1] * y * z;
    b.value[6] = kC2[2] * (2 * zz - xx - yy);
    b.value[7] = kC2[3] * x * z;
    b.value[8] = kC2[4] * (xx - yy);
    if (with_grad) {
        b.grad[4] = {kC2[0] * y, kC2[0] * x, 0};
        b.grad[5] = {0, kC2[1] * z, kC2[1] * y};
        b.grad[6] = {-2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z};
        b.grad[7] = {kC2[3] * z, 0, kC2[3] * x};
        b.grad[8] = {2 * kC2[4] * x, -2 * kC2[4] * y, 0};
    }
    if (degree < 3) return b;
    b.value[9] = kC3[0] * y * (3 * xx - yy);
    b.value[10] = kC3[1] * x * y * z;
    b.value[11] = kC3[2] * y * (4 * zz - xx - yy);
    b.value[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    b.value[13] = kC3[4] * x * (4 * zz - xx - yy);
    b.value[14] = kC3[5] * z * (xx - yy);
    b.value[15] = kC3[6] * x * (xx - 3 * yy);
    if (with_grad) {
        b.grad[9] = {6 * kC3[0] * x * y, kC3[0] * (3 * xx - 3 * yy), 0};
        b.grad[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
        b.grad[11] = {-2 * kC3[2] * x * y, kC3[2] * (4 * zz - xx - 3 * yy), 8 * kC3[2] * y * z};
        b.grad[12] = {-6 * kC3[3] * x * z, -6 * kC3[3] * y * z, kC3[3] * (6 * zz - 3 * xx - 3 * yy)};
        b.grad[13] = {kC3[4] * (4 * zz - 3 * xx - yy), -2 * kC3[4] * x * y, 8 * kC3[4] * x * z};
        b.grad[14] = {2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (xx - yy)};
        b.grad[15] = {kC3[6] * (3 * xx - 3 * yy), -6 * kC3[6] * x * y, 0};
    }
    return b;
}

Eigen::Vector3d safe_normalized(const Eigen::Vector3d &v) {
    const double n = v.norm();
    return n > 0.0 ? Eigen::Vector3d(v / n) : Eigen::Vector3d(0, 0, 1);
}

} // namespace

Eigen::Vector3d sh_to_color(int degree, std::span<const double> coeffs, const Eigen::Vector3d &direction,
                            std::uint8_t *clamped) {
    const int count = sh_coeff_count(degree);
    const Basis b = evaluate_basis(degree, safe_normalized(direction), false);
    Eigen::Vector3d c(0.5, 0.5, 0.5);
    for (int k = 0; k < count; ++k)
        for (int ch = 0; ch < 3; ++ch) c[ch] += b.value[k] * coeffs[3 * k + ch];
    std::uint8_t mask = 0;
    for (int ch = 0; ch < 3; ++ch) {
        if (c[ch] < 0.0) {
            c[ch] = 0.0;
            mask |= 1u << ch;
        } else if (c[ch] > 1.0) {
            c[ch] = 1.0;
            mask |= 1u << ch;
        }
    }
    if (clamped) *clamped = mask;
    return c;
}

Eigen::Vector3d sh_to_color_backward(int degree, std::span<const double> coeffs, const Eigen::Vector3d &direction,
                                     const Eigen::Vector3d &d_color, std::uint8_t clamped,
                                     std::span<double> d_coeffs) {
    const int count = sh_coeff_count(degree);
    Eigen::Vector3d g = d_color;
    for (int ch = 0; ch < 3; ++ch)
        if (clamped & (1u << ch)) g[ch] = 0.0;
    const double norm = direction.norm();
    const Eigen::Vector3d unit = safe_normalized(direction);
    const Basis b = evaluate_basis(degree, unit, degree > 0);
    Eigen::Vector3d d_unit = Eigen::Vector3d::Zero();
    for (int k = 0; k < count; ++k) {
        double dot = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            d_coeffs[3 * k + ch] += b.value[k] * g[ch];
            dot += coeffs[3 * k + ch] * g[ch];
        }
        if (degree > 0) d_unit += dot * b.grad[k];
    }
    if (degree == 0 || !(norm > 0.0)) return Eigen::Vector3d::Zero();
    return (d_unit - unit * unit.dot(d_unit)) / norm;
}

} // namespace gblend
