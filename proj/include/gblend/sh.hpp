#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>

namespace gblend {

/// Real spherical-harmonic colour, degree 0..3, offset by 0.5 and clamped
/// to [0,1]. `coeffs` is [coefficient][channel]. Bit c of `clamped` is set
/// when channel c hit a bound.
Eigen::Vector3d sh_to_color(int degree, std::span<const double> coeffs, const Eigen::Vector3d &direction,
                            std::uint8_t *clamped = nullptr);

/// Accumulates d(loss)/d(coeffs) into `d_coeffs` and returns d(loss)/d(direction)
/// where `direction` is the unnormalised view vector passed to sh_to_color.
Eigen::Vector3d sh_to_color_backward(int degree, std::span<const double> coeffs,
                                     const Eigen::Vector3d &direction, const Eigen::Vector3d &d_color,
                                     std::uint8_t clamped, std::span<double> d_coeffs);

} // namespace gblend
