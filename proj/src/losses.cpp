#include "gblend/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace gblend {

void LossWeights::validate() const {
    if (!(rgb >= 0.0 && alpha >= 0.0 && reg >= 0.0))
        throw InvalidArgument("loss weights must be nonnegative");
    if (!(lambda_rgb >= 0.0 && lambda_rgb <= 1.0)) throw InvalidArgument("lambda_rgb must lie in [0, 1]");
}

void CylinderVolume::validate() const {
    if (!(radius > 0.0) || !(half_height > 0.0))
        throw InvalidArgument("cylinder radius and half height must be positive");
    if (!center.allFinite() || std::abs(axis.norm() - 1.0) > 1e-6)
        throw InvalidArgument("cylinder axis must be a unit vector");
}

CylinderVolume CylinderVolume::fit(std::span<const float> centers, double inflate) {
    CylinderVolume v;
    const std::size_t n = centers.size() / 3;
    if (n == 0) return v;
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], static_cast<double>(centers[3 * i + a]));
            hi[a] = std::max(hi[a], static_cast<double>(centers[3 * i + a]));
        }
    v.center = 0.5 * (lo + hi);
    v.axis = Eigen::Vector3d::UnitY();
    double radial = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = centers[3 * i] - v.center.x(), dz = centers[3 * i + 2] - v.center.z();
        radial = std::max(radial, std::sqrt(dx * dx + dz * dz));
    }
    v.radius = std::max(1e-3, inflate * radial);
    v.half_height = std::max(1e-3, inflate * 0.5 * (hi.y() - lo.y()));
    return v;
}

double l1_loss(const Image &img, const Image &target) {
    require_same_shape(img, target, "l1_loss");
    if (img.size() == 0) throw DimensionError("l1_loss: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) sum += std::abs(img.data[i] - target.data[i]);
    return sum / static_cast<double>(img.size());
}

ImageLoss l1_loss_with_grad(const Image &img, const Image &target) {
    ImageLoss out{l1_loss(img, target), Image(img.width, img.height, img.channels)};
    const double inv = 1.0 / static_cast<double>(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double d = img.data[i] - target.data[i];
        out.grad.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return out;
}

double dssim_loss(const Image &img, const Image &target) { return (1.0 - ssim(img, target)) / 2.0; }

ImageLoss dssim_loss_with_grad(const Image &img, const Image &target) {
    ImageLoss out;
    const double s = ssim_with_grad(img, target, out.grad);
    out.value = (1.0 - s) / 2.0;
    for (double &g : out.grad.data) g *= -0.5;
    return out;
}

double rgb_loss(const Image &img, const Image &target, double lambda_rgb) {
    return lambda_rgb * l1_loss(img, target) + (1.0 - lambda_rgb) * dssim_loss(img, target);
}

ImageLoss rgb_loss_with_grad(const Image &img, const Image &target, double lambda_rgb) {
    ImageLoss l1 = l1_loss_with_grad(img, target);
    const ImageLoss ds = dssim_loss_with_grad(img, target);
    l1.value = lambda_rgb * l1.value + (1.0 - lambda_rgb) * ds.value;
    for (std::size_t i = 0; i < l1.grad.size(); ++i)
        l1.grad.data[i] = lambda_rgb * l1.grad.data[i] + (1.0 - lambda_rgb) * ds.grad.data[i];
    return l1;
}

double alpha_loss(std::span<const Image> alphas, std::span<const Image> masks) {
    if (alphas.size() != masks.size()) {
        std::ostringstream os;
        os << "alpha_loss: " << alphas.size() << " opacity frames but " << masks.size() << " masks";
        throw DimensionError(os.str());
    }
    if (alphas.empty()) throw InvalidArgument("alpha_loss: no frames");
    double sum = 0.0;
    for (std::size_t f = 0; f < alphas.size(); ++f) sum += mse(alphas[f], masks[f]);
    return sum / static_cast<double>(alphas.size());
}

ImageLoss alpha_loss_with_grad(const Image &alpha, const Image &mask) {
    ImageLoss out{mse(alpha, mask), Image(alpha.width, alpha.height, alpha.channels)};
    const double scale = 2.0 / static_cast<double>(alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i) out.grad.data[i] = scale * (alpha.data[i] - mask.data[i]);
    return out;
}

namespace {

struct CylinderLocal {
    double axial;
    Eigen::Vector3d radial_vec;
    double radial;
};

CylinderLocal to_local(const Eigen::Vector3d &x, const CylinderVolume &v) {
    const Eigen::Vector3d rel = x - v.center;
    const double axial = rel.dot(v.axis);
    const Eigen::Vector3d radial_vec = rel - axial * v.axis;
    return {axial, radial_vec, radial_vec.norm()};
}

} // namespace

double cylinder_sdf(const Eigen::Vector3d &x, const CylinderVolume &v) {
    const CylinderLocal l = to_local(x, v);
    const double dx = l.radial - v.radius;
    const double dy = std::abs(l.axial) - v.half_height;
    const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
    return std::min(std::max(dx, dy), 0.0) + std::sqrt(ox * ox + oy * oy);
}

Eigen::Vector3d cylinder_sdf_grad(const Eigen::Vector3d &x, const CylinderVolume &v) {
    const CylinderLocal l = to_local(x, v);
    const double dx = l.radial - v.radius;
    const double dy = std::abs(l.axial) - v.half_height;
    const Eigen::Vector3d g_dx = l.radial > 0.0 ? Eigen::Vector3d(l.radial_vec / l.radial) : Eigen::Vector3d::Zero();
    const Eigen::Vector3d g_dy = (l.axial >= 0.0 ? 1.0 : -1.0) * v.axis;
    if (dx > 0.0 || dy > 0.0) {
        const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
        const double len = std::sqrt(ox * ox + oy * oy);
        return (ox * g_dx + oy * g_dy) / len;
    }
    return dx > dy ? g_dx : g_dy;
}

double reg_loss(std::span<const float> centers, const CylinderVolume &v) {
    const std::size_t n = centers.size() / 3;
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::max(cylinder_sdf({centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]}, v), 0.0);
        sum += s * s;
    }
    return sum / static_cast<double>(n);
}

double reg_loss_with_grad(std::span<const float> centers, const CylinderVolume &v, std::span<double> grad) {
    const std::size_t n = centers.size() / 3;
    if (grad.size() != centers.size()) throw DimensionError("reg_loss: gradient buffer size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d x(centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]);
        const double s = cylinder_sdf(x, v);
        if (s <= 0.0) continue;
        sum += s * s;
        const Eigen::Vector3d g = (2.0 * s / static_cast<double>(n)) * cylinder_sdf_grad(x, v);
        for (int a = 0; a < 3; ++a) grad[3 * i + a] = g[a];
    }
    return sum / static_cast<double>(n);
}

double combine(const LossBreakdown &terms, const LossWeights &w) {
    return w.rgb * terms.rgb + w.alpha * terms.alpha + w.reg * terms.reg;
}

TotalLoss total_loss(const Image &rgb, const Image &target, const Image &alpha, const Image &mask,
                     std::span<const float> mouth_centers, const CylinderVolume &volume, const LossWeights &weights) {
    weights.validate();
    TotalLoss out;
    ImageLoss lr = rgb_loss_with_grad(rgb, target, weights.lambda_rgb);
    ImageLoss la = alpha_loss_with_grad(alpha, mask);
    out.d_mouth_centers.resize(mouth_centers.size());
    out.terms.rgb = lr.value;
    out.terms.alpha = la.value;
    out.terms.reg = reg_loss_with_grad(mouth_centers, volume, out.d_mouth_centers);
    out.total = combine(out.terms, weights);
    for (double &g : lr.grad.data) g *= weights.rgb;
    for (double &g : la.grad.data) g *= weights.alpha;
    for (double &g : out.d_mouth_centers) g *= weights.reg;
    out.d_rgb = std::move(lr.grad);
    out.d_alpha = std::move(la.grad);
    return out;
}

} // namespace gblend
