#include "gblend/rasterizer.hpp"

#include "gblend/sh.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gblend {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= h >> 31;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 29;
    return h;
}

int worker_count(const RasterSettings &s) { return s.threads > 0 ? s.threads : omp_get_max_threads(); }

/// Conic (inverse covariance) of a 2x2 covariance. Throws if degenerate.
Eigen::Matrix2d conic_of(const SplatRecord &r) {
    const double a = r.cov(0, 0), b = r.cov(0, 1), c = r.cov(1, 1);
    const double det = a * c - b * b;
    if (!(det > 0.0)) {
        std::ostringstream os;
        os << "degenerate projected covariance for Gaussian " << r.source;
        throw NumericError(os.str());
    }
    Eigen::Matrix2d q;
    q << c / det, -b / det, -b / det, a / det;
    return q;
}

struct PreparedSplat {
    Eigen::Vector2d mean;
    double c00, c01, c11; // conic
    double opacity;
    Eigen::Vector3d color;
};

/// α′ of a splat at pixel centre (px, py) plus the Gaussian falloff factor.
inline double splat_alpha(const PreparedSplat &s, double px, double py, double &falloff) {
    const double dx = px - s.mean.x();
    const double dy = py - s.mean.y();
    const double power = -0.5 * (s.c00 * dx * dx + s.c11 * dy * dy) - s.c01 * dx * dy;
    if (power > 0.0) {
        falloff = 0.0;
        return 0.0;
    }
    falloff = std::exp(power);
    return s.opacity * falloff;
}

void validate_records(const std::vector<SplatRecord> &records) {
    for (const SplatRecord &r : records) {
        const bool finite = r.mean.allFinite() && r.cov.allFinite() && std::isfinite(r.depth) &&
                            r.color.allFinite() && std::isfinite(r.opacity);
        if (!finite) {
            std::ostringstream os;
            os << "non-finite splat record from Gaussian " << r.source;
            throw NumericError(os.str());
        }
    }
}

void sort_records(std::vector<SplatRecord> &records) {
    std::stable_sort(records.begin(), records.end(), [](const SplatRecord &a, const SplatRecord &b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source < b.source;
    });
}

std::vector<PreparedSplat> prepare(const std::vector<SplatRecord> &records) {
    std::vector<PreparedSplat> out(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Eigen::Matrix2d q = conic_of(records[i]);
        out[i] = {records[i].mean, q(0, 0), q(0, 1), q(1, 1), records[i].opacity, records[i].color};
    }
    return out;
}

struct PixelResult {
    Eigen::Vector3d rgb;
    double alpha;
    std::uint32_t end;
    std::uint64_t signature;
};

/// Front-to-back compositing of one pixel over `entries` (record indices in
/// depth order). Shared verbatim by the tiled and reference paths.
PixelResult composite_pixel(const std::vector<PreparedSplat> &splats, std::span<const std::uint32_t> entries,
                            double px, double py, const Eigen::Vector3d &background,
                            const RasterSettings &settings) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    double t = 1.0;
    std::uint64_t sig = 0x51ed270b27e5a1f3ULL;
    std::uint32_t pos = 0;
    const auto count = static_cast<std::uint32_t>(entries.size());
    for (; pos < count; ++pos) {
        const PreparedSplat &s = splats[entries[pos]];
        double falloff;
        const double a = splat_alpha(s, px, py, falloff);
        if (a < settings.alpha_cutoff) continue;
        c += s.color * (a * t);
        t *= 1.0 - a;
        sig = mix(sig, entries[pos]);
        if (settings.min_transmittance > 0.0 && t < settings.min_transmittance) {
            ++pos;
            sig = mix(sig, 0xdeadULL);
            break;
        }
    }
    return {c + t * background, 1.0 - t, pos, sig};
}

void store_pixel(RenderOutput &out, int x, int y, const PixelResult &p) {
    for (int ch = 0; ch < 3; ++ch) out.rgb.at(x, y, ch) = p.rgb[ch];
    out.alpha.at(x, y, 0) = p.alpha;
}

} // namespace

std::uint64_t RenderOutput::structure_signature() const {
    std::uint64_t h = mix(0, records.size());
    for (const SplatRecord &r : records) {
        h = mix(h, r.source);
        h = mix(h, r.clamped);
    }
    for (std::uint64_t s : pixel_signature) h = mix(h, s);
    return h;
}

std::vector<SplatRecord> project(const PosedGaussianSet &set, const Camera &camera, const RasterSettings &settings) {
    camera.validate();
    if (!set.well_formed()) throw InvalidArgument("project: malformed Gaussian set");
    const Eigen::Matrix3d &w = camera.world_to_camera.rotation;
    const Eigen::Vector3d &t = camera.world_to_camera.translation;
    const Eigen::Vector3d eye = camera.position();
    const double lo_x = -settings.guard_band * camera.width, hi_x = (1.0 + settings.guard_band) * camera.width;
    const double lo_y = -settings.guard_band * camera.height, hi_y = (1.0 + settings.guard_band) * camera.height;

    std::vector<SplatRecord> records;
    records.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Eigen::Vector3d mu = set.center(i);
        const Eigen::Vector3d p = w * mu + t;
        const double z = p.z();
        if (!(z > camera.near && z < camera.far)) continue;
        const double u = camera.fx * p.x() / z + camera.cx;
        const double v = camera.fy * p.y() / z + camera.cy;
        if (!(u >= lo_x && u <= hi_x && v >= lo_y && v <= hi_y)) continue;

        const Eigen::Matrix3d sigma = covariance3d(set.scale(i), set.rotation(i));
        const Eigen::Matrix3d sigma_cam = w * sigma * w.transpose();
        Eigen::Matrix<double, 2, 3> jac;
        jac << camera.fx / z, 0.0, -camera.fx * p.x() / (z * z), 0.0, camera.fy / z, -camera.fy * p.y() / (z * z);
        Eigen::Matrix2d cov = jac * sigma_cam * jac.transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov(0, 0) += settings.low_pass;
        cov(1, 1) += settings.low_pass;

        SplatRecord r;
        r.mean = {u, v};
        r.cov = cov;
        r.depth = z;
        r.opacity = set.opacities[i];
        r.source = static_cast<std::uint32_t>(i);
        r.color = sh_to_color(set.sh_degree, set.sh_of(i), mu - eye, &r.clamped);
        records.push_back(r);
    }
    return records;
}

RenderOutput rasterize(std::vector<SplatRecord> records, int width, int height, const Eigen::Vector3d &background,
                       const RasterSettings &settings) {
    if (width <= 0 || height <= 0) throw InvalidArgument("rasterize: image size must be positive");
    if (settings.tile_size <= 0) throw InvalidArgument("rasterize: tile size must be positive");
    validate_records(records);
    sort_records(records);
    const std::vector<PreparedSplat> splats = prepare(records);

    RenderOutput out;
    out.rgb = Image(width, height, 3);
    out.alpha = Image(width, height, 1);
    out.background = background;
    out.settings = settings;
    out.has_trace = true;
    const int ts = settings.tile_size;
    out.tiles_x = (width + ts - 1) / ts;
    out.tiles_y = (height + ts - 1) / ts;
    const int tile_count = out.tiles_x * out.tiles_y;

    // Bin every splat into the tiles its α′ ≥ cutoff region can reach.
    std::vector<std::vector<std::uint32_t>> bins(tile_count);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const SplatRecord &r = records[i];
        if (r.opacity < settings.alpha_cutoff) continue;
        const double k2 = 2.0 * std::log(r.opacity / settings.alpha_cutoff) + 1e-9;
        const double rx = std::sqrt(k2 * r.cov(0, 0)) + 1e-6;
        const double ry = std::sqrt(k2 * r.cov(1, 1)) + 1e-6;
        const double x0f = std::ceil(r.mean.x() - rx - 0.5), x1f = std::floor(r.mean.x() + rx - 0.5);
        const double y0f = std::ceil(r.mean.y() - ry - 0.5), y1f = std::floor(r.mean.y() + ry - 0.5);
        if (x1f < 0.0 || y1f < 0.0 || x0f > width - 1 || y0f > height - 1) continue;
        const int x0 = std::max(0, static_cast<int>(x0f)), x1 = std::min(width - 1, static_cast<int>(x1f));
        const int y0 = std::max(0, static_cast<int>(y0f)), y1 = std::min(height - 1, static_cast<int>(y1f));
        for (int ty = y0 / ts; ty <= y1 / ts; ++ty)
            for (int tx = x0 / ts; tx <= x1 / ts; ++tx)
                bins[ty * out.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
    }
    out.tile_offsets.assign(tile_count + 1, 0);
    for (int b = 0; b < tile_count; ++b)
        out.tile_offsets[b + 1] = out.tile_offsets[b] + static_cast<std::uint32_t>(bins[b].size());
    out.tile_entries.reserve(out.tile_offsets.back());
    for (const auto &bin : bins) out.tile_entries.insert(out.tile_entries.end(), bin.begin(), bin.end());
    out.pixel_end.assign(out.rgb.pixel_count(), 0);
    out.pixel_signature.assign(out.rgb.pixel_count(), 0);

#pragma omp parallel for schedule(dynamic) num_threads(worker_count(settings))
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % out.tiles_x, ty = tile / out.tiles_x;
        const std::span<const std::uint32_t> entries(out.tile_entries.data() + out.tile_offsets[tile],
                                                     out.tile_offsets[tile + 1] - out.tile_offsets[tile]);
        for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
                const PixelResult p = composite_pixel(splats, entries, x + 0.5, y + 0.5, background, settings);
                store_pixel(out, x, y, p);
                const std::size_t pix = static_cast<std::size_t>(y) * width + x;
                out.pixel_end[pix] = p.end;
                out.pixel_signature[pix] = p.signature;
            }
        }
    }
    out.records = std::move(records);
    return out;
}

RenderOutput rasterize_reference(std::vector<SplatRecord> records, int width, int height,
                                 const Eigen::Vector3d &background, const RasterSettings &settings) {
    if (width <= 0 || height <= 0) throw InvalidArgument("rasterize_reference: image size must be positive");
    validate_records(records);
    sort_records(records);
    const std::vector<PreparedSplat> splats = prepare(records);
    std::vector<std::uint32_t> all(records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);

    RenderOutput out;
    out.rgb = Image(width, height, 3);
    out.alpha = Image(width, height, 1);
    out.background = background;
    out.settings = settings;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            store_pixel(out, x, y, composite_pixel(splats, all, x + 0.5, y + 0.5, background, settings));
    out.records = std::move(records);
    return out;
}

std::vector<SplatGradient> composite_backward(const RenderOutput &out, const Image &d_rgb, const Image &d_alpha) {
    if (!out.has_trace) throw InvalidArgument("composite_backward: output carries no compositing trace");
    if (d_rgb.width != out.rgb.width || d_rgb.height != out.rgb.height || d_rgb.channels != 3)
        throw DimensionError("composite_backward: d_rgb shape mismatch");
    if (d_alpha.width != out.rgb.width || d_alpha.height != out.rgb.height || d_alpha.channels != 1)
        throw DimensionError("composite_backward: d_alpha shape mismatch");

    const std::vector<PreparedSplat> splats = prepare(out.records);
    const RasterSettings &settings = out.settings;
    const int width = out.rgb.width, height = out.rgb.height, ts = settings.tile_size;
    const int tile_count = out.tiles_x * out.tiles_y;
    // Per tile-entry partial sums, reduced afterwards in fixed tile order.
    std::vector<SplatGradient> partial(out.tile_entries.size());

#pragma omp parallel for schedule(dynamic) num_threads(worker_count(settings))
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % out.tiles_x, ty = tile / out.tiles_x;
        const std::uint32_t base = out.tile_offsets[tile];
        struct Hit {
            std::uint32_t pos;
            double alpha, falloff, transmittance;
        };
        std::vector<Hit> hits;
        for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * width + x;
                const double px = x + 0.5, py = y + 0.5;
                hits.clear();
                double t = 1.0;
                for (std::uint32_t pos = 0; pos < out.pixel_end[pix]; ++pos) {
                    const PreparedSplat &s = splats[out.tile_entries[base + pos]];
                    double falloff;
                    const double a = splat_alpha(s, px, py, falloff);
                    if (a < settings.alpha_cutoff) continue;
                    hits.push_back({pos, a, falloff, t});
                    t *= 1.0 - a;
                }
                const Eigen::Vector3d g_rgb(d_rgb.at(x, y, 0), d_rgb.at(x, y, 1), d_rgb.at(x, y, 2));
                const double g_alpha = d_alpha.at(x, y, 0);
                Eigen::Vector3d behind = out.background; // colour seen behind the current splat
                double through = 1.0;                    // Π (1 - α) of splats behind
                for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                    const PreparedSplat &s = splats[out.tile_entries[base + it->pos]];
                    SplatGradient &g = partial[base + it->pos];
                    g.color += g_rgb * (it->alpha * it->transmittance);
                    const double d_a = it->transmittance * g_rgb.dot(s.color - behind) +
                                       g_alpha * it->transmittance * through;
                    behind = s.color * it->alpha + (1.0 - it->alpha) * behind;
                    through *= 1.0 - it->alpha;

                    g.opacity += d_a * it->falloff;
                    const double d_power = d_a * it->alpha;
                    const Eigen::Vector2d d(px - s.mean.x(), py - s.mean.y());
                    const Eigen::Vector2d qd(s.c00 * d.x() + s.c01 * d.y(), s.c01 * d.x() + s.c11 * d.y());
                    g.mean += d_power * qd;
                    g.conic += (-0.5 * d_power) * (d * d.transpose());
                }
            }
        }
    }

    std::vector<SplatGradient> grads(out.records.size());
    for (std::size_t e = 0; e < out.tile_entries.size(); ++e) {
        SplatGradient &dst = grads[out.tile_entries[e]];
        const SplatGradient &src = partial[e];
        dst.mean += src.mean;
        dst.conic += src.conic;
        dst.color += src.color;
        dst.opacity += src.opacity;
    }
    return grads;
}

GradientSet project_backward(const PosedGaussianSet &set, const Camera &camera, std::span<const SplatRecord> records,
                             std::span<const SplatGradient> grads) {
    if (records.size() != grads.size()) throw DimensionError("project_backward: record/gradient count mismatch");
    GradientSet out(set.size(), set.sh_degree);
    const Eigen::Matrix3d &w = camera.world_to_camera.rotation;
    const Eigen::Vector3d &t = camera.world_to_camera.translation;
    const Eigen::Vector3d eye = camera.position();
    const double fx = camera.fx, fy = camera.fy;

    for (std::size_t r = 0; r < records.size(); ++r) {
        const SplatRecord &rec = records[r];
        const SplatGradient &g = grads[r];
        const std::size_t i = rec.source;
        if (i >= set.size()) throw DimensionError("project_backward: record source out of range");

        const Eigen::Vector3d mu = set.center(i);
        const Eigen::Vector3d scale = set.scale(i);
        const Eigen::Vector4d q = set.rotation(i);
        const Eigen::Vector3d p = w * mu + t;
        const double x = p.x(), y = p.y(), z = p.z();
        const double z2 = z * z, z3 = z2 * z;

        const Eigen::Matrix3d rot = quat_to_matrix(q);
        const Eigen::Matrix3d m = rot * scale.asDiagonal();
        const Eigen::Matrix3d sigma = covariance3d(scale, q);
        const Eigen::Matrix3d sigma_cam = w * sigma * w.transpose();
        Eigen::Matrix<double, 2, 3> jac;
        jac << fx / z, 0.0, -fx * x / z2, 0.0, fy / z, -fy * y / z2;

        const Eigen::Matrix2d conic = conic_of(rec);
        const Eigen::Matrix2d d_cov2d = -conic * g.conic * conic;
        const Eigen::Matrix3d d_sigma_cam = jac.transpose() * d_cov2d * jac;
        const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * d_cov2d * jac * sigma_cam;
        const Eigen::Matrix3d d_sigma = w.transpose() * d_sigma_cam * w;
        const Eigen::Matrix3d d_m = 2.0 * d_sigma * m;
        Eigen::Matrix3d d_rot;
        for (int c = 0; c < 3; ++c) {
            d_rot.col(c) = d_m.col(c) * scale[c];
            out.scales[3 * i + c] += d_m.col(c).dot(rot.col(c));
        }
        const Eigen::Vector4d d_q = quat_to_matrix_backward(q, d_rot);
        for (int a = 0; a < 4; ++a) out.rotations[4 * i + a] += d_q[a];

        Eigen::Vector3d d_p = Eigen::Vector3d::Zero();
        d_p.x() += g.mean.x() * fx / z;
        d_p.z() += g.mean.x() * (-fx * x / z2);
        d_p.y() += g.mean.y() * fy / z;
        d_p.z() += g.mean.y() * (-fy * y / z2);
        d_p.z() += d_jac(0, 0) * (-fx / z2);
        d_p.x() += d_jac(0, 2) * (-fx / z2);
        d_p.z() += d_jac(0, 2) * (2.0 * fx * x / z3);
        d_p.z() += d_jac(1, 1) * (-fy / z2);
        d_p.y() += d_jac(1, 2) * (-fy / z2);
        d_p.z() += d_jac(1, 2) * (2.0 * fy * y / z3);

        std::span<double> d_sh(out.sh.data() + i * out.sh_stride(), static_cast<std::size_t>(out.sh_stride()));
        const Eigen::Vector3d d_dir =
            sh_to_color_backward(set.sh_degree, set.sh_of(i), mu - eye, g.color, rec.clamped, d_sh);
        const Eigen::Vector3d d_mu = w.transpose() * d_p + d_dir;
        for (int a = 0; a < 3; ++a) out.centers[3 * i + a] += d_mu[a];
        out.opacities[i] += g.opacity;
    }
    return out;
}

RenderOutput render(const PosedGaussianSet &set, const Camera &camera, const Eigen::Vector3d &background,
                    const RasterSettings &settings) {
    RenderOutput out = rasterize(project(set, camera, settings), camera.width, camera.height, background, settings);
    out.posed = set;
    out.camera = camera;
    return out;
}

GradientSet render_backward(const RenderOutput &output, const Image &d_rgb, const Image &d_alpha) {
    if (!output.posed || !output.camera)
        throw InvalidArgument("render_backward: output was not produced by render()");
    const std::vector<SplatGradient> grads = composite_backward(output, d_rgb, d_alpha);
    return project_backward(*output.posed, *output.camera, output.records, grads);
}

GradientSet rasterize_backward(const RenderOutput &output, const GaussianSet &raw, const Image &d_rgb,
                               const Image &d_alpha) {
    if (!output.posed || output.posed->size() != raw.size() || output.posed->sh_degree != raw.sh_degree)
        throw DimensionError("rasterize_backward: trace does not match the supplied Gaussian set");
    return activate_backward(raw, render_backward(output, d_rgb, d_alpha));
}

} // namespace gblend
