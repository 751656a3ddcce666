#include "gblend/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace gblend {

namespace {

/// Separable Gaussian blur whose taps are renormalised at the border.
class WindowFilter {
public:
    WindowFilter(const SsimOptions &o, int width, int height) : radius_(o.radius), width_(width), height_(height) {
        taps_.resize(2 * radius_ + 1);
        for (int k = -radius_; k <= radius_; ++k)
            taps_[k + radius_] = std::exp(-(k * k) / (2.0 * o.sigma * o.sigma));
        const double sum = std::accumulate(taps_.begin(), taps_.end(), 0.0);
        for (double &t : taps_) t /= sum;
        norm_x_ = edge_norms(width);
        norm_y_ = edge_norms(height);
    }

    /// out(p) = Σ_q w(p, q) in(q)
    std::vector<double> apply(const std::vector<double> &in) const {
        std::vector<double> tmp(in.size()), out(in.size());
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                double acc = 0.0;
                for (int k = std::max(-radius_, -x); k <= std::min(radius_, width_ - 1 - x); ++k)
                    acc += taps_[k + radius_] * in[idx(x + k, y)];
                tmp[idx(x, y)] = acc / norm_x_[x];
            }
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                double acc = 0.0;
                for (int k = std::max(-radius_, -y); k <= std::min(radius_, height_ - 1 - y); ++k)
                    acc += taps_[k + radius_] * tmp[idx(x, y + k)];
                out[idx(x, y)] = acc / norm_y_[y];
            }
        return out;
    }

    /// Adjoint: out(q) = Σ_p w(p, q) in(p)
    std::vector<double> apply_transpose(const std::vector<double> &in) const {
        std::vector<double> tmp(in.size()), out(in.size());
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                double acc = 0.0;
                for (int k = std::max(-radius_, -y); k <= std::min(radius_, height_ - 1 - y); ++k)
                    acc += taps_[k + radius_] * in[idx(x, y + k)] / norm_y_[y + k];
                tmp[idx(x, y)] = acc;
            }
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                double acc = 0.0;
                for (int k = std::max(-radius_, -x); k <= std::min(radius_, width_ - 1 - x); ++k)
                    acc += taps_[k + radius_] * tmp[idx(x + k, y)] / norm_x_[x + k];
                out[idx(x, y)] = acc;
            }
        return out;
    }

private:
    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

    std::vector<double> edge_norms(int n) const {
        std::vector<double> norms(n);
        for (int p = 0; p < n; ++p) {
            double s = 0.0;
            for (int k = std::max(-radius_, -p); k <= std::min(radius_, n - 1 - p); ++k) s += taps_[k + radius_];
            norms[p] = s;
        }
        return norms;
    }

    int radius_, width_, height_;
    std::vector<double> taps_, norm_x_, norm_y_;
};

std::vector<double> channel_plane(const Image &img, int c) {
    std::vector<double> plane(img.pixel_count());
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = img.data[p * img.channels + c];
    return plane;
}

double ssim_impl(const Image &a, const Image &b, Image *d_a, const SsimOptions &o) {
    require_same_shape(a, b, "ssim");
    if (a.pixel_count() == 0 || a.channels == 0) throw DimensionError("ssim: empty image");
    const WindowFilter filter(o, a.width, a.height);
    const std::size_t np = a.pixel_count();
    const double inv_count = 1.0 / static_cast<double>(np * a.channels);
    if (d_a) *d_a = Image(a.width, a.height, a.channels);

    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const std::vector<double> pa = channel_plane(a, c), pb = channel_plane(b, c);
        std::vector<double> aa(np), bb(np), ab(np);
        for (std::size_t p = 0; p < np; ++p) {
            aa[p] = pa[p] * pa[p];
            bb[p] = pb[p] * pb[p];
            ab[p] = pa[p] * pb[p];
        }
        const std::vector<double> mu_a = filter.apply(pa), mu_b = filter.apply(pb);
        const std::vector<double> e_aa = filter.apply(aa), e_bb = filter.apply(bb), e_ab = filter.apply(ab);

        std::vector<double> g_mu(np), g_eaa(np), g_eab(np);
        double channel_sum = 0.0;
        for (std::size_t p = 0; p < np; ++p) {
            const double ma = mu_a[p], mb = mu_b[p];
            const double a1 = 2.0 * ma * mb + o.c1;
            const double a2 = 2.0 * (e_ab[p] - ma * mb) + o.c2;
            const double b1 = ma * ma + mb * mb + o.c1;
            const double b2 = (e_aa[p] - ma * ma) + (e_bb[p] - mb * mb) + o.c2;
            const double den = b1 * b2;
            const double s = a1 * a2 / den;
            channel_sum += s;
            if (d_a) {
                const double d_num = 2.0 * mb * a2 - 2.0 * mb * a1;
                const double d_den = 2.0 * ma * b2 - 2.0 * ma * b1;
                g_mu[p] = (d_num - s * d_den) / den * inv_count;
                g_eaa[p] = -s / b2 * inv_count;
                g_eab[p] = 2.0 * a1 / den * inv_count;
            }
        }
        total += channel_sum;
        if (d_a) {
            const std::vector<double> t_mu = filter.apply_transpose(g_mu);
            const std::vector<double> t_eaa = filter.apply_transpose(g_eaa);
            const std::vector<double> t_eab = filter.apply_transpose(g_eab);
            for (std::size_t p = 0; p < np; ++p)
                d_a->data[p * a.channels + c] = t_mu[p] + 2.0 * pa[p] * t_eaa[p] + pb[p] * t_eab[p];
        }
    }
    return total * inv_count;
}

void require_video(const VideoSequence &video, const char *what) {
    if (video.frames.size() < 2)
        throw InvalidArgument(std::string(what) + ": at least two frames are required");
    for (const Image &f : video.frames) require_same_shape(video.frames.front(), f, what);
}

template <typename PairMetric>
double mean_over_adjacent(const VideoSequence &video, PairMetric metric) {
    const auto pairs = static_cast<std::ptrdiff_t>(video.frames.size() - 1);
    std::vector<double> values(static_cast<std::size_t>(pairs));
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t t = 0; t < pairs; ++t) values[t] = metric(video.frames[t], video.frames[t + 1]);
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(pairs);
}

} // namespace

double mse(const Image &a, const Image &b) {
    require_same_shape(a, b, "mse");
    if (a.size() == 0) throw DimensionError("mse: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double psnr(const Image &a, const Image &b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image &a, const Image &b, const SsimOptions &options) {
    return ssim_impl(a, b, nullptr, options);
}

double ssim_with_grad(const Image &a, const Image &b, Image &d_a, const SsimOptions &options) {
    return ssim_impl(a, b, &d_a, options);
}

double itf(const VideoSequence &video) {
    require_video(video, "itf");
    return mean_over_adjacent(video, [](const Image &a, const Image &b) { return psnr(a, b); });
}

double isi(const VideoSequence &video) {
    require_video(video, "isi");
    return mean_over_adjacent(video, [](const Image &a, const Image &b) { return ssim(a, b); });
}

Image shift_image(const Image &image, int dx, int dy) {
    Image out(image.width, image.height, image.channels);
    for (int y = 0; y < image.height; ++y) {
        const int sy = std::clamp(y - dy, 0, image.height - 1);
        for (int x = 0; x < image.width; ++x) {
            const int sx = std::clamp(x - dx, 0, image.width - 1);
            for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
        }
    }
    return out;
}

VideoSequence inject_jitter(const VideoSequence &video, int max_shift, std::uint64_t seed) {
    if (max_shift < 0) throw InvalidArgument("inject_jitter: max_shift must be nonnegative");
    VideoSequence out;
    out.fps = video.fps;
    out.frames.reserve(video.frames.size());
    Rng rng(seed);
    for (const Image &frame : video.frames) {
        const auto dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
        const auto dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
        out.frames.push_back(max_shift == 0 ? frame : shift_image(frame, dx, dy));
    }
    return out;
}

QualityReport quality_report(const std::vector<Image> &renders, const std::vector<Image> &targets) {
    if (renders.empty()) throw InvalidArgument("quality report: no frames");
    if (renders.size() != targets.size()) throw DimensionError("quality report: frame count mismatch");
    QualityReport r;
    r.psnr.resize(renders.size());
    r.ssim.resize(renders.size());
    for (std::size_t i = 0; i < renders.size(); ++i) {
        r.psnr[i] = psnr(renders[i], targets[i]);
        r.ssim[i] = ssim(renders[i], targets[i]);
    }
    r.mean_psnr = std::accumulate(r.psnr.begin(), r.psnr.end(), 0.0) / static_cast<double>(r.psnr.size());
    r.mean_ssim = std::accumulate(r.ssim.begin(), r.ssim.end(), 0.0) / static_cast<double>(r.ssim.size());
    return r;
}

StabilityReport stability_report(const VideoSequence &video) {
    return {video.frames.size(), itf(video), isi(video)};
}

std::string to_text(const QualityReport &report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < report.psnr.size(); ++i)
        os << "frame " << i << "  PSNR " << report.psnr[i] << " dB  SSIM " << report.ssim[i] << "\n";
    os << "mean  PSNR " << report.mean_psnr << " dB  SSIM " << report.mean_ssim << "\n";
    return os.str();
}

std::string to_text(const StabilityReport &report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "frames " << report.frames << "  ITF " << report.itf
       << " dB  ISI " << report.isi << "\n";
    return os.str();
}

std::string to_json(const QualityReport &report) {
    nlohmann::json j;
    j["psnr"] = report.psnr;
    j["ssim"] = report.ssim;
    j["mean_psnr"] = report.mean_psnr;
    j["mean_ssim"] = report.mean_ssim;
    return j.dump(2);
}

std::string to_json(const StabilityReport &report) {
    nlohmann::json j;
    j["frames"] = report.frames;
    j["itf"] = report.itf;
    j["isi"] = report.isi;
    return j.dump(2);
}

} // namespace gblend
