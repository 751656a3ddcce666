#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>

using namespace gblend;
using testutil::basic_camera;
using testutil::random_raw_set;
using testutil::random_record;

namespace {

std::vector<SplatRecord> random_scene(int count, int width, int height, Rng &rng) {
    std::vector<SplatRecord> out;
    for (int i = 0; i < count; ++i) out.push_back(random_record(static_cast<std::uint32_t>(i), width, height, rng));
    return out;
}

double weighted_sum(const RenderOutput &out, const Image &w_rgb, const Image &w_alpha) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.rgb.data.size(); ++i) s += w_rgb.data[i] * out.rgb.data[i];
    for (std::size_t i = 0; i < out.alpha.data.size(); ++i) s += w_alpha.data[i] * out.alpha.data[i];
    return s;
}

} // namespace

TEST_CASE("a Gaussian at the camera origin is culled") {
    ActivatedGaussianSet s(2);
    s.rotations = {1, 0, 0, 0, 1, 0, 0, 0};
    s.scales.assign(6, 0.1);
    s.opacities = {0.5, 0.5};
    s.centers = {0, 0, 0, 0, 0, 2};
    const std::vector<SplatRecord> r = project(s, basic_camera(32, 32, 32));
    REQUIRE(r.size() == 1);
    CHECK(r[0].source == 1);
}

TEST_CASE("isotropic Gaussian on the optical axis") {
    const double f = 50.0, z = 2.0, sigma = 0.1;
    ActivatedGaussianSet s(1);
    s.centers = {0, 0, z};
    s.scales = {sigma, sigma, sigma};
    s.rotations = {1, 0, 0, 0};
    s.opacities = {0.5};
    const std::vector<SplatRecord> r = project(s, basic_camera(64, 64, f));
    REQUIRE(r.size() == 1);
    const double want = (f / z) * (f / z) * sigma * sigma + 0.3;
    CHECK(r[0].cov(0, 0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(r[0].cov(1, 1) == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(r[0].cov(0, 1)) < 1e-12);
    CHECK(r[0].mean.x() == 32.0);
    CHECK(r[0].depth == z);
}

TEST_CASE("moving world and camera together leaves records unchanged") {
    Rng rng(21);
    const int w = 48, h = 40;
    const Camera cam = basic_camera(w, h, 40.0);

    SUBCASE("translation, view-dependent colour") {
        const ActivatedGaussianSet s = activate(random_raw_set(30, 2, rng));
        const RigidTransform g = translation({0.3, -2.0, 5.0});
        ActivatedGaussianSet moved = s;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const Eigen::Vector3d c = g.apply(s.center(i));
            for (int a = 0; a < 3; ++a) moved.centers[3 * i + a] = c[a];
        }
        Camera cam2 = cam;
        cam2.world_to_camera = cam.world_to_camera * g.inverse();
        const auto r1 = project(s, cam), r2 = project(moved, cam2);
        REQUIRE(r1.size() == r2.size());
        for (std::size_t i = 0; i < r1.size(); ++i) {
            CHECK((r1[i].mean - r2[i].mean).norm() < 1e-9);
            CHECK((r1[i].cov - r2[i].cov).norm() < 1e-9);
            CHECK((r1[i].color - r2[i].color).norm() < 1e-9);
            CHECK(std::abs(r1[i].depth - r2[i].depth) < 1e-9);
        }
    }
    SUBCASE("rotation and translation, constant colour") {
        const ActivatedGaussianSet s = activate(random_raw_set(30, 0, rng));
        const RigidTransform g = rotation_about({1, 2, -1}, 0.9) * translation({0.5, 0.1, -1.0});
        const Eigen::Vector4d qg = matrix_to_quat(g.rotation);
        ActivatedGaussianSet moved = s;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const Eigen::Vector3d c = g.apply(s.center(i));
            const Eigen::Vector4d q = quat_multiply(qg, s.rotation(i));
            for (int a = 0; a < 3; ++a) moved.centers[3 * i + a] = c[a];
            for (int a = 0; a < 4; ++a) moved.rotations[4 * i + a] = q[a];
        }
        Camera cam2 = cam;
        cam2.world_to_camera = cam.world_to_camera * g.inverse();
        const auto r1 = project(s, cam), r2 = project(moved, cam2);
        REQUIRE(r1.size() == r2.size());
        for (std::size_t i = 0; i < r1.size(); ++i) {
            CHECK((r1[i].mean - r2[i].mean).norm() < 1e-9);
            CHECK((r1[i].cov - r2[i].cov).norm() < 1e-9);
            CHECK((r1[i].color - r2[i].color).norm() < 1e-12);
        }
    }
}

TEST_CASE("no records renders the background") {
    const Eigen::Vector3d bg(0.2, 0.4, 0.6);
    const RenderOutput out = rasterize({}, 20, 10, bg);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) {
            for (int c = 0; c < 3; ++c) CHECK(out.rgb.at(x, y, c) == bg[c]);
            CHECK(out.alpha.at(x, y, 0) == 0.0);
        }
}

TEST_CASE("an opaque tiny splat saturates its pixel") {
    SplatRecord r;
    r.mean = {8.5, 5.5};
    r.cov = Eigen::Matrix2d::Identity() * 0.3;
    r.opacity = 1.0 - 1e-12;
    r.color = {1, 0, 0};
    r.depth = 1.0;
    const RenderOutput out = rasterize({r}, 16, 16);
    CHECK(out.alpha.at(8, 5, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(out.rgb.at(8, 5, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(out.alpha.at(0, 15, 0) == 0.0);
}

TEST_CASE("tiled and reference paths agree") {
    Rng rng(31);
    for (int scene = 0; scene < 20; ++scene) {
        const int w = 40 + scene, h = 33 + 2 * scene;
        const auto recs = random_scene(static_cast<int>(rng.uniform_int(1, 150)), w, h, rng);
        const Eigen::Vector3d bg(rng.uniform(), rng.uniform(), rng.uniform());
        const RenderOutput a = rasterize(recs, w, h, bg), b = rasterize_reference(recs, w, h, bg);
        CHECK(testutil::max_abs_diff(a.rgb, b.rgb) <= 1e-5);
        CHECK(testutil::max_abs_diff(a.alpha, b.alpha) <= 1e-5);
    }
}

TEST_CASE("splat centred on a tile edge") {
    for (double edge : {16.0, 32.0}) {
        SplatRecord r;
        r.mean = {edge, edge};
        r.cov = Eigen::Matrix2d::Identity() * 9.0;
        r.opacity = 0.9;
        r.color = {0.3, 0.6, 0.9};
        r.depth = 2.0;
        SplatRecord wide = r;
        wide.mean = {edge + 0.5, 15.0};
        wide.cov << 60.0, 10.0, 10.0, 4.0;
        wide.depth = 3.0;
        wide.source = 1;
        const RenderOutput a = rasterize({r, wide}, 48, 48), b = rasterize_reference({r, wide}, 48, 48);
        CHECK(testutil::max_abs_diff(a.rgb, b.rgb) <= 1e-5);
        CHECK(testutil::max_abs_diff(a.alpha, b.alpha) <= 1e-5);
        CHECK(a.alpha.at(int(edge) - 1, int(edge) - 1, 0) > 0.5);
    }
}

TEST_CASE("rendering is bit-reproducible and breaks depth ties by source") {
    Rng rng(41);
    auto recs = random_scene(120, 64, 64, rng);
    for (std::size_t i = 0; i + 1 < recs.size(); i += 2) recs[i + 1].depth = recs[i].depth;
    const RenderOutput a = rasterize(recs, 64, 64);
    std::reverse(recs.begin(), recs.end());
    const RenderOutput b = rasterize(recs, 64, 64);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.alpha.data == b.alpha.data);
    const RenderOutput c = rasterize_reference(recs, 64, 64), d = rasterize_reference(recs, 64, 64);
    CHECK(c.rgb.data == d.rgb.data);
    for (std::size_t i = 1; i < a.records.size(); ++i) {
        const bool ordered = a.records[i - 1].depth < a.records[i].depth ||
                             (a.records[i - 1].depth == a.records[i].depth && a.records[i - 1].source < a.records[i].source);
        CHECK(ordered);
    }
}

TEST_CASE("non-finite records are rejected") {
    Rng rng(5);
    auto recs = random_scene(3, 16, 16, rng);
    recs[1].opacity = std::nan("");
    CHECK_THROWS_AS(rasterize(recs, 16, 16), NumericError);
    CHECK_THROWS_AS(rasterize_reference(recs, 16, 16), NumericError);
}

TEST_CASE("accumulated opacity never drops when a splat is added") {
    Rng rng(51);
    RasterSettings settings;
    settings.min_transmittance = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto recs = random_scene(60, 48, 48, rng);
        const RenderOutput before = rasterize(recs, 48, 48, Eigen::Vector3d::Zero(), settings);
        recs.push_back(random_record(60, 48, 48, rng));
        const RenderOutput after = rasterize(recs, 48, 48, Eigen::Vector3d::Zero(), settings);
        for (std::size_t p = 0; p < before.alpha.data.size(); ++p) CHECK(after.alpha.data[p] >= before.alpha.data[p] - 1e-12);
    }
}

TEST_CASE("colour is bounded by the brightest splat times coverage") {
    Rng rng(61);
    for (int trial = 0; trial < 10; ++trial) {
        const auto recs = random_scene(80, 48, 48, rng);
        Eigen::Vector3d brightest = Eigen::Vector3d::Zero();
        for (const SplatRecord &r : recs) brightest = brightest.cwiseMax(r.color);
        const RenderOutput out = rasterize(recs, 48, 48);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x)
                for (int c = 0; c < 3; ++c) CHECK(out.rgb.at(x, y, c) <= brightest[c] * out.alpha.at(x, y, 0) + 1e-6);
    }
}

TEST_CASE("Gaussians away from the loss get exactly zero gradient") {
    GaussianSet s(2, 1);
    s.centers = {-0.8f, 0.0f, 3.0f, 0.8f, 0.0f, 3.0f};
    s.scales.assign(6, std::log(0.05f));
    s.rotations = {1, 0, 0, 0, 1, 0, 0, 0};
    s.opacities = {0.5f, 0.5f};
    for (float &c : s.sh) c = 0.1f;
    const Camera cam = basic_camera(64, 32, 40.0);
    const RenderOutput out = render(activate(s), cam);
    Image d_rgb(64, 32, 3), d_alpha(64, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            for (int c = 0; c < 3; ++c) d_rgb.at(x, y, c) = 1.0;
            d_alpha.at(x, y, 0) = 1.0;
        }
    const GradientSet g = rasterize_backward(out, s, d_rgb, d_alpha);
    bool left_nonzero = false;
    for (int a = 0; a < 3; ++a) left_nonzero |= g.centers[a] != 0.0;
    CHECK(left_nonzero);
    for (int a = 3; a < 6; ++a) CHECK(g.centers[a] == 0.0);
    for (int a = 3; a < 6; ++a) CHECK(g.scales[a] == 0.0);
    for (int a = 4; a < 8; ++a) CHECK(g.rotations[a] == 0.0);
    CHECK(g.opacities[1] == 0.0);
    for (int a = 12; a < 24; ++a) CHECK(g.sh[a] == 0.0);
}

TEST_CASE("gradient is linear in the upstream adjoint") {
    Rng rng(71);
    const GaussianSet s = random_raw_set(20, 1, rng);
    const Camera cam = basic_camera(32, 32, 32.0);
    const RenderOutput out = render(activate(s), cam);
    const Image d_rgb = testutil::random_image(32, 32, 3, rng, -1, 1);
    const Image d_alpha = testutil::random_image(32, 32, 1, rng, -1, 1);
    Image d_rgb2 = d_rgb, d_alpha2 = d_alpha;
    for (double &v : d_rgb2.data) v *= 2.0;
    for (double &v : d_alpha2.data) v *= 2.0;
    const GradientSet g1 = rasterize_backward(out, s, d_rgb, d_alpha);
    const GradientSet g2 = rasterize_backward(out, s, d_rgb2, d_alpha2);
    auto check = [](const std::vector<double> &a, const std::vector<double> &b) {
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == 2.0 * a[i]);
    };
    check(g1.centers, g2.centers);
    check(g1.scales, g2.scales);
    check(g1.rotations, g2.rotations);
    check(g1.opacities, g2.opacities);
    check(g1.sh, g2.sh);
}

TEST_CASE("rasterizer gradient matches central differences") {
    const double h = 1e-4;
    int checked = 0, nonzero = 0, skipped = 0;
    double worst = 0.0;
    for (int scene = 0; scene < 4; ++scene) {
        Rng rng(100 + scene);
        const int degree = scene % 3;
        GaussianSet s = random_raw_set(static_cast<std::size_t>(rng.uniform_int(10, 20)), degree, rng);
        const Camera cam = basic_camera(32, 32, 32.0);
        const Image w_rgb = testutil::random_image(32, 32, 3, rng, -1, 1);
        const Image w_alpha = testutil::random_image(32, 32, 1, rng, -1, 1);
        const RenderOutput base = render(activate(s), cam);
        const std::uint64_t sig = base.structure_signature();
        const GradientSet g = rasterize_backward(base, s, w_rgb, w_alpha);

        auto fields = [](auto &set) {
            return std::array{&set.centers, &set.scales, &set.rotations, &set.opacities, &set.sh};
        };
        auto raw_fields = fields(s);
        auto grad_fields = fields(g);
        for (std::size_t f = 0; f < raw_fields.size(); ++f) {
            std::vector<float> &vals = *raw_fields[f];
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const float orig = vals[i];
                const float up = static_cast<float>(orig + h), down = static_cast<float>(orig - h);
                vals[i] = up;
                const RenderOutput rp = render(activate(s), cam);
                vals[i] = down;
                const RenderOutput rm = render(activate(s), cam);
                vals[i] = orig;
                if (rp.structure_signature() != sig || rm.structure_signature() != sig) {
                    ++skipped;
                    continue;
                }
                const double numeric = (weighted_sum(rp, w_rgb, w_alpha) - weighted_sum(rm, w_rgb, w_alpha)) /
                                       (double(up) - double(down));
                const double analytic = (*grad_fields[f])[i];
                const double err = testutil::rel_error(analytic, numeric);
                worst = std::max(worst, err);
                CHECK_MESSAGE(err < 1e-3, "scene " << scene << " field " << f << " index " << i << " analytic "
                                                   << analytic << " numeric " << numeric);
                ++checked;
                if (std::abs(analytic) > 1e-6) ++nonzero;
            }
        }
    }
    MESSAGE("checked " << checked << " (" << nonzero << " nonzero), skipped " << skipped << ", worst rel " << worst);
    CHECK(checked >= 500);
    CHECK(nonzero >= 400);
}
