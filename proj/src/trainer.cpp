#include "gblend/trainer.hpp"

#include "gblend/blendpose.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace gblend {

namespace {

template <typename F>
void for_each_group(F &&f) {
    f(ParamGroup::Center);
    f(ParamGroup::Scale);
    f(ParamGroup::Rotation);
    f(ParamGroup::Opacity);
    f(ParamGroup::Sh);
}

template <typename T>
const std::vector<T> &field_of(const GaussianArrays<T> &s, ParamGroup g) {
    switch (g) {
    case ParamGroup::Center: return s.centers;
    case ParamGroup::Scale: return s.scales;
    case ParamGroup::Rotation: return s.rotations;
    case ParamGroup::Opacity: return s.opacities;
    case ParamGroup::Sh: break;
    }
    return s.sh;
}

template <typename T>
std::vector<T> &field_of(GaussianArrays<T> &s, ParamGroup g) {
    return const_cast<std::vector<T> &>(field_of(static_cast<const GaussianArrays<T> &>(s), g));
}

// Visits (set name, set) in canonical parameter order.
template <typename Model, typename F>
void for_each_set(Model &model, F &&f) {
    f(std::string("neutral"), model.neutral);
    for (std::size_t k = 0; k < model.deltas.size(); ++k) f("delta " + std::to_string(k), model.deltas[k]);
    f(std::string("mouth"), model.mouth);
}

GradientSet slice(const GradientSet &s, std::size_t begin, std::size_t count) {
    GradientSet out(count, s.sh_degree);
    const int stride = s.sh_stride();
    std::copy_n(s.centers.begin() + 3 * begin, 3 * count, out.centers.begin());
    std::copy_n(s.scales.begin() + 3 * begin, 3 * count, out.scales.begin());
    std::copy_n(s.rotations.begin() + 4 * begin, 4 * count, out.rotations.begin());
    std::copy_n(s.opacities.begin() + begin, count, out.opacities.begin());
    std::copy_n(s.sh.begin() + stride * begin, stride * count, out.sh.begin());
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

void TrainConfig::validate() const {
    if (!(rates.center > 0 && rates.opacity > 0 && rates.scale > 0 && rates.rotation > 0 && rates.sh > 0))
        throw InvalidArgument("learning rates must be positive");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0))
        throw InvalidArgument("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
    if (iterations < 0) throw InvalidArgument("iteration count must be nonnegative");
    if (neutral_count <= 0 || mouth_count <= 0) throw InvalidArgument("Gaussian counts must be positive");
    if (!(position_lr_scale > 0)) throw InvalidArgument("position_lr_scale must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw InvalidArgument("lr_decay must lie in (0, 1]");
    if (checkpoint_interval < 0) throw InvalidArgument("checkpoint interval must be nonnegative");
    weights.validate();
    volume.validate();
}

std::size_t ModelGradients::size() const {
    std::size_t n = 0;
    for_each_set(*this, [&](const std::string &, const GradientSet &s) {
        s.for_each_field([&](const std::vector<double> &f) { n += f.size(); });
    });
    return n;
}

std::vector<double> ModelGradients::flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for_each_set(*this, [&](const std::string &, const GradientSet &s) {
        s.for_each_field([&](const std::vector<double> &f) { out.insert(out.end(), f.begin(), f.end()); });
    });
    return out;
}

std::size_t parameter_count(const BlendshapeModel &model) {
    std::size_t n = 0;
    for_each_set(model, [&](const std::string &, const GaussianSet &s) {
        s.for_each_field([&](const std::vector<float> &f) { n += f.size(); });
    });
    return n;
}

std::vector<float> flatten_parameters(const BlendshapeModel &model) {
    std::vector<float> out;
    out.reserve(parameter_count(model));
    for_each_set(model, [&](const std::string &, const GaussianSet &s) {
        s.for_each_field([&](const std::vector<float> &f) { out.insert(out.end(), f.begin(), f.end()); });
    });
    return out;
}

void unflatten_parameters(std::span<const float> values, BlendshapeModel &model) {
    if (values.size() != parameter_count(model)) throw DimensionError("unflatten_parameters: size mismatch");
    std::size_t pos = 0;
    for_each_set(model, [&](const std::string &, GaussianSet &s) {
        s.for_each_field([&](std::vector<float> &f) {
            std::copy_n(values.begin() + pos, f.size(), f.begin());
            pos += f.size();
        });
    });
}

const char *group_name(ParamGroup group) {
    switch (group) {
    case ParamGroup::Center: return "center";
    case ParamGroup::Scale: return "scale";
    case ParamGroup::Rotation: return "rotation";
    case ParamGroup::Opacity: return "opacity";
    case ParamGroup::Sh: break;
    }
    return "sh";
}

double group_rate(const LearningRates &rates, ParamGroup group) {
    switch (group) {
    case ParamGroup::Center: return rates.center;
    case ParamGroup::Scale: return rates.scale;
    case ParamGroup::Rotation: return rates.rotation;
    case ParamGroup::Opacity: return rates.opacity;
    case ParamGroup::Sh: break;
    }
    return rates.sh;
}

ParamLocation locate_parameter(const BlendshapeModel &model, std::size_t index) {
    std::optional<ParamLocation> found;
    std::size_t pos = 0;
    for_each_set(model, [&](const std::string &name, const GaussianSet &s) {
        for_each_group([&](ParamGroup g) {
            const std::size_t len = field_of(s, g).size();
            if (!found && index < pos + len)
                found = ParamLocation{g, name + " " + group_name(g) + "[" + std::to_string(index - pos) + "]"};
            pos += len;
        });
    });
    if (!found) throw InvalidArgument("parameter index " + std::to_string(index) + " out of range");
    return *found;
}

TrainState TrainState::fresh(BlendshapeModel model, std::uint64_t seed) {
    model.validate();
    TrainState s;
    const std::size_t p = parameter_count(model);
    s.model = std::move(model);
    s.first_moment.assign(p, 0.0);
    s.second_moment.assign(p, 0.0);
    s.rng = Rng(seed);
    return s;
}

void TrainState::validate() const {
    model.validate();
    const std::size_t p = parameter_count(model);
    if (first_moment.size() != p || second_moment.size() != p)
        throw DimensionError("optimizer moments do not match the model's parameter count");
}

Checkpoint TrainState::to_checkpoint() const {
    return Checkpoint{iteration, model, first_moment, second_moment, rng.save_state()};
}

TrainState TrainState::from_checkpoint(const Checkpoint &c) {
    TrainState s;
    s.model = c.model;
    s.first_moment = c.first_moment;
    s.second_moment = c.second_moment;
    s.iteration = c.iteration;
    s.rng.load_state(c.rng_state);
    s.validate();
    return s;
}

void adam_update(std::span<float> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 double rate, const AdamParams &adam, std::uint64_t t) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
        throw DimensionError("adam_update: buffer size mismatch");
    if (t == 0) throw InvalidArgument("adam_update: step numbers start at 1");
    const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g;
        v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g * g;
        const double step = rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam.epsilon);
        params[i] = static_cast<float>(static_cast<double>(params[i]) - step);
    }
}

void adam_step(TrainState &state, const ModelGradients &grads, const TrainConfig &config) {
    state.validate();
    const std::size_t p = parameter_count(state.model);
    if (grads.size() != p) throw DimensionError("adam_step: gradient shape does not match the model");
    // Validate everything before touching the state.
    {
        std::size_t pos = 0;
        for_each_set(grads, [&](const std::string &name, const GradientSet &s) {
            for_each_group([&](ParamGroup g) {
                const std::vector<double> &f = field_of(s, g);
                for (std::size_t i = 0; i < f.size(); ++i)
                    if (!std::isfinite(f[i]))
                        throw NumericError("non-finite gradient in " + name + " " + group_name(g) + "[" +
                                           std::to_string(i) + "]");
                pos += f.size();
            });
        });
    }
    const std::uint64_t t = state.iteration + 1;
    const double decay = std::pow(config.lr_decay, static_cast<double>(state.iteration));
    std::size_t pos = 0;
    auto update_set = [&](GaussianSet &params, const GradientSet &g) {
        if (params.size() != g.size() || params.sh_degree != g.sh_degree)
            throw DimensionError("adam_step: gradient shape does not match the model");
        for_each_group([&](ParamGroup group) {
            std::vector<float> &f = field_of(params, group);
            double rate = group_rate(config.rates, group) * decay;
            if (group == ParamGroup::Center) rate *= config.position_lr_scale;
            adam_update(f, field_of(g, group), std::span(state.first_moment).subspan(pos, f.size()),
                        std::span(state.second_moment).subspan(pos, f.size()), rate, config.adam, t);
            pos += f.size();
        });
    };
    if (grads.deltas.size() != state.model.deltas.size())
        throw DimensionError("adam_step: blendshape count mismatch");
    update_set(state.model.neutral, grads.neutral);
    for (std::size_t k = 0; k < grads.deltas.size(); ++k) update_set(state.model.deltas[k], grads.deltas[k]);
    update_set(state.model.mouth, grads.mouth);
    state.iteration = t;
}

FrameRender render_frame(const BlendshapeModel &model, const FrameParams &frame, const Eigen::Vector3d &background,
                         const RasterSettings &settings) {
    FrameRender r;
    r.blended = blend_expression(model, frame.expression);
    const PosedGaussianSet head = lbs(r.blended, model.skin_weights, frame.pose);
    const PosedGaussianSet mouth = pose_mouth(model, frame.pose);
    r.output = render(concatenate(head, mouth), frame.camera, background, settings);
    return r;
}

FrameLoss frame_loss(const BlendshapeModel &model, const FrameParams &frame, const FrameImagePair &target,
                     const TrainConfig &config) {
    const FrameRender r = render_frame(model, frame, config.background, config.raster);
    FrameLoss out;
    out.terms.rgb = rgb_loss(r.output.rgb, target.target, config.weights.lambda_rgb);
    out.terms.alpha = mse(r.output.alpha, target.mask);
    out.terms.reg = reg_loss(model.mouth.centers, config.volume);
    out.total = combine(out.terms, config.weights);
    return out;
}

FrameLoss frame_gradients(const BlendshapeModel &model, const FrameParams &frame, const FrameImagePair &target,
                          const TrainConfig &config, ModelGradients &grads) {
    const FrameRender r = render_frame(model, frame, config.background, config.raster);
    const TotalLoss loss = total_loss(r.output.rgb, target.target, r.output.alpha, target.mask, model.mouth.centers,
                                      config.volume, config.weights);
    const GradientSet d_all = render_backward(r.output, loss.d_rgb, loss.d_alpha);
    const std::size_t n = model.neutral.size();
    const GradientSet d_head = slice(d_all, 0, n);
    const GradientSet d_mouth_posed = slice(d_all, n, model.mouth.size());

    const GradientSet d_blended = lbs_backward(r.blended, model.skin_weights, frame.pose, d_head);
    grads.neutral = GradientSet(n, model.sh_degree());
    grads.deltas.assign(model.deltas.size(), GradientSet(n, model.sh_degree()));
    blend_expression_backward(frame.expression, d_blended, grads.neutral, grads.deltas);

    grads.mouth = pose_mouth_backward(model, frame.pose, d_mouth_posed);
    for (std::size_t i = 0; i < grads.mouth.centers.size(); ++i) grads.mouth.centers[i] += loss.d_mouth_centers[i];

    return FrameLoss{loss.total, loss.terms};
}

FrameLoss train_step(TrainState &state, const FrameParams &frame, const FrameImagePair &target,
                     const TrainConfig &config) {
    ModelGradients grads;
    const FrameLoss loss = frame_gradients(state.model, frame, target, config, grads);
    adam_step(state, grads, config);
    return loss;
}

namespace {

// Mean distance to the k nearest other points, via a uniform hash grid.
std::vector<double> mean_knn_distance(const std::vector<Eigen::Vector3d> &pts, int k) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    Eigen::Vector3d lo = pts[0], hi = pts[0];
    for (const auto &p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d ext = (hi - lo).cwiseMax(std::max(1e-9, 1e-3 * (hi - lo).maxCoeff()));
    const double cell = std::max(1e-9, std::cbrt(ext.prod() / static_cast<double>(n)) * 1.5);
    auto key = [&](long x, long y, long z) { return (x * 73856093L) ^ (y * 19349663L) ^ (z * 83492791L); };
    auto coord = [&](const Eigen::Vector3d &p, int a) { return static_cast<long>(std::floor((p[a] - lo[a]) / cell)); };
    std::unordered_map<long, std::vector<std::uint32_t>> grid;
    for (std::size_t i = 0; i < n; ++i)
        grid[key(coord(pts[i], 0), coord(pts[i], 1), coord(pts[i], 2))].push_back(static_cast<std::uint32_t>(i));
    const int want = std::min<int>(k, static_cast<int>(n) - 1);
    std::vector<double> best;
    for (std::size_t i = 0; i < n; ++i) {
        const long cx = coord(pts[i], 0), cy = coord(pts[i], 1), cz = coord(pts[i], 2);
        for (long r = 1;; ++r) {
            best.clear();
            for (long x = cx - r; x <= cx + r; ++x)
                for (long y = cy - r; y <= cy + r; ++y)
                    for (long z = cz - r; z <= cz + r; ++z) {
                        auto it = grid.find(key(x, y, z));
                        if (it == grid.end()) continue;
                        for (std::uint32_t j : it->second) {
                            if (j == i) continue;
                            const Eigen::Vector3d d = pts[j] - pts[i];
                            // hash collisions may bring in far cells; keep exact cube membership
                            if (coord(pts[j], 0) != x || coord(pts[j], 1) != y || coord(pts[j], 2) != z) continue;
                            best.push_back(d.norm());
                        }
                    }
            std::sort(best.begin(), best.end());
            // Results are exact once the k-th distance lies within the searched cube.
            if (static_cast<int>(best.size()) >= want && best[want - 1] <= static_cast<double>(r) * cell) break;
            if (static_cast<double>(r) * cell > ext.maxCoeff() * 2.0 + cell) break;
        }
        double sum = 0.0;
        for (int j = 0; j < want; ++j) sum += best[j];
        out[i] = sum / want;
    }
    return out;
}

Eigen::Vector3d sample_in_ellipsoid(Rng &rng, const Eigen::Vector3d &center, const Eigen::Vector3d &radii) {
    for (;;) {
        const Eigen::Vector3d u(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        if (u.squaredNorm() <= 1.0) return center + u.cwiseProduct(radii);
    }
}

Eigen::Vector3d sample_in_cylinder(Rng &rng, const CylinderVolume &v) {
    const Eigen::Vector3d a = v.axis.normalized();
    const Eigen::Vector3d helper = std::abs(a.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d e1 = a.cross(helper).normalized();
    const Eigen::Vector3d e2 = a.cross(e1);
    for (;;) {
        const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
        if (x * x + y * y > 1.0) continue;
        // stay strictly inside so the regulariser starts at zero
        const double h = rng.uniform(-1, 1) * v.half_height * 0.999;
        return v.center + h * a + 0.999 * v.radius * (x * e1 + y * e2);
    }
}

void fill_set(GaussianSet &set, const std::vector<Eigen::Vector3d> &centers, double opacity_raw) {
    const std::vector<double> nn = mean_knn_distance(centers, 3);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        const float s = static_cast<float>(std::log(std::max(nn[i], 1e-7)));
        for (int a = 0; a < 3; ++a) {
            set.centers[3 * i + a] = static_cast<float>(centers[i][a]);
            set.scales[3 * i + a] = s;
        }
        set.rotations[4 * i] = 1.0f;
        set.opacities[i] = static_cast<float>(opacity_raw);
    }
}

} // namespace

BlendshapeModel initialize_model(const TrainConfig &config, const InitSpec &spec) {
    config.validate();
    if (spec.expression_count < 0 || spec.joint_count <= 0)
        throw InvalidArgument("initialize_model: invalid expression or joint count");
    if (spec.mouth_joint < 0 || spec.mouth_joint >= spec.joint_count)
        throw InvalidArgument("initialize_model: mouth joint out of range");
    if (spec.sh_degree < 0 || spec.sh_degree > kMaxShDegree) throw InvalidArgument("initialize_model: bad SH degree");
    if (spec.surface_points.size() % 3 != 0) throw DimensionError("initialize_model: surface points must be 3P floats");
    if (!spec.joint_positions.empty() && spec.joint_positions.size() != 3 * static_cast<std::size_t>(spec.joint_count))
        throw DimensionError("initialize_model: joint positions must be 3J values");
    if (!(spec.ellipsoid_radii.array() > 0).all()) throw InvalidArgument("initialize_model: radii must be positive");

    Rng rng(config.seed);
    const std::size_t n = static_cast<std::size_t>(config.neutral_count);
    const std::size_t m = static_cast<std::size_t>(config.mouth_count);
    const double opacity_raw = logit(0.1);

    std::vector<Eigen::Vector3d> centers(n);
    const std::size_t surface = spec.surface_points.size() / 3;
    for (std::size_t i = 0; i < n; ++i) {
        if (surface > 0) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(surface) - 1));
            centers[i] = {spec.surface_points[3 * j], spec.surface_points[3 * j + 1], spec.surface_points[3 * j + 2]};
        } else {
            centers[i] = sample_in_ellipsoid(rng, spec.ellipsoid_center, spec.ellipsoid_radii);
        }
    }
    std::vector<Eigen::Vector3d> mouth_centers(m);
    for (auto &c : mouth_centers) c = sample_in_cylinder(rng, config.volume);

    BlendshapeModel model;
    model.joint_count = spec.joint_count;
    model.mouth_joint = spec.mouth_joint;
    model.neutral = GaussianSet(n, spec.sh_degree);
    fill_set(model.neutral, centers, opacity_raw);
    model.deltas.assign(static_cast<std::size_t>(spec.expression_count), GaussianSet(n, spec.sh_degree));
    model.mouth = GaussianSet(m, spec.sh_degree);
    fill_set(model.mouth, mouth_centers, opacity_raw);

    model.skin_weights.assign(n * spec.joint_count, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        if (!spec.joint_positions.empty()) {
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < spec.joint_count; ++j) {
                const Eigen::Vector3d p(spec.joint_positions[3 * j], spec.joint_positions[3 * j + 1],
                                        spec.joint_positions[3 * j + 2]);
                const double d = (centers[i] - p).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
        }
        model.skin_weights[i * spec.joint_count + best] = 1.0f;
    }
    model.validate();
    return model;
}

QualityReport evaluate(const BlendshapeModel &model, std::span<const FrameParams> frames,
                       std::span<const FrameImagePair> targets, const Eigen::Vector3d &background,
                       const RasterSettings &settings) {
    if (frames.empty()) throw InvalidArgument("evaluate: no frames");
    if (frames.size() != targets.size()) throw DimensionError("evaluate: frame and target counts differ");
    std::vector<Image> renders(frames.size()), wanted(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
        renders[f] = render_frame(model, frames[f], background, settings).output.rgb;
        wanted[f] = targets[f].target;
    }
    return quality_report(renders, wanted);
}

std::string to_json(const LogRecord &r) {
    nlohmann::ordered_json j;
    j["iter"] = r.iter;
    j["L"] = r.total;
    j["L_rgb"] = r.terms.rgb;
    j["L_alpha"] = r.terms.alpha;
    j["L_reg"] = r.terms.reg;
    j["wall_ms"] = r.wall_ms;
    return j.dump();
}

void train(TrainState &state, std::span<const FrameParams> frames, std::span<const FrameImagePair> targets,
           const TrainConfig &config, const TrainHooks &hooks) {
    config.validate();
    state.validate();
    if (frames.empty()) throw InvalidArgument("train: no training frames");
    if (frames.size() != targets.size()) throw DimensionError("train: frame and target counts differ");
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < config.iterations; ++it) {
        const auto f = static_cast<std::size_t>(state.rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - 1));
        const FrameLoss loss = train_step(state, frames[f], targets[f], config);
        if (hooks.on_step) hooks.on_step(LogRecord{state.iteration, loss.total, loss.terms, 1000.0 * seconds_since(t0)});
        if (config.checkpoint_interval > 0 && state.iteration % static_cast<std::uint64_t>(config.checkpoint_interval) == 0 &&
            hooks.on_checkpoint)
            hooks.on_checkpoint(state);
    }
}

} // namespace gblend
