#include "gblend/assets.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gblend {

using nlohmann::json;

namespace {

constexpr const char *kFormatTag = "gblend-frames";
constexpr int kFramesVersion = 1;

json transform_to_json(const RigidTransform &t) {
    const auto rows = t.to_rows();
    return json(std::vector<double>(rows.begin(), rows.end()));
}

RigidTransform transform_from_json(const json &j, const std::string &where) {
    if (!j.is_array() || j.size() != 12) throw FormatError(where + ": expected 12 numbers (3x4 row-major)");
    std::vector<double> v = j.get<std::vector<double>>();
    return RigidTransform::from_rows(v);
}

template <typename T>
T field(const json &j, const char *key, const std::string &where) {
    if (!j.contains(key)) throw FormatError(where + ": missing \"" + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &) {
        throw FormatError(where + ": \"" + key + "\" has the wrong type");
    }
}

std::string frame_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d", index);
    return buf;
}

std::filesystem::path first_existing(const std::filesystem::path &dir, const std::string &stem,
                                     std::initializer_list<const char *> exts) {
    for (const char *ext : exts) {
        std::filesystem::path p = dir / (stem + ext);
        if (std::filesystem::exists(p)) return p;
    }
    return {};
}

} // namespace

void FrameParamsFile::validate() const {
    if (expression_count < 0 || joint_count <= 0) throw InvalidArgument("frame params: bad expression/joint counts");
    int last = -1;
    for (const FrameParams &f : frames) {
        const std::string where = "frame " + std::to_string(f.index);
        if (f.index <= last) throw InvalidArgument(where + ": frame indices must be strictly increasing");
        last = f.index;
        if (static_cast<int>(f.expression.size()) != expression_count)
            throw InvalidArgument(where + ": expression vector length differs from expression_count");
        if (static_cast<int>(f.pose.joint_count()) != joint_count)
            throw InvalidArgument(where + ": joint count differs from joint_count");
        try {
            f.pose.validate();
            f.camera.validate();
        } catch (const InvalidArgument &e) {
            throw InvalidArgument(where + ": " + e.what());
        }
    }
}

std::string frame_params_to_json(const FrameParamsFile &file) {
    file.validate();
    json root;
    root["format"] = kFormatTag;
    root["version"] = kFramesVersion;
    root["expression_count"] = file.expression_count;
    root["joint_count"] = file.joint_count;
    json frames = json::array();
    for (const FrameParams &f : file.frames) {
        json jf;
        jf["index"] = f.index;
        jf["expression"] = f.expression;
        json joints = json::array();
        for (const RigidTransform &t : f.pose.joints) joints.push_back(transform_to_json(t));
        jf["joints"] = joints;
        const Camera &c = f.camera;
        jf["camera"] = {{"fx", c.fx},         {"fy", c.fy},         {"cx", c.cx},
                        {"cy", c.cy},         {"width", c.width},   {"height", c.height},
                        {"near", c.near},     {"far", c.far},
                        {"world_to_camera", transform_to_json(c.world_to_camera)}};
        frames.push_back(jf);
    }
    root["frames"] = frames;
    return root.dump(1);
}

FrameParamsFile frame_params_from_json(const std::string &text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error &e) {
        throw FormatError(std::string("frame params: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw FormatError("frame params: top level must be an object");
    if (field<std::string>(root, "format", "frame params") != kFormatTag)
        throw BadMagicError("frame params: format tag is not \"gblend-frames\"");
    const int version = field<int>(root, "version", "frame params");
    if (version != kFramesVersion) throw VersionError("frame params: unsupported version " + std::to_string(version));

    FrameParamsFile file;
    file.expression_count = field<int>(root, "expression_count", "frame params");
    file.joint_count = field<int>(root, "joint_count", "frame params");
    const json frames = field<json>(root, "frames", "frame params");
    if (!frames.is_array()) throw FormatError("frame params: \"frames\" must be an array");
    for (const json &jf : frames) {
        FrameParams f;
        f.index = field<int>(jf, "index", "frame record");
        const std::string where = "frame " + std::to_string(f.index);
        f.expression = field<std::vector<double>>(jf, "expression", where);
        const json joints = field<json>(jf, "joints", where);
        if (!joints.is_array()) throw FormatError(where + ": \"joints\" must be an array");
        for (std::size_t j = 0; j < joints.size(); ++j)
            f.pose.joints.push_back(transform_from_json(joints[j], where + " joint " + std::to_string(j)));
        const json jc = field<json>(jf, "camera", where);
        const std::string cw = where + " camera";
        f.camera.fx = field<double>(jc, "fx", cw);
        f.camera.fy = field<double>(jc, "fy", cw);
        f.camera.cx = field<double>(jc, "cx", cw);
        f.camera.cy = field<double>(jc, "cy", cw);
        f.camera.width = field<int>(jc, "width", cw);
        f.camera.height = field<int>(jc, "height", cw);
        f.camera.near = field<double>(jc, "near", cw);
        f.camera.far = field<double>(jc, "far", cw);
        f.camera.world_to_camera = transform_from_json(field<json>(jc, "world_to_camera", cw), cw);
        file.frames.push_back(std::move(f));
    }
    try {
        file.validate();
    } catch (const InvalidArgument &e) {
        throw FormatError(std::string("frame params: ") + e.what());
    }
    return file;
}

void save_frame_params(const FrameParamsFile &file, const std::filesystem::path &path) {
    const std::string text = frame_params_to_json(file) + "\n";
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

FrameParamsFile load_frame_params(const std::filesystem::path &path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    return frame_params_from_json(std::string(bytes.begin(), bytes.end()));
}

std::filesystem::path frame_image_path(const std::filesystem::path &dir, int index) {
    return dir / "images" / (frame_stem(index) + ".png");
}

std::filesystem::path frame_mask_path(const std::filesystem::path &dir, int index) {
    return dir / "masks" / (frame_stem(index) + ".png");
}

Sequence load_sequence(const std::filesystem::path &dir, bool with_images) {
    Sequence seq;
    seq.params = load_frame_params(dir / "frames.json");
    if (!with_images) return seq;
    for (const FrameParams &f : seq.params.frames) {
        const std::string stem = frame_stem(f.index);
        const std::filesystem::path img = first_existing(dir / "images", stem, {".png", ".ppm"});
        if (img.empty()) throw IoError("missing image for frame " + std::to_string(f.index));
        const std::filesystem::path mask = first_existing(dir / "masks", stem, {".png", ".pgm", ".ppm"});
        if (mask.empty()) throw IoError("missing mask for frame " + std::to_string(f.index));
        FrameImagePair pair;
        pair.target = load_image(img);
        if (pair.target.channels == 1) {
            Image rgb(pair.target.width, pair.target.height, 3);
            for (std::size_t p = 0; p < rgb.pixel_count(); ++p)
                for (int c = 0; c < 3; ++c) rgb.data[3 * p + c] = pair.target.data[p];
            pair.target = std::move(rgb);
        }
        pair.mask = binarize(first_channel(load_image(mask)));
        const std::string where = "frame " + std::to_string(f.index);
        if (pair.mask.width != pair.target.width || pair.mask.height != pair.target.height)
            throw DimensionError(where + ": mask size differs from image size");
        if (pair.target.width != f.camera.width || pair.target.height != f.camera.height)
            throw DimensionError(where + ": image size differs from camera size");
        if (!seq.images.empty() && !seq.images.front().target.same_shape(pair.target))
            throw DimensionError(where + ": image size differs from earlier frames");
        seq.images.push_back(std::move(pair));
    }
    return seq;
}

std::vector<Image> load_image_directory(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> frames;
    frames.reserve(files.size());
    for (const auto &f : files) frames.push_back(load_image(f));
    for (const Image &f : frames)
        if (!f.same_shape(frames.front())) throw DimensionError("frames in " + dir.string() + " differ in size");
    return frames;
}

} // namespace gblend
