#include "gblend/assets.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace gblend {

namespace {

std::string lower_extension(const std::filesystem::path &path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Image load_png(const std::filesystem::path &path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw FormatError("cannot decode PNG " + path.string() + ": " + img.message);
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), color ? 3 : 1);
    for (std::size_t i = 0; i < buffer.size(); ++i) out.data[i] = buffer[i] / 255.0;
    return out;
}

void save_png(const Image &image, const std::filesystem::path &path) {
    if (image.channels != 1 && image.channels != 3)
        throw InvalidArgument("save_image: PNG output needs 1 or 3 channels");
    std::vector<std::uint8_t> buffer(image.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = quantize(image.data[i]);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

// Next whitespace-delimited header token of a netpbm file, skipping comments.
std::string pnm_token(std::istream &in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

Image load_pnm(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string magic = pnm_token(in);
    if (magic != "P6" && magic != "P5") throw FormatError(path.string() + ": only binary PPM (P6) / PGM (P5) supported");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(pnm_token(in));
        h = std::stoi(pnm_token(in));
        maxval = std::stoi(pnm_token(in));
    } catch (const std::exception &) {
        throw FormatError(path.string() + ": malformed netpbm header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw FormatError(path.string() + ": bad netpbm header");
    const int channels = magic == "P6" ? 3 : 1;
    const int bytes_per = maxval > 255 ? 2 : 1;
    Image out(w, h, channels);
    std::vector<std::uint8_t> raw(out.size() * bytes_per);
    in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw TruncatedError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int v = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
        out.data[i] = static_cast<double>(v) / maxval;
    }
    return out;
}

void save_pnm(const Image &image, const std::filesystem::path &path, bool gray) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << (gray ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
    for (std::size_t p = 0; p < image.pixel_count(); ++p) {
        if (gray) {
            out.put(static_cast<char>(quantize(image.data[p * image.channels])));
        } else {
            for (int c = 0; c < 3; ++c)
                out.put(static_cast<char>(quantize(image.data[p * image.channels + std::min(c, image.channels - 1)])));
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace

Image load_image(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) throw IoError("missing image " + path.string());
    const std::string ext = lower_extension(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return load_pnm(path);
    throw FormatError("unsupported image format: " + path.string());
}

void save_image(const Image &image, const std::filesystem::path &path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string ext = lower_extension(path);
    if (ext == ".png") return save_png(image, path);
    if (ext == ".ppm") return save_pnm(image, path, false);
    if (ext == ".pgm") return save_pnm(image, path, true);
    throw InvalidArgument("unsupported output image format: " + path.string());
}

Image binarize(const Image &image, double threshold) {
    Image out = image;
    for (double &v : out.data) v = v >= threshold ? 1.0 : 0.0;
    return out;
}

Image first_channel(const Image &image) {
    Image out(image.width, image.height, 1);
    for (std::size_t p = 0; p < image.pixel_count(); ++p) out.data[p] = image.data[p * image.channels];
    return out;
}

} // namespace gblend
