#include "gblend/assets.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gblend {

namespace {

constexpr char kModelMagic[4] = {'G', 'B', 'A', 'V'};
constexpr char kCheckpointMagic[4] = {'G', 'B', 'C', 'K'};

class ByteWriter {
public:
    void magic(const char (&m)[4]) { bytes_.insert(bytes_.end(), m, m + 4); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void floats(const std::vector<float> &v) {
        for (float x : v) f32(x);
    }
    void raw(const std::vector<std::uint8_t> &v) { bytes_.insert(bytes_.end(), v.begin(), v.end()); }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t> &bytes, const char *what) : bytes_(bytes), what_(what) {}

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            std::ostringstream os;
            os << what_ << ": truncated at byte " << pos_ << " (needed " << n << " more, "
               << bytes_.size() - pos_ << " available)";
            throw TruncatedError(os.str());
        }
    }
    void magic(const char (&m)[4]) {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, m, 4) != 0)
            throw BadMagicError(std::string(what_) + ": bad magic, expected \"" + std::string(m, 4) + "\"");
        pos_ += 4;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    void floats(std::vector<float> &out) {
        need(out.size() * 4);
        for (float &x : out) x = f32();
    }
    std::vector<std::uint8_t> raw(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) {
            std::ostringstream os;
            os << what_ << ": " << remaining() << " trailing bytes beyond the declared counts";
            throw CountMismatchError(os.str());
        }
    }

private:
    const std::vector<std::uint8_t> &bytes_;
    const char *what_;
    std::size_t pos_ = 0;
};

void write_set(ByteWriter &w, const GaussianSet &s) {
    s.for_each_field([&](const std::vector<float> &field) { w.floats(field); });
}

void read_set(ByteReader &r, GaussianSet &s) {
    s.for_each_field([&](std::vector<float> &field) { r.floats(field); });
}

constexpr std::uint32_t kMaxCount = 1u << 28;

std::size_t trainable_count(const BlendshapeModel &m) {
    std::size_t n = 0;
    auto add = [&](const GaussianSet &s) { s.for_each_field([&](const std::vector<float> &f) { n += f.size(); }); };
    add(m.neutral);
    for (const GaussianSet &d : m.deltas) add(d);
    add(m.mouth);
    return n;
}

} // namespace

std::vector<std::uint8_t> encode_model(const BlendshapeModel &model) {
    model.validate();
    ByteWriter w;
    w.magic(kModelMagic);
    w.u32(kModelFormatVersion);
    w.u32(static_cast<std::uint32_t>(model.neutral.size()));
    w.u32(static_cast<std::uint32_t>(model.deltas.size()));
    w.u32(static_cast<std::uint32_t>(model.joint_count));
    w.u32(static_cast<std::uint32_t>(model.mouth.size()));
    w.u32(static_cast<std::uint32_t>(model.sh_degree()));
    w.u32(static_cast<std::uint32_t>(model.mouth_joint));
    write_set(w, model.neutral);
    for (const GaussianSet &d : model.deltas) write_set(w, d);
    w.floats(model.skin_weights);
    write_set(w, model.mouth);
    return w.take();
}

BlendshapeModel decode_model(const std::vector<std::uint8_t> &bytes) {
    ByteReader r(bytes, "model file");
    r.magic(kModelMagic);
    const std::uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw VersionError("model file: unsupported version " + std::to_string(version));
    const std::uint32_t n = r.u32(), deltas = r.u32(), joints = r.u32(), mouth = r.u32();
    const std::uint32_t degree = r.u32(), mouth_joint = r.u32();
    if (degree > static_cast<std::uint32_t>(kMaxShDegree))
        throw FormatError("model file: SH degree " + std::to_string(degree) + " out of range");
    if (n > kMaxCount || deltas > kMaxCount || joints > kMaxCount || mouth > kMaxCount || joints == 0)
        throw FormatError("model file: implausible counts in header");

    // Reject impossible sizes before allocating anything.
    const std::uint64_t per_gaussian = 11 + 3 * static_cast<std::uint64_t>(sh_coeff_count(degree));
    const std::uint64_t floats = per_gaussian * n * (1 + static_cast<std::uint64_t>(deltas)) +
                                 static_cast<std::uint64_t>(n) * joints + per_gaussian * mouth;
    r.need(static_cast<std::size_t>(std::min<std::uint64_t>(floats * 4, bytes.size() + 1)));

    BlendshapeModel m;
    m.joint_count = static_cast<int>(joints);
    m.mouth_joint = static_cast<int>(mouth_joint);
    m.neutral = GaussianSet(n, static_cast<int>(degree));
    read_set(r, m.neutral);
    m.deltas.assign(deltas, GaussianSet(n, static_cast<int>(degree)));
    for (GaussianSet &d : m.deltas) read_set(r, d);
    m.skin_weights.resize(static_cast<std::size_t>(n) * joints);
    r.floats(m.skin_weights);
    m.mouth = GaussianSet(mouth, static_cast<int>(degree));
    read_set(r, m.mouth);
    r.expect_end();
    try {
        m.validate();
    } catch (const InvalidArgument &e) {
        throw FormatError(std::string("model file: ") + e.what());
    }
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void save_model(const BlendshapeModel &model, const std::filesystem::path &path) {
    write_file(path, encode_model(model));
}

BlendshapeModel load_model(const std::filesystem::path &path) { return decode_model(read_file(path)); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &c) {
    if (c.first_moment.size() != c.second_moment.size())
        throw InvalidArgument("checkpoint: moment buffers differ in length");
    if (c.first_moment.size() != trainable_count(c.model))
        throw InvalidArgument("checkpoint: moment buffers do not match the model's parameter count");
    ByteWriter w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointFormatVersion);
    w.u64(c.iteration);
    const std::vector<std::uint8_t> model = encode_model(c.model);
    w.u64(model.size());
    w.raw(model);
    w.u64(c.first_moment.size());
    for (double v : c.first_moment) w.f64(v);
    for (double v : c.second_moment) w.f64(v);
    w.u32(static_cast<std::uint32_t>(c.rng_state.size()));
    w.raw(std::vector<std::uint8_t>(c.rng_state.begin(), c.rng_state.end()));
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes) {
    ByteReader r(bytes, "checkpoint");
    r.magic(kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion)
        throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.iteration = r.u64();
    const std::uint64_t model_size = r.u64();
    r.need(static_cast<std::size_t>(std::min<std::uint64_t>(model_size, bytes.size() + 1)));
    c.model = decode_model(r.raw(static_cast<std::size_t>(model_size)));
    const std::uint64_t params = r.u64();
    if (params != trainable_count(c.model)) {
        std::ostringstream os;
        os << "checkpoint: " << params << " moment entries declared, model has " << trainable_count(c.model)
           << " parameters";
        throw CountMismatchError(os.str());
    }
    r.need(static_cast<std::size_t>(std::min<std::uint64_t>(params * 16, bytes.size() + 1)));
    c.first_moment.resize(params);
    c.second_moment.resize(params);
    for (double &v : c.first_moment) v = r.f64();
    for (double &v : c.second_moment) v = r.f64();
    const std::uint32_t rng_len = r.u32();
    const std::vector<std::uint8_t> rng = r.raw(rng_len);
    c.rng_state.assign(rng.begin(), rng.end());
    r.expect_end();
    return c;
}

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path) {
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_file(path)); }

} // namespace gblend
