#include "golden.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace gblend;

namespace {

const std::filesystem::path kData = GBLEND_TEST_DATA;

bool regenerate() { return std::getenv("GBLEND_REGEN_GOLDEN") != nullptr; }

std::vector<std::uint8_t> bytes_of(const std::string &s) { return {s.begin(), s.end()}; }

SynthConfig small_synth(std::uint64_t seed, int frames = 3) {
    SynthConfig c;
    c.gaussians = 60;
    c.blendshapes = 2;
    c.frames = frames;
    c.width = 32;
    c.height = 24;
    c.seed = seed;
    return c;
}

void write_pnm(const std::filesystem::path &path, const char *magic, int w, int h, int maxval,
               const std::vector<std::uint8_t> &payload) {
    std::ofstream out(path, std::ios::binary);
    out << magic << "\n" << w << " " << h << "\n" << maxval << "\n";
    out.write(reinterpret_cast<const char *>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

} // namespace

TEST_CASE("model save, load, save is byte-identical") {
    Rng rng(1);
    const BlendshapeModel m = testutil::random_model(50, 3, 2, 10, 2, rng);
    const auto dir = testutil::temp_dir("model_rt");
    save_model(m, dir / "a.gbav");
    const BlendshapeModel back = load_model(dir / "a.gbav");
    save_model(back, dir / "b.gbav");
    CHECK(read_file(dir / "a.gbav") == read_file(dir / "b.gbav"));
    CHECK(back.neutral.sh == m.neutral.sh);
    CHECK(back.deltas[2].rotations == m.deltas[2].rotations);
    CHECK(back.skin_weights == m.skin_weights);
    CHECK(back.mouth.centers == m.mouth.centers);
    CHECK(back.mouth_joint == m.mouth_joint);
}

TEST_CASE("empty model round-trips") {
    BlendshapeModel m;
    m.deltas.resize(2);
    const auto bytes = encode_model(m);
    const BlendshapeModel back = decode_model(bytes);
    CHECK(back.neutral.size() == 0);
    CHECK(back.deltas.size() == 2);
    CHECK(encode_model(back) == bytes);
}

TEST_CASE("model decoding errors are typed") {
    const auto bytes = encode_model(golden::model());

    SUBCASE("every truncation is reported") {
        for (std::size_t len = 0; len < bytes.size(); ++len) {
            const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
            CHECK_THROWS_AS(decode_model(cut), TruncatedError);
        }
    }
    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        CHECK_THROWS_AS(decode_model(b), BadMagicError);
    }
    SUBCASE("unknown version") {
        auto b = bytes;
        b[4] = 2;
        CHECK_THROWS_AS(decode_model(b), VersionError);
    }
    SUBCASE("trailing data") {
        auto b = bytes;
        b.push_back(0);
        CHECK_THROWS_AS(decode_model(b), CountMismatchError);
    }
    SUBCASE("count too large for the payload") {
        auto b = bytes;
        b[8] = 3; // neutral count
        CHECK_THROWS_AS(decode_model(b), TruncatedError);
    }
    SUBCASE("invariants checked after decoding") {
        BlendshapeModel m = golden::model();
        auto b = encode_model(m);
        // first skin weight lives right after the neutral and delta blocks
        const std::size_t off = 32 + 4 * (23 * 2 * 2);
        const float bad = 0.5f;
        std::memcpy(b.data() + off, &bad, 4);
        CHECK_THROWS_AS(decode_model(b), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_model("/nonexistent/model.gbav"), IoError);
    }
}

TEST_CASE("checkpoint round-trip and errors") {
    const Checkpoint c = golden::checkpoint();
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back.iteration == 7);
    CHECK(back.first_moment == c.first_moment);
    CHECK(back.second_moment == c.second_moment);
    CHECK(back.rng_state == c.rng_state);
    CHECK(encode_checkpoint(back) == bytes);

    for (std::size_t len = 0; len < bytes.size(); len += 7) {
        const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
        CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
    }
    auto bad = bytes;
    bad[3] = 'V';
    CHECK_THROWS_AS(decode_checkpoint(bad), BadMagicError);

    Checkpoint wrong = c;
    wrong.first_moment.pop_back();
    wrong.second_moment.pop_back();
    CHECK_THROWS_AS(encode_checkpoint(wrong), InvalidArgument);
}

TEST_CASE("checkpoint from a training state restores the state") {
    Rng rng(2);
    TrainState s = TrainState::fresh(testutil::random_model(10, 1, 1, 3, 0, rng), 99);
    s.iteration = 12;
    s.rng.normal();
    const auto dir = testutil::temp_dir("ckpt");
    save_checkpoint(s.to_checkpoint(), dir / "c.gbck");
    TrainState back = TrainState::from_checkpoint(load_checkpoint(dir / "c.gbck"));
    CHECK(back.iteration == 12);
    CHECK(back.rng.uniform() == s.rng.uniform());
    CHECK(back.rng.normal() == s.rng.normal());
}

TEST_CASE("golden files") {
    const auto model_bytes = encode_model(golden::model());
    const auto ckpt_bytes = encode_checkpoint(golden::checkpoint());
    const auto frames_bytes = bytes_of(frame_params_to_json(golden::frames()) + "\n");
    if (regenerate()) {
        write_file(kData / "golden_model.gbav", model_bytes);
        write_file(kData / "golden_checkpoint.gbck", ckpt_bytes);
        write_file(kData / "golden_frames.json", frames_bytes);
    }
    CHECK(read_file(kData / "golden_model.gbav") == model_bytes);
    CHECK(read_file(kData / "golden_checkpoint.gbck") == ckpt_bytes);
    CHECK(read_file(kData / "golden_frames.json") == frames_bytes);

    const BlendshapeModel m = load_model(kData / "golden_model.gbav");
    CHECK(m.neutral.centers[0] == -3.0f);
    CHECK(m.neutral.rotations[4] == 2.0f);
    CHECK(m.skin_weights == std::vector<float>{0.75f, 0.25f, 0.0f, 1.0f});
    CHECK(encode_model(m) == model_bytes);
    // header: magic, version 1, N=2, n=1, J=2, mouth 1, degree 1, jaw 1
    const std::vector<std::uint8_t> head(model_bytes.begin(), model_bytes.begin() + 12);
    CHECK(head == std::vector<std::uint8_t>{'G', 'B', 'A', 'V', 1, 0, 0, 0, 2, 0, 0, 0});
    CHECK(model_bytes.size() == 32 + 4 * (23 * 5 + 4));

    const FrameParamsFile f = load_frame_params(kData / "golden_frames.json");
    CHECK(f.frames.size() == 2);
    CHECK(f.frames[1].index == 3);
    CHECK(f.frames[1].pose.joints[1].translation.y() == -0.125);
}

TEST_CASE("frame parameter JSON") {
    const FrameParamsFile f = golden::frames();
    const std::string text = frame_params_to_json(f);
    CHECK(frame_params_to_json(frame_params_from_json(text)) == text);

    auto edit = [&](const std::string &from, const std::string &to) {
        std::string t = text;
        const auto pos = t.find(from);
        REQUIRE(pos != std::string::npos);
        t.replace(pos, from.size(), to);
        return t;
    };
    CHECK_THROWS_AS(frame_params_from_json(edit("gblend-frames", "other")), BadMagicError);
    CHECK_THROWS_AS(frame_params_from_json(edit("\"version\": 1", "\"version\": 9")), VersionError);
    CHECK_THROWS_AS(frame_params_from_json(edit("\"fx\"", "\"fz\"")), FormatError);
    CHECK_THROWS_AS(frame_params_from_json(edit("\"index\": 3", "\"index\": 0")), FormatError);
    CHECK_THROWS_AS(frame_params_from_json(edit("\"expression_count\": 2", "\"expression_count\": 3")), FormatError);
    CHECK_THROWS_AS(frame_params_from_json("{not json"), FormatError);
}

TEST_CASE("image decoding") {
    const auto dir = testutil::temp_dir("images");
    write_pnm(dir / "a.pgm", "P5", 2, 1, 255, {255, 0});
    const Image a = load_image(dir / "a.pgm");
    CHECK(a.channels == 1);
    CHECK(a.data[0] == 1.0);
    CHECK(a.data[1] == 0.0);

    write_pnm(dir / "b.ppm", "P6", 1, 1, 255, {255, 128, 0});
    const Image b = load_image(dir / "b.ppm");
    CHECK(b.channels == 3);
    CHECK(b.data[0] == 1.0);
    CHECK(b.data[1] == 128.0 / 255.0);

    write_pnm(dir / "c.pgm", "P5", 1, 1, 65535, {0xff, 0xff});
    CHECK(load_image(dir / "c.pgm").data[0] == 1.0);

    Image px(3, 2, 3);
    for (std::size_t i = 0; i < px.data.size(); ++i) px.data[i] = (i * 17 % 256) / 255.0;
    save_image(px, dir / "d.png");
    const Image d = load_image(dir / "d.png");
    CHECK(d.data == px.data);

    write_pnm(dir / "e.ppm", "P6", 4, 4, 255, {1, 2, 3});
    CHECK_THROWS_AS(load_image(dir / "e.ppm"), TruncatedError);
    CHECK_THROWS_AS(load_image(dir / "missing.png"), IoError);

    Image soft(2, 1, 1);
    soft.data = {0.5, 0.4999};
    CHECK(binarize(soft).data == std::vector<double>{1.0, 0.0});
}

TEST_CASE("sequence loading") {
    const auto dir = testutil::temp_dir("sequence");
    write_dataset(synth_dataset(small_synth(3)), dir);

    SUBCASE("three frames") {
        const Sequence s = load_sequence(dir);
        CHECK(s.params.frames.size() == 3);
        CHECK(s.images.size() == 3);
        for (const FrameImagePair &p : s.images) {
            CHECK(p.target.channels == 3);
            CHECK(p.mask.channels == 1);
            CHECK(p.target.width == 32);
            for (double v : p.mask.data) CHECK((v == 0.0 || v == 1.0));
        }
    }
    SUBCASE("missing mask names the frame") {
        std::filesystem::remove(frame_mask_path(dir, 2));
        try {
            load_sequence(dir);
            FAIL("expected IoError");
        } catch (const IoError &e) {
            CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
        }
    }
    SUBCASE("image size mismatch") {
        save_image(Image(16, 16, 3, 0.5), frame_image_path(dir, 1));
        CHECK_THROWS_AS(load_sequence(dir), DimensionError);
    }
    SUBCASE("parameters only") {
        const Sequence s = load_sequence(dir, false);
        CHECK(s.images.empty());
        CHECK(s.params.expression_count == 2);
    }
}

TEST_CASE("synthetic dataset") {
    SUBCASE("seeded output is byte-identical") {
        const auto a = testutil::temp_dir("synth_a"), b = testutil::temp_dir("synth_b");
        write_dataset(synth_dataset(small_synth(7)), a);
        write_dataset(synth_dataset(small_synth(7)), b);
        int files = 0;
        for (const auto &e : std::filesystem::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            const auto rel = std::filesystem::relative(e.path(), a);
            CHECK(read_file(e.path()) == read_file(b / rel));
            ++files;
        }
        CHECK(files == 1 + 3 + 3 + 2);
        const auto c = testutil::temp_dir("synth_c");
        write_dataset(synth_dataset(small_synth(8)), c);
        CHECK(read_file(a / "ground_truth.gbav") != read_file(c / "ground_truth.gbav"));
    }
    SUBCASE("masks are thresholded ground-truth coverage") {
        const SynthDataset d = synth_dataset(small_synth(9, 4));
        REQUIRE(d.images.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            const FrameRender r = render_frame(d.ground_truth, d.params.frames[i]);
            CHECK(d.images[i].mask.data == binarize(r.output.alpha, 0.5).data);
            // targets are the 8-bit quantised render
            for (std::size_t k = 0; k < r.output.rgb.size(); ++k)
                CHECK(std::abs(d.images[i].target.data[k] - std::clamp(r.output.rgb.data[k], 0.0, 1.0)) <= 0.5 / 255 + 1e-12);
        }
        const auto dir = testutil::temp_dir("synth_masks");
        write_dataset(d, dir);
        const Sequence s = load_sequence(dir);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(s.images[i].mask.data == d.images[i].mask.data);
            CHECK(s.images[i].target.data == d.images[i].target.data);
        }
        CHECK(encode_model(load_model(dir / "ground_truth.gbav")) == encode_model(d.ground_truth));
    }
    SUBCASE("bad config") {
        SynthConfig c = small_synth(1);
        c.gaussians = 0;
        CHECK_THROWS_AS(synth_dataset(c), InvalidArgument);
    }
}
