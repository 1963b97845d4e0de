#include <cmath>
#include <fstream>

#include <png.h>

#include "doctest.h"
#include "realdepth/io.hpp"
#include "test_util.hpp"

using namespace realdepth;
using namespace realdepth::io;

namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string le_float(float f) {
    unsigned char b[4];
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    return std::string(reinterpret_cast<char*>(b), 4);
}

std::string be_float(float f) {
    std::string s = le_float(f);
    return {s.rbegin(), s.rend()};
}

// 8-bit grayscale PNG written with libpng directly.
void write_png8(const fs::path& p, int w, int h) {
    FILE* f = std::fopen(p.string().c_str(), "wb");
    REQUIRE(f);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(w, 7);
    for (int y = 0; y < h; ++y) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

}  // namespace

TEST_CASE("16-bit png round trip") {
    testutil::TempDir dir("png16");
    Rng rng(1);
    Grid2D g(13, 17);
    for (double& v : g.values()) v = static_cast<double>(rng.below(65536));
    g[0] = 0.0;
    g[1] = 65535.0;
    write_depth(g, dir / "d.png");
    CHECK(read_depth(dir / "d.png") == g);
    CHECK(read_png16(dir / "d.png") == g);

    // Scaled: stored counts times scale.
    Grid2D mm(2, 2, std::vector<double>{0.0, 0.25, 1.5, 16383.75});
    write_depth(mm, dir / "s.png", 0.25);
    CHECK(read_depth(dir / "s.png", 0.25) == mm);
    CHECK(read_png16(dir / "s.png") == Grid2D(2, 2, std::vector<double>{0, 1, 6, 65535}));
}

TEST_CASE("png write rejects unrepresentable values") {
    testutil::TempDir dir("png_over");
    CHECK_THROWS_AS(write_depth(Grid2D(1, 1, 70000.0), dir / "a.png"), IoError);
    CHECK_THROWS_AS(write_depth(Grid2D(1, 1, -1.0), dir / "b.png"), IoError);
    CHECK_THROWS_AS(write_png16(Grid2D(1, 1, 1.5), dir / "c.png"), IoError);
    try {
        write_depth(Grid2D(1, 2, std::vector<double>{1.0, 1e9}), dir / "d.png");
        FAIL("expected an error");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("d.png") != std::string::npos);
        CHECK(msg.find("pixel 1") != std::string::npos);
    }
}

TEST_CASE("8-bit png depth is rejected with a bit-depth error") {
    testutil::TempDir dir("png8");
    write_png8(dir / "e.png", 4, 3);
    try {
        read_depth(dir / "e.png");
        FAIL("expected an error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("16-bit") != std::string::npos);
    }
    write_bytes(dir / "junk.png", "not a png at all");
    CHECK_THROWS_AS(read_png16(dir / "junk.png"), IoError);
    CHECK_THROWS_AS(read_png16(dir / "missing.png"), IoError);
}

TEST_CASE("pfm round trip") {
    testutil::TempDir dir("pfm");
    Rng rng(2);
    Grid2D g(5, 3);
    for (double& v : g.values()) v = static_cast<float>(rng.uniform(-100, 5000));
    g[4] = 0.0;
    write_depth(g, dir / "d.pfm");
    CHECK(read_depth(dir / "d.pfm") == g);
    const std::string bytes = read_bytes(dir / "d.pfm");
    CHECK(bytes.rfind("Pf\n3 5\n-1.0\n", 0) == 0);
    CHECK(bytes.size() == std::string("Pf\n3 5\n-1.0\n").size() + 5 * 3 * 4);
}

TEST_CASE("hand-built 2x2 pfm fixtures decode per convention") {
    testutil::TempDir dir("pfm_hand");
    // File rows run bottom-to-top: first stored row is the image's last row.
    write_bytes(dir / "le.pfm", "Pf\n2 2\n-1.0\n" + le_float(3.0f) + le_float(4.0f) + le_float(1.0f) +
                                     le_float(2.5f));
    const Grid2D le = read_pfm(dir / "le.pfm");
    CHECK(le == Grid2D(2, 2, std::vector<double>{1.0, 2.5, 3.0, 4.0}));

    write_bytes(dir / "be.pfm", "Pf\n2 2\n1.0\n" + be_float(3.0f) + be_float(4.0f) + be_float(1.0f) +
                                     be_float(2.5f));
    CHECK(read_pfm(dir / "be.pfm") == le);

    // Writing the decoded grid reproduces the little-endian fixture byte for byte.
    write_pfm(le, dir / "again.pfm");
    CHECK(read_bytes(dir / "again.pfm") == read_bytes(dir / "le.pfm"));
}

TEST_CASE("malformed pfm files report byte offsets") {
    testutil::TempDir dir("pfm_bad");
    auto message = [&](const std::string& name, const std::string& bytes) {
        write_bytes(dir / name, bytes);
        try {
            read_pfm(dir / name);
        } catch (const IoError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message("magic.pfm", "P6\n2 2\n-1.0\n").find("byte offset 0") != std::string::npos);
    CHECK(message("color.pfm", "PF\n2 2\n-1.0\n").find("3-channel") != std::string::npos);
    CHECK(message("width.pfm", "Pf\nx 2\n-1.0\n").find("byte offset 3") != std::string::npos);
    CHECK(message("height.pfm", "Pf\n2 0\n-1.0\n").find("byte offset 5") != std::string::npos);
    CHECK(message("scale.pfm", "Pf\n2 2\n0\n").find("byte offset 7") != std::string::npos);
    CHECK(message("short.pfm", "Pf\n2 2\n-1.0\n" + le_float(1.0f)).find("truncated at byte offset 16") !=
          std::string::npos);
    CHECK(message("empty.pfm", "").find("missing magic") != std::string::npos);
}

TEST_CASE("rgb and uncertainty png") {
    testutil::TempDir dir("rgb");
    Rng rng(3);
    FeatureMap rgb(3, 6, 5);
    for (double& v : rgb.values()) v = static_cast<double>(rng.below(256)) / 255.0;
    write_rgb(rgb, dir / "c.png");
    const FeatureMap back = read_rgb(dir / "c.png");
    for (std::size_t i = 0; i < rgb.size(); ++i) CHECK(back[i] == doctest::Approx(rgb[i]).epsilon(1e-15));

    UncertaintyMap u{Grid2D(4, 4)};
    for (double& v : u.labels.values()) v = static_cast<double>(rng.below(2));
    write_uncertainty(u, dir / "u.png");
    CHECK(read_uncertainty(dir / "u.png").labels == u.labels);
    CHECK_THROWS_AS(read_uncertainty(dir / "c.png"), IoError);
}

TEST_CASE("relative depth reads pfm and 16-bit png") {
    testutil::TempDir dir("rel");
    const Grid2D g(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
    write_pfm(g, dir / "r.pfm");
    write_png16(g, dir / "r.png");
    CHECK(read_relative_depth(dir / "r.pfm") == g);
    CHECK(read_relative_depth(dir / "r.png") == g);
}

TEST_CASE("manifest parse, validation and round trip") {
    testutil::TempDir dir("manifest");
    FeatureMap rgb(3, 4, 4, 0.5);
    write_rgb(rgb, dir / "a_rgb.png");
    write_depth(Grid2D(4, 4, 1000.0), dir / "a_gt.png");
    write_depth(Grid2D(4, 5, 1000.0), dir / "wrong_gt.png");

    const std::string text = R"({"version": 1, "depth_unit": "mm", "depth_scale": 1.0,
        "samples": [{"id": "a", "rgb_path": "a_rgb.png", "gt_path": "a_gt.png"}]})";
    {
        std::ofstream(dir / "m.json") << text;
    }
    const DatasetManifest m = DatasetManifest::load(dir / "m.json");
    REQUIRE(m.samples.size() == 1);
    CHECK(m.resolve(m.samples[0].gt_path) == dir / "a_gt.png");
    CHECK_FALSE(m.samples[0].raw_path.has_value());

    const DatasetManifest again = DatasetManifest::parse(m.to_json(), dir.path());
    CHECK(again.to_json() == m.to_json());

    CHECK_THROWS_AS(DatasetManifest::parse("{", dir.path()), ParameterError);
    CHECK_THROWS_AS(DatasetManifest::parse(R"({"version": 2, "samples": []})", dir.path()),
                    ParameterError);
    CHECK_THROWS_AS(DatasetManifest::parse(R"({"version": 1, "samples": [
        {"id": "a", "rgb_path": "x", "gt_path": "y"}, {"id": "a", "rgb_path": "x", "gt_path": "y"}]})",
                                           dir.path()),
                    ParameterError);

    DatasetManifest missing = m;
    missing.samples[0].raw_path = "nope.png";
    CHECK_THROWS_AS(missing.validate(), IoError);
    DatasetManifest mismatched = m;
    mismatched.samples[0].gt_path = "wrong_gt.png";
    CHECK_THROWS_AS(mismatched.validate(), IoError);
}

TEST_CASE("output sets commit atomically and clean up on failure") {
    testutil::TempDir dir("outset");
    {
        OutputSet out;
        const fs::path tmp = out.stage(dir / "a.pfm");
        CHECK(tmp != dir / "a.pfm");
        CHECK(tmp.extension() == ".pfm");
        write_pfm(Grid2D(1, 1, 1.0), tmp);
        CHECK_FALSE(fs::exists(dir / "a.pfm"));
        out.commit();
    }
    CHECK(fs::exists(dir / "a.pfm"));
    {
        OutputSet out;
        write_pfm(Grid2D(1, 1, 1.0), out.stage(dir / "b.pfm"));
        write_pfm(Grid2D(1, 1, 1.0), out.stage(dir / "c.pfm"));
    }
    CHECK_FALSE(fs::exists(dir / "b.pfm"));
    CHECK_FALSE(fs::exists(dir / "c.pfm"));
    std::size_t leftovers = 0;
    for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir.path())) ++leftovers;
    CHECK(leftovers == 1);
}
