#include "realdepth/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"

namespace realdepth::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError(path.string() + ": cannot open for " +
                      (mode[0] == 'r' ? "reading" : "writing"));
    }
    return f;
}

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
    auto* where = static_cast<std::string*>(png_get_error_ptr(png));
    *where = message;
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct PngImage {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int channels = 0;
    std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

PngImage decode_png(const fs::path& path) {
    FilePtr file = open_file(path, "rb");
    unsigned char signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw IoError(path.string() + ": not a PNG file (bad signature at byte offset 0)");
    }
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler,
                                             png_warning_handler);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string() + ": libpng initialization failed");
    }
    PngImage img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string() + ": PNG decode failed: " + error);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (img.bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    img.channels = png_get_channels(png, info);
    const int depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buffer(rowbytes * img.height);
    rows.resize(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img.samples.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    if (depth == 16) {
        std::memcpy(img.samples.data(), buffer.data(), img.samples.size() * 2);
    } else {
        for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = buffer[i];
    }
    img.bit_depth = depth;
    return img;
}

void encode_png(const fs::path& path, int width, int height, int bit_depth, int color_type,
                const std::vector<std::uint16_t>& samples) {
    FilePtr file = open_file(path, "wb");
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler,
                                              png_warning_handler);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string() + ": libpng initialization failed");
    }
    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bytes_per_sample;
    std::vector<unsigned char> buffer(rowbytes * height);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bit_depth == 16) {
            buffer[2 * i] = static_cast<unsigned char>(samples[i] >> 8);
            buffer[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xFF);
        } else {
            buffer[i] = static_cast<unsigned char>(samples[i]);
        }
    }
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string() + ": PNG encode failed: " + error);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(file.get()) != 0) throw IoError(path.string() + ": write failed");
}

std::string lower_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

}  // namespace

Grid2D read_png16(const fs::path& path) {
    const PngImage img = decode_png(path);
    if (img.bit_depth != 16 || img.channels != 1) {
        throw IoError(path.string() + ": expected a 16-bit grayscale PNG, got " +
                      std::to_string(img.bit_depth) + "-bit with " + std::to_string(img.channels) +
                      " channel(s)");
    }
    Grid2D g(img.height, img.width);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = img.samples[i];
    return g;
}

void write_png16(const Grid2D& values, const fs::path& path) {
    std::vector<std::uint16_t> samples(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (!(v >= 0.0 && v <= 65535.0) || v != std::floor(v)) {
            throw IoError(path.string() + ": value " + std::to_string(v) + " at pixel " +
                          std::to_string(i) + " is not representable as a 16-bit integer");
        }
        samples[i] = static_cast<std::uint16_t>(v);
    }
    encode_png(path, values.width(), values.height(), 16, PNG_COLOR_TYPE_GRAY, samples);
}

Grid2D read_pfm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    // Whitespace-separated header tokens: magic, width, height, scale.
    auto token = [&](const char* what) {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) {
            throw IoError(path.string() + ": truncated PFM header, missing " + what +
                          " at byte offset " + std::to_string(start));
        }
        return std::pair<std::string, std::size_t>{std::string(bytes.begin() + start, bytes.begin() + pos),
                                                   start};
    };
    const auto [magic, magic_at] = token("magic");
    if (magic == "PF") {
        throw IoError(path.string() + ": 3-channel PFM is not supported (byte offset 0)");
    }
    if (magic != "Pf") {
        throw IoError(path.string() + ": bad PFM magic '" + magic + "' at byte offset 0");
    }
    auto number = [&](const char* what) {
        const auto [text, at] = token(what);
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
            return std::pair<double, std::size_t>{v, at};
        } catch (const std::exception&) {
            throw IoError(path.string() + ": malformed PFM " + what + " '" + text +
                          "' at byte offset " + std::to_string(at));
        }
    };
    const auto [width, width_at] = number("width");
    const auto [height, height_at] = number("height");
    const auto [scale, scale_at] = number("scale");
    constexpr double kMaxSide = 1 << 20;
    if (width < 1 || width > kMaxSide || width != std::floor(width)) {
        throw IoError(path.string() + ": invalid PFM width at byte offset " + std::to_string(width_at));
    }
    if (height < 1 || height > kMaxSide || height != std::floor(height)) {
        throw IoError(path.string() + ": invalid PFM height at byte offset " +
                      std::to_string(height_at));
    }
    if (scale == 0.0) {
        throw IoError(path.string() + ": PFM scale must be non-zero (byte offset " +
                      std::to_string(scale_at) + ")");
    }
    ++pos;  // single whitespace byte ends the header
    const int w = static_cast<int>(width);
    const int h = static_cast<int>(height);
    const std::size_t need = static_cast<std::size_t>(w) * h * 4;
    if (bytes.size() < pos + need) {
        throw IoError(path.string() + ": PFM payload truncated at byte offset " +
                      std::to_string(bytes.size()) + " (expected " + std::to_string(pos + need) +
                      " bytes)");
    }
    const bool little = scale < 0.0;
    Grid2D g(h, w);
    for (int row = 0; row < h; ++row) {
        const int y = h - 1 - row;  // bottom-to-top
        for (int x = 0; x < w; ++x) {
            unsigned char b[4];
            std::memcpy(b, bytes.data() + pos + (static_cast<std::size_t>(row) * w + x) * 4, 4);
            std::uint32_t bits = little ? (std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 |
                                           std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24)
                                        : (std::uint32_t{b[3]} | std::uint32_t{b[2]} << 8 |
                                           std::uint32_t{b[1]} << 16 | std::uint32_t{b[0]} << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            g(y, x) = f;
        }
    }
    if (!g.all_finite()) throw IoError(path.string() + ": PFM contains non-finite values");
    return g;
}

void write_pfm(const Grid2D& values, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << "Pf\n" << values.width() << ' ' << values.height() << "\n-1.0\n";
    std::vector<unsigned char> payload;
    payload.reserve(values.size() * 4);
    for (int y = values.height() - 1; y >= 0; --y) {
        for (int x = 0; x < values.width(); ++x) {
            const float f = static_cast<float>(values(y, x));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int k = 0; k < 4; ++k) payload.push_back(static_cast<unsigned char>(bits >> (8 * k)));
        }
    }
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError(path.string() + ": write failed");
}

Grid2D read_depth(const fs::path& path, double scale) {
    require(scale > 0.0, "read_depth: scale must be positive");
    const std::string ext = lower_extension(path);
    if (ext == ".pfm") return read_pfm(path);
    if (ext != ".png") throw IoError(path.string() + ": unsupported depth format '" + ext + "'");
    Grid2D g = read_png16(path);
    if (scale != 1.0) {
        for (double& v : g.values()) v *= scale;
    }
    return g;
}

void write_depth(const Grid2D& depth, const fs::path& path, double scale) {
    require(scale > 0.0, "write_depth: scale must be positive");
    const std::string ext = lower_extension(path);
    if (ext == ".pfm") return write_pfm(depth, path);
    if (ext != ".png") throw IoError(path.string() + ": unsupported depth format '" + ext + "'");
    Grid2D counts = depth;
    for (double& v : counts.values()) v = std::round(v / scale);
    write_png16(counts, path);
}

FeatureMap read_rgb(const fs::path& path) {
    const PngImage img = decode_png(path);
    const double peak = img.bit_depth == 16 ? 65535.0 : 255.0;
    FeatureMap rgb(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * img.width + x) * img.channels;
            for (int c = 0; c < 3; ++c) {
                const int src = img.channels >= 3 ? c : 0;
                rgb(c, y, x) = img.samples[base + src] / peak;
            }
        }
    }
    return rgb;
}

void write_rgb(const FeatureMap& rgb, const fs::path& path) {
    require(rgb.channels() == 3, "write_rgb: expected 3 channels");
    std::vector<std::uint16_t> samples(rgb.plane() * 3);
    for (int y = 0; y < rgb.height(); ++y) {
        for (int x = 0; x < rgb.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(rgb(c, y, x), 0.0, 1.0);
                samples[(static_cast<std::size_t>(y) * rgb.width() + x) * 3 + c] =
                    static_cast<std::uint16_t>(std::lround(v * 255.0));
            }
        }
    }
    encode_png(path, rgb.width(), rgb.height(), 8, PNG_COLOR_TYPE_RGB, samples);
}

UncertaintyMap read_uncertainty(const fs::path& path) {
    const PngImage img = decode_png(path);
    if (img.bit_depth != 8 || img.channels != 1) {
        throw IoError(path.string() + ": uncertainty maps must be 8-bit grayscale PNG");
    }
    UncertaintyMap u{Grid2D(img.height, img.width)};
    for (std::size_t i = 0; i < u.labels.size(); ++i) {
        const auto v = img.samples[i];
        if (v != 0 && v != 255) {
            throw IoError(path.string() + ": uncertainty value " + std::to_string(v) +
                          " at pixel " + std::to_string(i) + " is not 0 or 255");
        }
        u.labels[i] = v == 255 ? 1.0 : 0.0;
    }
    return u;
}

void write_uncertainty(const UncertaintyMap& u, const fs::path& path) {
    std::vector<std::uint16_t> samples(u.labels.size());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = u.labels[i] == 1.0 ? 255 : 0;
    encode_png(path, u.labels.width(), u.labels.height(), 8, PNG_COLOR_TYPE_GRAY, samples);
}

Grid2D read_relative_depth(const fs::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".pfm") return read_pfm(path);
    return read_png16(path);
}

// ------------------------------------------------------------------ manifest

fs::path DatasetManifest::resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

DatasetManifest DatasetManifest::parse(const std::string& json_text, const fs::path& base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParameterError(std::string("manifest: ") + e.what());
    }
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        m.version = j.at("version").get<int>();
        require(m.version == kVersion, "manifest: unsupported version " + std::to_string(m.version));
        m.depth_unit = j.value("depth_unit", m.depth_unit);
        m.depth_scale = j.value("depth_scale", m.depth_scale);
        require(m.depth_scale > 0.0, "manifest: depth_scale must be positive");
        auto optional = [](const nlohmann::json& s, const char* key) -> std::optional<std::string> {
            if (s.contains(key) && !s.at(key).is_null()) return s.at(key).get<std::string>();
            return std::nullopt;
        };
        std::set<std::string> ids;
        for (const auto& s : j.at("samples")) {
            ManifestSample sample;
            sample.id = s.at("id").get<std::string>();
            sample.rgb_path = s.at("rgb_path").get<std::string>();
            sample.gt_path = s.at("gt_path").get<std::string>();
            sample.raw_path = optional(s, "raw_path");
            sample.rel_depth_path = optional(s, "rel_depth_path");
            sample.uncertainty_path = optional(s, "uncertainty_path");
            require(!sample.id.empty(), "manifest: empty sample id");
            require(ids.insert(sample.id).second, "manifest: duplicate sample id '" + sample.id + "'");
            m.samples.push_back(std::move(sample));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("manifest: ") + e.what());
    }
    return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    DatasetManifest m = parse(ss.str(), path.parent_path());
    m.validate();
    return m;
}

void DatasetManifest::validate() const {
    for (const auto& s : samples) {
        auto check = [&](const std::string& p, auto&& decode) {
            const fs::path full = resolve(p);
            if (!fs::exists(full)) {
                throw IoError("manifest sample '" + s.id + "': missing file " + full.string());
            }
            decode(full);
        };
        FeatureMap rgb;
        check(s.rgb_path, [&](const fs::path& p) { rgb = read_rgb(p); });
        auto same_dims = [&](const Grid2D& g, const std::string& what) {
            if (!rgb.same_spatial(g)) {
                throw IoError("manifest sample '" + s.id + "': " + what +
                              " dimensions differ from rgb");
            }
        };
        check(s.gt_path, [&](const fs::path& p) { same_dims(read_depth(p, depth_scale), "gt"); });
        if (s.raw_path) {
            check(*s.raw_path, [&](const fs::path& p) { same_dims(read_depth(p, depth_scale), "raw"); });
        }
        if (s.rel_depth_path) {
            check(*s.rel_depth_path,
                  [&](const fs::path& p) { same_dims(read_relative_depth(p), "relative depth"); });
        }
        if (s.uncertainty_path) {
            check(*s.uncertainty_path,
                  [&](const fs::path& p) { same_dims(read_uncertainty(p).labels, "uncertainty"); });
        }
    }
}

std::string DatasetManifest::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["depth_unit"] = depth_unit;
    j["depth_scale"] = depth_scale;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json e;
        e["id"] = s.id;
        e["rgb_path"] = s.rgb_path;
        e["gt_path"] = s.gt_path;
        if (s.raw_path) e["raw_path"] = *s.raw_path;
        if (s.rel_depth_path) e["rel_depth_path"] = *s.rel_depth_path;
        if (s.uncertainty_path) e["uncertainty_path"] = *s.uncertainty_path;
        j["samples"].push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

void DatasetManifest::save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << to_json();
    if (!out) throw IoError("write failed for " + path.string());
}

// ----------------------------------------------------------------- OutputSet

fs::path OutputSet::stage(const fs::path& final_path) {
    fs::path temp = final_path.parent_path() /
                    (final_path.stem().string() + ".partial" + final_path.extension().string());
    staged_.emplace_back(temp, final_path);
    return temp;
}

void OutputSet::commit() {
    for (const auto& [temp, final_path] : staged_) fs::rename(temp, final_path);
    committed_ = true;
}

OutputSet::~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& [temp, final_path] : staged_) fs::remove(temp, ec);
}

}  // namespace realdepth::io
