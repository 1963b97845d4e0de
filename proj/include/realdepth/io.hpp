#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "realdepth/tensor.hpp"
#include "realdepth/uncertainty.hpp"

namespace realdepth::io {

namespace fs = std::filesystem;

/// 16-bit grayscale PNG as raw integer values (0..65535).
Grid2D read_png16(const fs::path& path);
void write_png16(const Grid2D& values, const fs::path& path);

/// Single-channel PFM ("Pf"). Negative scale means little-endian payload;
/// rows are stored bottom-to-top. Writes little-endian with scale -1.
Grid2D read_pfm(const fs::path& path);
void write_pfm(const Grid2D& values, const fs::path& path);

/// Depth by extension: .png holds integer counts times `scale`, .pfm holds
/// float depth directly. 0 marks invalid pixels in both. PNG writes round
/// depth / scale to the nearest count and reject values outside 16 bits.
Grid2D read_depth(const fs::path& path, double scale = 1.0);
void write_depth(const Grid2D& depth, const fs::path& path, double scale = 1.0);

/// 8- or 16-bit RGB(A)/gray PNG mapped to 3 channels in [0, 1].
FeatureMap read_rgb(const fs::path& path);
void write_rgb(const FeatureMap& rgb, const fs::path& path);

/// Trust labels persisted as 8-bit PNG {0, 255}.
UncertaintyMap read_uncertainty(const fs::path& path);
void write_uncertainty(const UncertaintyMap& u, const fs::path& path);

/// Relative depth channel: PFM or 16-bit PNG.
Grid2D read_relative_depth(const fs::path& path);

struct ManifestSample {
    std::string id;
    std::string rgb_path;
    std::string gt_path;
    std::optional<std::string> raw_path;
    std::optional<std::string> rel_depth_path;
    std::optional<std::string> uncertainty_path;
};

/// JSON manifest. Relative paths resolve against the manifest's directory.
struct DatasetManifest {
    static constexpr int kVersion = 1;

    int version = kVersion;
    std::vector<ManifestSample> samples;
    std::string depth_unit = "mm";
    double depth_scale = 1.0;  // stored integer value x scale = physical depth
    fs::path base_dir;

    fs::path resolve(const std::string& p) const;

    /// Parses and checks ids are unique; does not touch referenced files.
    static DatasetManifest parse(const std::string& json_text, const fs::path& base_dir);
    /// parse() + validate().
    static DatasetManifest load(const fs::path& path);
    /// Every referenced file exists and decodes; throws on the first failure.
    void validate() const;
    std::string to_json() const;
    void save(const fs::path& path) const;
};

/// Files written through an OutputSet land under a temporary name and are
/// renamed into place on commit(). Destroying an uncommitted set removes
/// everything it wrote.
class OutputSet {
public:
    OutputSet() = default;
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;
    ~OutputSet();

    /// Temporary path to write `final_path`'s content to.
    fs::path stage(const fs::path& final_path);
    void commit();

private:
    std::vector<std::pair<fs::path, fs::path>> staged_;
    bool committed_ = false;
};

}  // namespace realdepth::io
