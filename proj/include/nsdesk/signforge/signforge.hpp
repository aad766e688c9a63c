#pragma once

// Procedural sign images with exactly known attributes, PPM storage and
// manifest-driven loading.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nsdesk/diffcore/tensor.hpp"
#include "nsdesk/rulebase/rulebase.hpp"

namespace nsdesk::sign {

using Rgb = std::array<double, 3>;

struct Jitter {
    double rotation_deg = 10.0;    // uniform in [-r, r]
    double translation_px = 2.0;   // uniform in [-t, t] per axis
    double brightness_lo = 0.8;    // global scale drawn from [lo, hi]
    double brightness_hi = 1.2;
    double noise = 0.15;           // background noise amplitude

    void validate() const;
    static Jitter none() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
};

// Visual description of one class. Attribute values are vocabulary names.
struct SignSpec {
    std::string shape;
    std::string fill_color;
    std::string border_color;
    std::string icon;
    std::size_t canvas = 32;
    Jitter jitter;

    void validate() const;
};

SignSpec spec_for_class(const rules::RuleBase& rb, std::size_t class_id, const Jitter& jitter,
                        std::size_t canvas = 32);

// Colour of a palette name; throws ConfigError for unknown names.
Rgb palette_color(const std::string& name);
// Grey the sign is drawn over before noise.
inline constexpr Rgb kBackground = {0.45, 0.5, 0.45};

// Deterministic image [3, canvas, canvas] with values in [0, 1].
Tensor<double> render_sign(const SignSpec& spec, std::uint64_t sample_seed);

std::uint64_t sample_seed(std::uint64_t global_seed, std::size_t class_id, std::size_t index,
                          std::string_view split);

// 8-bit P6 images, maxval 255.
struct Image8 {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

// round(v * 255) per channel of a [3, H, W] tensor in [0, 1].
template <typename T>
Image8 quantize(const Tensor<T>& chw);
void write_ppm(const std::filesystem::path& path, const Image8& img);
Image8 read_ppm(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    std::size_t class_id = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string split;
    std::uint64_t seed = 0;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Renders per_class[c] samples of every class into out_dir and writes
// out_dir/manifest.csv. Content depends only on (rules, jitter, seed, split).
DatasetManifest generate_dataset(const rules::RuleBase& rb, const std::vector<std::size_t>& per_class,
                                 const Jitter& jitter, std::uint64_t seed, const std::string& split,
                                 const std::filesystem::path& out_dir, std::size_t canvas = 32);

// Images held as 8-bit CHW planes; converted to [0, 1] scalars per batch.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t channels, std::size_t height, std::size_t width)
        : channels_(channels), height_(height), width_(width) {}

    void add(const Image8& img, std::size_t label, std::string path = {});

    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    std::size_t channels() const { return channels_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t label(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::size_t>& labels() const { return labels_; }
    const std::string& path(std::size_t i) const { return paths_.at(i); }

    template <typename T>
    Tensor<T> images(std::span<const std::size_t> indices) const;
    template <typename T>
    Tensor<T> image(std::size_t i) const;

    Dataset subset(std::span<const std::size_t> indices) const;

private:
    std::size_t channels_ = 3, height_ = 0, width_ = 0;
    std::vector<std::uint8_t> pixels_;
    std::vector<std::size_t> labels_;
    std::vector<std::string> paths_;
};

// Loads every manifest row in order. Labels must be below num_classes when it
// is nonzero.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t num_classes = 0);

}  // namespace nsdesk::sign
