#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"
#include "nsdesk/signforge/signforge.hpp"

namespace nsdesk::sign {

namespace fs = std::filesystem;

template <typename T>
Image8 quantize(const Tensor<T>& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) {
        throw ShapeError("quantize: expected [3,H,W], got " + shape_str(chw.shape()));
    }
    Image8 img;
    img.height = chw.dim(1);
    img.width = chw.dim(2);
    const std::size_t plane = img.height * img.width;
    img.rgb.resize(plane * 3);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = std::clamp(static_cast<double>(chw[c * plane + i]), 0.0, 1.0);
            img.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return img;
}

template Image8 quantize(const Tensor<float>&);
template Image8 quantize(const Tensor<double>&);

void write_ppm(const fs::path& path, const Image8& img) {
    if (img.rgb.size() != img.width * img.height * 3 || img.rgb.empty()) {
        throw ShapeError("write_ppm: pixel buffer does not match " + std::to_string(img.width) + "x" +
                         std::to_string(img.height));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

namespace {

// Next header token of a PPM, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        } else if (std::isspace(c)) {
            if (!tok.empty()) {
                return tok;
            }
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

}  // namespace

Image8 read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open image " + path.string());
    }
    const auto bad = [&](const std::string& why) { return ParseError(path.string() + ": malformed PPM: " + why); };
    if (ppm_token(in) != "P6") {
        throw bad("expected magic P6");
    }
    long long dims[3];
    for (long long& d : dims) {
        const std::string tok = ppm_token(in);
        try {
            d = text::parse_int(tok, "PPM header");
        } catch (const ParseError&) {
            throw bad("bad header field '" + tok + "'");
        }
    }
    if (dims[0] <= 0 || dims[1] <= 0) {
        throw bad("nonpositive size");
    }
    if (dims[2] != 255) {
        throw bad("maxval must be 255, got " + std::to_string(dims[2]));
    }
    Image8 img;
    img.width = static_cast<std::size_t>(dims[0]);
    img.height = static_cast<std::size_t>(dims[1]);
    img.rgb.resize(img.width * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw bad("truncated pixel data");
    }
    return img;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "path,class_id\n";
    for (const auto& e : manifest.entries) {
        out << e.path << "," << e.class_id << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    DatasetManifest m;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view t = text::trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (!header) {
            if (t != "path,class_id") {
                throw ParseError(where + "expected header 'path,class_id'");
            }
            header = true;
            continue;
        }
        const auto f = text::split(t, ',');
        if (f.size() != 2 || text::trim(f[0]).empty()) {
            throw ParseError(where + "expected 'path,class_id'");
        }
        const long long id = text::parse_int(text::trim(f[1]), where + "class_id");
        if (id < 0) {
            throw ParseError(where + "negative class id");
        }
        ManifestEntry e{std::string(text::trim(f[0])), static_cast<std::size_t>(id)};
        if (!seen.insert(e.path).second) {
            throw ParseError(where + "duplicate path " + e.path);
        }
        m.entries.push_back(std::move(e));
    }
    if (!header) {
        throw ParseError(path.string() + ": missing header 'path,class_id'");
    }
    return m;
}

DatasetManifest generate_dataset(const rules::RuleBase& rb, const std::vector<std::size_t>& per_class,
                                 const Jitter& jitter, std::uint64_t seed, const std::string& split,
                                 const fs::path& out_dir, std::size_t canvas) {
    if (per_class.size() != rb.num_classes()) {
        throw ConfigError("generate_dataset: " + std::to_string(per_class.size()) + " per-class counts for " +
                          std::to_string(rb.num_classes()) + " classes");
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] == 0) {
            throw ConfigError("generate_dataset: class " + std::to_string(c) + " has a sample count of 0");
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir / "img", ec);
    if (ec) {
        throw IoError("cannot create " + (out_dir / "img").string() + ": " + ec.message());
    }
    DatasetManifest m;
    m.split = split;
    m.seed = seed;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const SignSpec spec = spec_for_class(rb, c, jitter, canvas);
        for (std::size_t i = 0; i < per_class[c]; ++i) {
            char name[48];
            std::snprintf(name, sizeof name, "img/c%02zu_%05zu.ppm", c, i);
            write_ppm(out_dir / name, quantize(render_sign(spec, sample_seed(seed, c, i, split))));
            m.entries.push_back({name, c});
        }
    }
    write_manifest(out_dir / "manifest.csv", m);
    return m;
}

void Dataset::add(const Image8& img, std::size_t label, std::string path) {
    if (labels_.empty() && height_ == 0) {
        height_ = img.height;
        width_ = img.width;
    }
    if (img.height != height_ || img.width != width_ || channels_ != 3) {
        throw ShapeError("dataset: image " + path + " is " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + ", expected " + std::to_string(width_) + "x" +
                         std::to_string(height_));
    }
    const std::size_t plane = height_ * width_;
    const std::size_t base = pixels_.size();
    pixels_.resize(base + plane * 3);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            pixels_[base + c * plane + i] = img.rgb[i * 3 + c];
        }
    }
    labels_.push_back(label);
    paths_.push_back(std::move(path));
}

template <typename T>
Tensor<T> Dataset::images(std::span<const std::size_t> indices) const {
    const std::size_t per = channels_ * height_ * width_;
    auto out = Tensor<T>::uninitialized(Shape{indices.size(), channels_, height_, width_});
    T* dst = out.ptr();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= size()) {
            throw ShapeError("dataset: index " + std::to_string(indices[k]) + " out of range");
        }
        const std::uint8_t* src = pixels_.data() + indices[k] * per;
        for (std::size_t i = 0; i < per; ++i) {
            dst[k * per + i] = static_cast<T>(static_cast<double>(src[i]) / 255.0);
        }
    }
    return out;
}

template <typename T>
Tensor<T> Dataset::image(std::size_t i) const {
    const std::size_t idx[1] = {i};
    return images<T>(idx).reshaped(Shape{channels_, height_, width_});
}

template Tensor<float> Dataset::images(std::span<const std::size_t>) const;
template Tensor<double> Dataset::images(std::span<const std::size_t>) const;
template Tensor<float> Dataset::image(std::size_t) const;
template Tensor<double> Dataset::image(std::size_t) const;

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset d(channels_, height_, width_);
    const std::size_t per = channels_ * height_ * width_;
    for (std::size_t i : indices) {
        if (i >= size()) {
            throw ShapeError("dataset: index " + std::to_string(i) + " out of range");
        }
        d.pixels_.insert(d.pixels_.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(i * per),
                         pixels_.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        d.labels_.push_back(labels_[i]);
        d.paths_.push_back(paths_[i]);
    }
    return d;
}

Dataset load_dataset(const fs::path& manifest_path, std::size_t num_classes) {
    const DatasetManifest m = read_manifest(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    Dataset d;
    for (const auto& e : m.entries) {
        if (num_classes != 0 && e.class_id >= num_classes) {
            throw ConfigError(manifest_path.string() + ": label " + std::to_string(e.class_id) + " of " + e.path +
                              " is out of range for " + std::to_string(num_classes) + " classes");
        }
        const fs::path p = dir / e.path;
        if (!fs::exists(p)) {
            throw IoError("missing image " + p.string());
        }
        d.add(read_ppm(p), e.class_id, e.path);
    }
    return d;
}

}  // namespace nsdesk::sign
