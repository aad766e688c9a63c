#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <string_view>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/rng.hpp"
#include "nsdesk/signforge/signforge.hpp"

namespace nsdesk::sign {

namespace {

using Glyph = std::array<std::string_view, 7>;

// 5x7 bitmaps, top row first. Symbols that have no ASCII form use
// lower-case keys that are never shown as text.
const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> f = {
        {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
        {'3', {"#### ", "    #", "    #", " ### ", "    #", "    #", "#### "}},
        {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
        {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
        {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
        {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
        {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
        {'!', {"  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "     ", "  #  "}},
        {'b', {"     ", "     ", "#####", "#####", "#####", "     ", "     "}},
        {'p', {"  #  ", " ### ", "# # #", "  #  ", " # # ", " # # ", "#   #"}},
        {'x', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
        {'u', {"  #  ", " ### ", "# # #", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'l', {"     ", "  #  ", " #   ", "#####", " #   ", "  #  ", "     "}},
        {'r', {"     ", "  #  ", "   # ", "#####", "   # ", "  #  ", "     "}},
    };
    return f;
}

// Characters laid out left to right for each icon name.
const std::map<std::string, std::string, std::less<>>& icon_text() {
    static const std::map<std::string, std::string, std::less<>> m = {
        {"blank", ""},        {"stop_text", "STOP"},  {"num_30", "30"},        {"num_50", "50"},
        {"num_70", "70"},     {"bar", "b"},           {"exclamation", "!"},    {"person", "p"},
        {"cross", "x"},       {"arrow_up", "u"},      {"arrow_left", "l"},     {"arrow_right", "r"},
    };
    return m;
}

struct ShapeGeom {
    double inner_scale;     // fill region relative to the outline
    double glyph_half_h;    // glyph box, in outline units
    double glyph_half_w_max;
};

const std::map<std::string, ShapeGeom, std::less<>>& shapes() {
    static const std::map<std::string, ShapeGeom, std::less<>> m = {
        {"circle", {0.75, 0.42, 0.55}},
        {"octagon", {0.75, 0.42, 0.55}},
        {"diamond", {0.70, 0.36, 0.40}},
        {"triangle_up", {0.60, 0.24, 0.30}},
        {"triangle_down", {0.60, 0.24, 0.30}},
    };
    return m;
}

// Outline of unit circumradius centred on the origin, y pointing up.
bool inside_outline(std::string_view shape, double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y);
    if (shape == "circle") {
        return x * x + y * y <= 1.0;
    }
    if (shape == "octagon") {
        const double a = std::cos(std::numbers::pi / 8.0);
        return ax <= a && ay <= a && (ax + ay) <= a * std::numbers::sqrt2;
    }
    if (shape == "diamond") {
        return ax + ay <= 1.0;
    }
    if (shape == "triangle_down") {
        y = -y;
    }
    return y >= -0.5 && y <= 1.0 - std::numbers::sqrt3 * ax;
}

double luminance(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

struct GlyphLayout {
    std::string text;
    double half_w = 0.0, half_h = 0.0;
    std::size_t cols = 0;
};

GlyphLayout layout_icon(const std::string& icon, const ShapeGeom& geom) {
    GlyphLayout g;
    g.text = icon_text().find(icon)->second;
    if (g.text.empty()) {
        return g;
    }
    g.cols = g.text.size() * 6 - 1;
    g.half_h = geom.glyph_half_h;
    g.half_w = g.half_h * static_cast<double>(g.cols) / 7.0;
    if (g.half_w > geom.glyph_half_w_max) {
        g.half_h *= geom.glyph_half_w_max / g.half_w;
        g.half_w = geom.glyph_half_w_max;
    }
    return g;
}

bool glyph_on(const GlyphLayout& g, double x, double y) {
    if (g.text.empty() || std::abs(x) >= g.half_w || std::abs(y) >= g.half_h) {
        return false;
    }
    const auto col = static_cast<std::size_t>((x + g.half_w) / (2.0 * g.half_w) * static_cast<double>(g.cols));
    const auto row = static_cast<std::size_t>((g.half_h - y) / (2.0 * g.half_h) * 7.0);
    const std::size_t ch = col / 6, cx = col % 6;
    if (cx == 5 || ch >= g.text.size() || row >= 7) {
        return false;
    }
    return font().at(g.text[ch])[row][cx] == '#';
}

}  // namespace

void Jitter::validate() const {
    if (!(rotation_deg >= 0.0) || !(translation_px >= 0.0) || !(noise >= 0.0)) {
        throw ConfigError("jitter: ranges must be nonnegative");
    }
    if (!(brightness_lo > 0.0) || !(brightness_hi >= brightness_lo)) {
        throw ConfigError("jitter: brightness range must satisfy 0 < lo <= hi");
    }
}

void SignSpec::validate() const {
    if (canvas < 16) {
        throw ConfigError("sign: canvas must be at least 16 px, got " + std::to_string(canvas));
    }
    jitter.validate();
    if (!shapes().contains(shape)) {
        throw ConfigError("sign: unknown shape '" + shape + "'");
    }
    if (!icon_text().contains(icon)) {
        throw ConfigError("sign: unknown icon '" + icon + "'");
    }
    palette_color(fill_color);
    palette_color(border_color);
}

Rgb palette_color(const std::string& name) {
    static const std::map<std::string, Rgb, std::less<>> p = {
        {"white", {1.0, 1.0, 1.0}},     {"red", {0.85, 0.1, 0.1}},   {"blue", {0.1, 0.25, 0.8}},
        {"yellow", {0.95, 0.85, 0.1}},  {"black", {0.05, 0.05, 0.05}}, {"orange", {0.95, 0.55, 0.1}},
    };
    const auto it = p.find(name);
    if (it == p.end()) {
        throw ConfigError("sign: unknown colour '" + name + "'");
    }
    return it->second;
}

SignSpec spec_for_class(const rules::RuleBase& rb, std::size_t class_id, const Jitter& jitter, std::size_t canvas) {
    const auto& s = rb.schema();
    const auto value = [&](std::string_view attr) {
        const std::size_t j = s.index_of(attr);
        return s.vocab[j][rb.expected_value(class_id, j)];
    };
    SignSpec spec{value("shape"), value("fill_color"), value("border_color"), value("icon"), canvas, jitter};
    spec.validate();
    return spec;
}

std::uint64_t sample_seed(std::uint64_t global_seed, std::size_t class_id, std::size_t index, std::string_view split) {
    std::uint64_t tag = 0xcbf29ce484222325ULL;
    for (char c : split) {
        tag = (tag ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    }
    return mix_seed({global_seed, tag, class_id, index});
}

Tensor<double> render_sign(const SignSpec& spec, std::uint64_t seed) {
    spec.validate();
    const ShapeGeom& geom = shapes().find(spec.shape)->second;
    const GlyphLayout glyph = layout_icon(spec.icon, geom);
    const Rgb fill = palette_color(spec.fill_color);
    const Rgb border = palette_color(spec.border_color);
    const Rgb ink = luminance(fill) < 0.5 ? palette_color("white") : palette_color("black");

    Rng rng(seed);
    const Jitter& j = spec.jitter;
    const double theta = rng.uniform(-j.rotation_deg, j.rotation_deg) * std::numbers::pi / 180.0;
    const double tx = rng.uniform(-j.translation_px, j.translation_px);
    const double ty = rng.uniform(-j.translation_px, j.translation_px);
    const double bright = rng.uniform(j.brightness_lo, j.brightness_hi);

    const std::size_t n = spec.canvas;
    const std::size_t plane = n * n;
    Tensor<double> img(Shape{3, n, n});
    double* out = img.ptr();
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            out[c * plane + i] = kBackground[c] + j.noise * rng.uniform(-1.0, 1.0);
        }
    }

    const double half = static_cast<double>(n) / 2.0;
    const double radius = 0.42 * static_cast<double>(n);
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double inv_inner = 1.0 / geom.inner_scale;
    constexpr double kSub[2] = {0.25, 0.75};
    for (std::size_t py = 0; py < n; ++py) {
        for (std::size_t px = 0; px < n; ++px) {
            // Subsample hits per colour: border, fill, ink.
            int hits[3] = {0, 0, 0};
            for (double oy : kSub) {
                for (double ox : kSub) {
                    const double dx = static_cast<double>(px) + ox - half - tx;
                    const double dy = static_cast<double>(py) + oy - half - ty;
                    const double x = (cs * dx + sn * dy) / radius;
                    const double y = -(-sn * dx + cs * dy) / radius;
                    if (!inside_outline(spec.shape, x, y)) {
                        continue;
                    }
                    if (!inside_outline(spec.shape, x * inv_inner, y * inv_inner)) {
                        ++hits[0];
                    } else {
                        ++hits[glyph_on(glyph, x, y) ? 2 : 1];
                    }
                }
            }
            const int covered = hits[0] + hits[1] + hits[2];
            if (covered == 0) {
                continue;
            }
            const Rgb* colors[3] = {&border, &fill, &ink};
            for (std::size_t c = 0; c < 3; ++c) {
                double& v = out[c * plane + py * n + px];
                double s = (4 - covered) / 4.0 * v;
                for (int k = 0; k < 3; ++k) {
                    s += hits[k] / 4.0 * (*colors[k])[c];
                }
                v = s;
            }
        }
    }
    for (double& v : img.data()) {
        v = std::clamp(v * bright, 0.0, 1.0);
    }
    return img;
}

}  // namespace nsdesk::sign
