#pragma once

#include "cvatlas/core/rng.hpp"
#include "cvatlas/data/augment.hpp"
#include "cvatlas/data/dataset.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

enum class TexturePattern { Stripes, Dots, Checker, Noise };

/// Procedural texture family. Each generated patch draws a fresh phase,
/// blob layout and colour jitter from the seeded stream.
struct TextureClass {
    std::string code;
    TexturePattern pattern = TexturePattern::Stripes;
    Channel3 background{0.9, 0.8, 0.85};
    Channel3 foreground{0.5, 0.2, 0.5};
    double frequency = 4.0;     // cycles per image width (stripes/checker), blobs per side (dots)
    double orientation = 0.0;   // radians
    double blob_radius = 0.08;  // fraction of width (dots)
    double pixel_noise = 0.03;
    double color_jitter = 0.03;
};

inline ImageTensor render_texture(const TextureClass& tc, std::size_t size, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double n = static_cast<double>(size);
    std::vector<double> t(size * size, 0.0);

    switch (tc.pattern) {
        case TexturePattern::Stripes: {
            const double phase = 2 * std::numbers::pi * unit(rng);
            const double c = std::cos(tc.orientation), s = std::sin(tc.orientation);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double u = (static_cast<double>(x) * c + static_cast<double>(y) * s) / n;
                    t[y * size + x] = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * tc.frequency * u + phase);
                }
            break;
        }
        case TexturePattern::Checker: {
            const double px = 2 * std::numbers::pi * unit(rng), py = 2 * std::numbers::pi * unit(rng);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double v = std::sin(2 * std::numbers::pi * tc.frequency * static_cast<double>(x) / n + px) *
                                     std::sin(2 * std::numbers::pi * tc.frequency * static_cast<double>(y) / n + py);
                    t[y * size + x] = 0.5 + 0.5 * std::tanh(3.0 * v);
                }
            break;
        }
        case TexturePattern::Dots: {
            const auto count = static_cast<int>(std::round(tc.frequency * tc.frequency));
            const double r = tc.blob_radius * n;
            for (int b = 0; b < count; ++b) {
                const double cx = unit(rng) * n, cy = unit(rng) * n;
                for (std::size_t y = 0; y < size; ++y)
                    for (std::size_t x = 0; x < size; ++x) {
                        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                        t[y * size + x] += std::exp(-(dx * dx + dy * dy) / (2 * r * r));
                    }
            }
            for (auto& v : t) v = std::min(v, 1.0);
            break;
        }
        case TexturePattern::Noise: {
            std::vector<double> raw(size * size);
            for (auto& v : raw) v = unit(rng);
            const int k = std::max(1, static_cast<int>(std::round(n / (2.0 * std::max(tc.frequency, 1.0)))));
            const auto ss = static_cast<int>(size);
            for (int y = 0; y < ss; ++y)
                for (int x = 0; x < ss; ++x) {
                    double acc = 0.0;
                    int cnt = 0;
                    for (int dy = -k; dy <= k; ++dy)
                        for (int dx = -k; dx <= k; ++dx) {
                            const int yy = (y + dy + ss) % ss, xx = (x + dx + ss) % ss;
                            acc += raw[static_cast<std::size_t>(yy * ss + xx)];
                            ++cnt;
                        }
                    t[static_cast<std::size_t>(y * ss + x)] = acc / cnt;
                }
            double lo = 1.0, hi = 0.0;
            for (double v : t) lo = std::min(lo, v), hi = std::max(hi, v);
            for (auto& v : t) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
            break;
        }
    }

    Channel3 bg = tc.background, fg = tc.foreground;
    for (std::size_t c = 0; c < 3; ++c) {
        bg[c] += tc.color_jitter * gauss(rng);
        fg[c] += tc.color_jitter * gauss(rng);
    }
    ImageTensor img(size, size, 3);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double w = t[y * size + x];
            for (std::size_t c = 0; c < 3; ++c)
                img(y, x, c) = (1.0 - w) * bg[c] + w * fg[c] + tc.pixel_noise * gauss(rng);
        }
    img.clamp_unit();
    return img;
}

struct SyntheticConfig {
    std::size_t per_class = 40;
    std::size_t image_size = 32;
    std::size_t groups_per_class = 8;  // synthetic "slides"
    std::uint64_t seed = 7;
    /// Share of patches rendered with another class's colours: a nuisance
    /// factor that colour-level features pick up and pattern-level ones ignore.
    double palette_swap = 0.0;
};

/// Seeded, procedurally generated labelled dataset. Patch ids are
/// `<code>/<group>__<index>.png`, group ids `<code>-s<k>`.
inline Dataset make_texture_dataset(const std::vector<TextureClass>& classes, const SyntheticConfig& cfg) {
    if (classes.empty()) throw std::invalid_argument("make_texture_dataset: no classes");
    std::vector<std::string> codes;
    for (const auto& c : classes) codes.push_back(c.code);
    Dataset ds{ClassMap::from_codes(codes), {}};
    for (std::size_t c = 0; c < classes.size(); ++c) {
        Rng rng(derive_seed(cfg.seed, c));
        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            const auto group = classes[c].code + "-s" + std::to_string(i % std::max<std::size_t>(cfg.groups_per_class, 1));
            const auto name = group + "__" + std::to_string(i);
            TextureClass tc = classes[c];
            if (cfg.palette_swap > 0.0 && classes.size() > 1 &&
                std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.palette_swap) {
                const auto& donor = classes[(c + 1 + rng() % (classes.size() - 1)) % classes.size()];
                tc.background = donor.background;
                tc.foreground = donor.foreground;
            }
            ds.patches.push_back({classes[c].code + "/" + name + ".png", render_texture(tc, cfg.image_size, rng),
                                  static_cast<int>(c), group});
        }
    }
    return ds;
}

namespace textures {

/// Five visually distinct families.
inline std::vector<TextureClass> five_class() {
    return {
        {"STRP", TexturePattern::Stripes, {0.92, 0.80, 0.86}, {0.55, 0.20, 0.50}, 3.0, 0.0},
        {"DOTS", TexturePattern::Dots, {0.95, 0.90, 0.92}, {0.30, 0.15, 0.55}, 3.0, 0.0, 0.10},
        {"CHKR", TexturePattern::Checker, {0.85, 0.60, 0.70}, {0.60, 0.35, 0.60}, 4.0},
        {"SMTH", TexturePattern::Noise, {0.97, 0.96, 0.97}, {0.80, 0.65, 0.75}, 1.5},
        {"DIAG", TexturePattern::Stripes, {0.75, 0.45, 0.55}, {0.95, 0.75, 0.85}, 6.0, std::numbers::pi / 4},
    };
}

/// Three well-separated families.
inline std::vector<TextureClass> coarse3() {
    return {
        {"STRP", TexturePattern::Stripes, {0.92, 0.80, 0.86}, {0.55, 0.20, 0.50}, 3.0, 0.0},
        {"DOTS", TexturePattern::Dots, {0.95, 0.90, 0.92}, {0.30, 0.15, 0.55}, 3.0, 0.0, 0.10},
        {"SMTH", TexturePattern::Noise, {0.97, 0.96, 0.97}, {0.80, 0.65, 0.75}, 1.5},
    };
}

/// The coarse families, each split into two barely distinguishable variants.
inline std::vector<TextureClass> fine6() {
    return {
        {"STRP-a", TexturePattern::Stripes, {0.92, 0.80, 0.86}, {0.55, 0.20, 0.50}, 3.0, 0.0},
        {"STRP-b", TexturePattern::Stripes, {0.92, 0.80, 0.86}, {0.55, 0.20, 0.50}, 3.3, 0.08},
        {"DOTS-a", TexturePattern::Dots, {0.95, 0.90, 0.92}, {0.30, 0.15, 0.55}, 3.0, 0.0, 0.10},
        {"DOTS-b", TexturePattern::Dots, {0.95, 0.90, 0.92}, {0.30, 0.15, 0.55}, 3.2, 0.0, 0.095},
        {"SMTH-a", TexturePattern::Noise, {0.97, 0.96, 0.97}, {0.80, 0.65, 0.75}, 1.5},
        {"SMTH-b", TexturePattern::Noise, {0.96, 0.95, 0.97}, {0.79, 0.65, 0.76}, 1.7},
    };
}

}  // namespace textures
}  // namespace cvatlas
