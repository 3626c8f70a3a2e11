#pragma once

#include "cvatlas/core/rng.hpp"
#include "cvatlas/core/tensor.hpp"

#include <array>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace cvatlas {

using Channel3 = std::array<Scalar, 3>;

inline constexpr Channel3 kImageNetMean{0.485, 0.456, 0.406};
inline constexpr Channel3 kImageNetStd{0.229, 0.224, 0.225};

/// Per-channel standardisation: out[c] = (in[c] - mean[c]) / std[c].
inline ImageTensor normalize(const ImageTensor& img, const Channel3& mean = kImageNetMean,
                             const Channel3& std = kImageNetStd) {
    for (double s : std)
        if (!(s > 0.0)) throw std::invalid_argument("normalize: std components must be > 0");
    if (img.channels() != 3) throw std::invalid_argument("normalize: expected 3 channels");
    ImageTensor out = img;
    auto& d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (d[i] - mean[i % 3]) / std[i % 3];
    return out;
}

inline ImageTensor denormalize(const ImageTensor& img, const Channel3& mean = kImageNetMean,
                               const Channel3& std = kImageNetStd) {
    for (double s : std)
        if (!(s > 0.0)) throw std::invalid_argument("denormalize: std components must be > 0");
    ImageTensor out = img;
    auto& d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = d[i] * std[i % 3] + mean[i % 3];
    return out;
}

struct AugmentConfig {
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    bool rotate = true;  // uniform over {0, 90, 180, 270} degrees
    double brightness = 0.1;  // factor drawn from [1 - b, 1 + b]
    double contrast = 0.1;
    double saturation = 0.1;
    std::optional<std::size_t> crop;  // square random crop

    static AugmentConfig disabled() { return {0.0, 0.0, false, 0.0, 0.0, 0.0, std::nullopt}; }
};

inline ImageTensor flip_horizontal(const ImageTensor& img) {
    ImageTensor out(img.height(), img.width(), img.channels());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < img.channels(); ++c) out(y, x, c) = img(y, img.width() - 1 - x, c);
    return out;
}

inline ImageTensor flip_vertical(const ImageTensor& img) {
    ImageTensor out(img.height(), img.width(), img.channels());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < img.channels(); ++c) out(y, x, c) = img(img.height() - 1 - y, x, c);
    return out;
}

/// Counter-clockwise rotation by quarter_turns * 90 degrees.
inline ImageTensor rotate90(const ImageTensor& img, int quarter_turns) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    ImageTensor cur = img;
    for (int t = 0; t < quarter_turns; ++t) {
        ImageTensor next(cur.width(), cur.height(), cur.channels());
        for (std::size_t y = 0; y < next.height(); ++y)
            for (std::size_t x = 0; x < next.width(); ++x)
                for (std::size_t c = 0; c < cur.channels(); ++c) next(y, x, c) = cur(x, cur.width() - 1 - y, c);
        cur = std::move(next);
    }
    return cur;
}

inline ImageTensor adjust_brightness(const ImageTensor& img, double factor) {
    ImageTensor out = img;
    for (auto& v : out.data()) v *= factor;
    out.clamp_unit();
    return out;
}

namespace detail {
inline double luma(const ImageTensor& img, std::size_t y, std::size_t x) {
    return 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
}
}  // namespace detail

/// Blends towards the mean grey level of the whole image.
inline ImageTensor adjust_contrast(const ImageTensor& img, double factor) {
    double mean = 0.0;
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x) mean += detail::luma(img, y, x);
    mean /= static_cast<double>(img.height() * img.width());
    ImageTensor out = img;
    for (auto& v : out.data()) v = factor * v + (1.0 - factor) * mean;
    out.clamp_unit();
    return out;
}

/// Blends each pixel towards its own grey level.
inline ImageTensor adjust_saturation(const ImageTensor& img, double factor) {
    ImageTensor out = img;
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x) {
            const double g = detail::luma(img, y, x);
            for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = factor * img(y, x, c) + (1.0 - factor) * g;
        }
    out.clamp_unit();
    return out;
}

inline ImageTensor crop(const ImageTensor& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    if (top + h > img.height() || left + w > img.width()) throw std::invalid_argument("crop: window exceeds image");
    ImageTensor out(h, w, img.channels());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < img.channels(); ++c) out(y, x, c) = img(top + y, left + x, c);
    return out;
}

/// Random crop, flips, quarter-turn rotation and colour jitter, in that order.
inline ImageTensor augment(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng) {
    ImageTensor out = img;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (cfg.crop) {
        const auto s = *cfg.crop;
        if (s > img.height() || s > img.width())
            throw std::invalid_argument("augment: crop target " + std::to_string(s) + " larger than input");
        std::uniform_int_distribution<std::size_t> top(0, img.height() - s), left(0, img.width() - s);
        const auto t = top(rng);
        const auto l = left(rng);
        out = crop(out, t, l, s, s);
    }
    if (cfg.hflip_prob > 0 && unit(rng) < cfg.hflip_prob) out = flip_horizontal(out);
    if (cfg.vflip_prob > 0 && unit(rng) < cfg.vflip_prob) out = flip_vertical(out);
    if (cfg.rotate) out = rotate90(out, std::uniform_int_distribution<int>(0, 3)(rng));
    auto factor = [&](double range) { return 1.0 + range * (2.0 * unit(rng) - 1.0); };
    if (cfg.brightness > 0) out = adjust_brightness(out, factor(cfg.brightness));
    if (cfg.contrast > 0) out = adjust_contrast(out, factor(cfg.contrast));
    if (cfg.saturation > 0) out = adjust_saturation(out, factor(cfg.saturation));
    out.clamp_unit();
    return out;
}

}  // namespace cvatlas
