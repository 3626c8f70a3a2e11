#pragma once

#include "cvatlas/core/tensor.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// Decodes a raster file into a linear RGB tensor in [0,1]. 8-bit sources are
/// divided by 255, 16-bit sources by 65535. Returns nullopt if unreadable.
inline std::optional<ImageTensor> read_image(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
    if (raw.empty()) return std::nullopt;
    // Divide rather than multiply by the reciprocal: level/255 must match quantized().
    double levels = 1.0;
    switch (raw.depth()) {
        case CV_8U: levels = 255.0; break;
        case CV_16U: levels = 65535.0; break;
        case CV_32F:
        case CV_64F: break;
        default: return std::nullopt;
    }
    cv::Mat f64;
    raw.convertTo(f64, CV_64FC3);
    ImageTensor img(static_cast<std::size_t>(f64.rows), static_cast<std::size_t>(f64.cols), 3);
    for (int y = 0; y < f64.rows; ++y) {
        const auto* row = f64.ptr<cv::Vec3d>(y);
        for (int x = 0; x < f64.cols; ++x)
            for (int c = 0; c < 3; ++c)
                img(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c)) =
                    std::clamp(row[x][2 - c] / levels, 0.0, 1.0);  // BGR -> RGB
    }
    return img;
}

inline std::uint8_t quantize_u8(Scalar v) noexcept {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, Scalar{0}, Scalar{1}) * 255.0));
}

/// Rounds every pixel to the nearest 8-bit level, the precision images have
/// after a write/read cycle.
inline ImageTensor quantized(const ImageTensor& img) {
    ImageTensor out = img;
    for (auto& v : out.data()) v = quantize_u8(v) / 255.0;
    return out;
}

inline cv::Mat to_bgr8(const ImageTensor& img) {
    if (img.channels() != 3) throw std::invalid_argument("to_bgr8: expected 3 channels");
    cv::Mat mat(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
    for (std::size_t y = 0; y < img.height(); ++y) {
        auto* row = mat.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < img.width(); ++x) {
            row[x][0] = quantize_u8(img(y, x, 2));
            row[x][1] = quantize_u8(img(y, x, 1));
            row[x][2] = quantize_u8(img(y, x, 0));
        }
    }
    return mat;
}

/// Encodes as 8-bit PNG. Output bytes are a pure function of the quantized pixels.
inline std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", to_bgr8(img), buf, {cv::IMWRITE_PNG_COMPRESSION, 6}))
        throw std::runtime_error("encode_png: encoder failed");
    return buf;
}

inline void write_png(const std::filesystem::path& path, const ImageTensor& img) {
    if (!cv::imwrite(path.string(), to_bgr8(img), {cv::IMWRITE_PNG_COMPRESSION, 6}))
        throw std::runtime_error("write_png: cannot write " + path.string());
}

}  // namespace cvatlas
