#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

using Scalar = double;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Dense H x W x C image, channel-interleaved (HWC) row-major storage.
///
/// Display-space images hold values in [0,1]; after `normalize` the same
/// container carries unbounded model-input values.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(std::size_t height, std::size_t width, std::size_t channels = 3, Scalar fill = 0.0)
        : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}

    [[nodiscard]] std::size_t height() const noexcept { return height_; }
    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    Scalar& operator()(std::size_t y, std::size_t x, std::size_t c) noexcept {
        return data_[(y * width_ + x) * channels_ + c];
    }
    Scalar operator()(std::size_t y, std::size_t x, std::size_t c) const noexcept {
        return data_[(y * width_ + x) * channels_ + c];
    }

    [[nodiscard]] std::vector<Scalar>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<Scalar>& data() const noexcept { return data_; }

    [[nodiscard]] bool same_shape(const ImageTensor& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    [[nodiscard]] bool in_unit_range() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return v >= 0.0 && v <= 1.0; });
    }

    void clamp_unit() noexcept {
        for (auto& v : data_) v = std::clamp(v, Scalar{0}, Scalar{1});
    }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<Scalar> data_;
};

inline Vector to_vector(const std::vector<Scalar>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<Scalar> to_std(const Vector& v) {
    return {v.data(), v.data() + v.size()};
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace cvatlas
