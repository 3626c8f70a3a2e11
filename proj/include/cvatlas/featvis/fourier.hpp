#pragma once

#include "cvatlas/core/rng.hpp"
#include "cvatlas/core/tensor.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <vector>

namespace cvatlas {

using Complex = std::complex<Scalar>;

/// Half-spectrum image parameterisation: per colour channel an H x (W/2+1)
/// array of complex coefficients (channel-major, then row-major).
struct FourierImageParam {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Complex> coeffs;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t half_width() const noexcept { return width / 2 + 1; }
    [[nodiscard]] std::size_t plane() const noexcept { return height * half_width(); }

    static FourierImageParam zeros(std::size_t h, std::size_t w) {
        FourierImageParam p{h, w, {}, 0};
        p.coeffs.assign(3 * p.plane(), Complex{});
        return p;
    }

    /// Gaussian coefficients with standard deviation `sd` in each real component.
    static FourierImageParam random(std::size_t h, std::size_t w, std::uint64_t seed, double sd = 0.01) {
        auto p = zeros(h, w);
        p.seed = seed;
        Rng rng(seed);
        std::normal_distribution<Scalar> g(0.0, sd);
        for (auto& c : p.coeffs) c = {g(rng), g(rng)};
        return p;
    }

    friend bool operator==(const FourierImageParam&, const FourierImageParam&) = default;
};

inline Scalar sigmoid(Scalar x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

struct FftwDeleter {
    void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace detail

/// Renders Fourier coefficients to a display-space image and back-propagates
/// image gradients to the coefficients.
///
/// field = Re(IDFT2(w_k * s_jk * S_jk)) / (H W), k < W/2+1, zero elsewhere,
/// with w_k = 1 on the DC and Nyquist columns and 2 otherwise; for Hermitian
/// spectra this is the usual inverse real FFT. The per-frequency scale
/// s = gain * sqrt(HW) / max(f, 1/max(H,W))^decay gives energy falling off
/// as 1/f; gain 1/4 keeps sign-like adaptive updates from saturating pixels.
/// Pixels are sigmoid(field), so a zero spectrum renders uniformly at 0.5.
class FourierRenderer {
public:
    FourierRenderer(std::size_t height, std::size_t width, double decay = 1.0, double gain = 0.25)
        : h_(height), w_(width), wh_(width / 2 + 1), decay_(decay),
          buf_(fftw_alloc_complex(height * width)) {
        if (h_ == 0 || w_ == 0) throw std::invalid_argument("FourierRenderer: empty image size");
        {
            std::lock_guard lock(detail::fftw_planner_mutex());
            fwd_ = fftw_plan_dft_2d(static_cast<int>(h_), static_cast<int>(w_), buf_.get(), buf_.get(), FFTW_FORWARD,
                                    FFTW_ESTIMATE);
            inv_ = fftw_plan_dft_2d(static_cast<int>(h_), static_cast<int>(w_), buf_.get(), buf_.get(), FFTW_BACKWARD,
                                    FFTW_ESTIMATE);
        }
        scale_.resize(h_ * wh_);
        const double fmin = 1.0 / static_cast<double>(std::max(h_, w_));
        const double amp = gain * std::sqrt(static_cast<double>(h_ * w_));
        for (std::size_t j = 0; j < h_; ++j) {
            const double fy = static_cast<double>(std::min(j, h_ - j)) / static_cast<double>(h_);
            for (std::size_t k = 0; k < wh_; ++k) {
                const double fx = static_cast<double>(k) / static_cast<double>(w_);
                const double f = std::sqrt(fx * fx + fy * fy);
                scale_[j * wh_ + k] = amp / std::pow(std::max(f, fmin), decay_);
            }
        }
    }

    FourierRenderer(const FourierRenderer&) = delete;
    FourierRenderer& operator=(const FourierRenderer&) = delete;

    ~FourierRenderer() {
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
    }

    [[nodiscard]] std::size_t height() const noexcept { return h_; }
    [[nodiscard]] std::size_t width() const noexcept { return w_; }
    [[nodiscard]] double decay() const noexcept { return decay_; }

    void check(const FourierImageParam& p) const {
        if (p.height != h_ || p.width != w_ || p.coeffs.size() != 3 * h_ * wh_)
            throw std::invalid_argument("FourierRenderer: coefficient shape does not match target image size");
    }

    /// Pre-squash real field, H x W x 3.
    [[nodiscard]] ImageTensor field(const FourierImageParam& p) {
        check(p);
        ImageTensor out(h_, w_, 3);
        const double norm = 1.0 / static_cast<double>(h_ * w_);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const Complex* s = p.coeffs.data() + ch * h_ * wh_;
            for (std::size_t j = 0; j < h_; ++j)
                for (std::size_t k = 0; k < w_; ++k) {
                    Complex z{};
                    if (k < wh_) z = column_weight(k) * scale_[j * wh_ + k] * s[j * wh_ + k];
                    buf_.get()[j * w_ + k][0] = z.real();
                    buf_.get()[j * w_ + k][1] = z.imag();
                }
            fftw_execute(inv_);
            for (std::size_t y = 0; y < h_; ++y)
                for (std::size_t x = 0; x < w_; ++x) out(y, x, ch) = buf_.get()[y * w_ + x][0] * norm;
        }
        return out;
    }

    [[nodiscard]] ImageTensor render(const FourierImageParam& p) {
        ImageTensor img = field(p);
        for (auto& v : img.data()) v = sigmoid(v);
        return img;
    }

    /// Gradient with respect to the coefficients (d/dRe + i d/dIm) given the
    /// gradient with respect to the rendered pixels and the rendered image.
    [[nodiscard]] std::vector<Complex> backward(const ImageTensor& d_image, const ImageTensor& rendered) {
        if (!d_image.same_shape(rendered) || rendered.height() != h_ || rendered.width() != w_)
            throw std::invalid_argument("FourierRenderer::backward: shape mismatch");
        std::vector<Complex> grad(3 * h_ * wh_);
        const double norm = 1.0 / static_cast<double>(h_ * w_);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t y = 0; y < h_; ++y)
                for (std::size_t x = 0; x < w_; ++x) {
                    const double s = rendered(y, x, ch);
                    buf_.get()[y * w_ + x][0] = d_image(y, x, ch) * s * (1.0 - s);
                    buf_.get()[y * w_ + x][1] = 0.0;
                }
            fftw_execute(fwd_);
            Complex* g = grad.data() + ch * h_ * wh_;
            for (std::size_t j = 0; j < h_; ++j)
                for (std::size_t k = 0; k < wh_; ++k) {
                    const Complex z{buf_.get()[j * w_ + k][0], buf_.get()[j * w_ + k][1]};
                    g[j * wh_ + k] = norm * column_weight(k) * scale_[j * wh_ + k] * z;
                }
        }
        return grad;
    }

    /// Coefficients whose rendering reproduces `img` (pixels strictly inside (0,1)).
    [[nodiscard]] FourierImageParam encode(const ImageTensor& img, double eps = 1e-6) {
        if (img.height() != h_ || img.width() != w_ || img.channels() != 3)
            throw std::invalid_argument("FourierRenderer::encode: shape mismatch");
        auto p = FourierImageParam::zeros(h_, w_);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t y = 0; y < h_; ++y)
                for (std::size_t x = 0; x < w_; ++x) {
                    const double v = std::clamp(img(y, x, ch), eps, 1.0 - eps);
                    buf_.get()[y * w_ + x][0] = std::log(v / (1.0 - v));
                    buf_.get()[y * w_ + x][1] = 0.0;
                }
            fftw_execute(fwd_);
            Complex* s = p.coeffs.data() + ch * h_ * wh_;
            for (std::size_t j = 0; j < h_; ++j)
                for (std::size_t k = 0; k < wh_; ++k)
                    s[j * wh_ + k] = Complex{buf_.get()[j * w_ + k][0], buf_.get()[j * w_ + k][1]} / scale_[j * wh_ + k];
        }
        return p;
    }

private:
    [[nodiscard]] double column_weight(std::size_t k) const noexcept {
        if (k == 0) return 1.0;
        if (w_ % 2 == 0 && k == w_ / 2) return 1.0;
        return 2.0;
    }

    std::size_t h_, w_, wh_;
    double decay_;
    std::unique_ptr<fftw_complex[], detail::FftwDeleter> buf_;
    fftw_plan fwd_{};
    fftw_plan inv_{};
    std::vector<double> scale_;
};

}  // namespace cvatlas
