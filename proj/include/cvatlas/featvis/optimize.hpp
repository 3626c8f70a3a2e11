#pragma once

#include "cvatlas/core/optim.hpp"
#include "cvatlas/core/rng.hpp"
#include "cvatlas/data/augment.hpp"
#include "cvatlas/featvis/fourier.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cvatlas {

struct VisConfig {
    std::size_t steps = 8192;
    // eps damps the step on near-zero high-frequency gradients, which plain
    // Adam would otherwise scale up to full-size moves.
    AdamConfig adam{0.05, 0.9, 0.999, 1e-4, 0.0};
    double decay = 1.0;        // spectrum scaling exponent
    double init_sd = 0.01;     // coefficient initialisation
    std::uint64_t seed = 0;
    bool jitter = false;       // random circular shifts before each evaluation
    std::size_t jitter_px = 2;
    Channel3 mean = kImageNetMean;
    Channel3 std = kImageNetStd;
    /// Called with (step, rendered display image) before each update.
    std::function<void(std::size_t, const ImageTensor&)> on_step;
};

/// Objective values per executed step, evaluated on the image rendered
/// before that step's update. `best` is the running optimum.
struct OptimizationTrace {
    std::vector<double> objective;
    std::vector<double> best;
    std::size_t steps = 0;
    std::size_t best_step = 0;
    double wall_seconds = 0.0;
    bool maximize = true;
    ImageTensor final_image;  // image after the last update

    [[nodiscard]] double best_objective() const {
        return best.empty() ? std::numeric_limits<double>::quiet_NaN() : best.back();
    }
};

struct VisResult {
    ImageTensor image;  // best image over the trace
    FourierImageParam param;
    OptimizationTrace trace;
};

/// Raised when the objective or its gradient becomes non-finite; carries the
/// trace up to the failing step.
class OptimizationAborted : public std::runtime_error {
public:
    OptimizationAborted(const std::string& what, OptimizationTrace trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    [[nodiscard]] const OptimizationTrace& trace() const noexcept { return trace_; }

private:
    OptimizationTrace trace_;
};

/// Objective on a display-space image: value and gradient w.r.t. its pixels.
using ImageObjective = std::function<std::pair<Scalar, ImageTensor>(const ImageTensor&)>;

namespace detail {

inline ImageTensor roll(const ImageTensor& img, long dy, long dx) {
    ImageTensor out(img.height(), img.width(), img.channels());
    const auto h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const auto yy = static_cast<std::size_t>(((y + dy) % h + h) % h);
            const auto xx = static_cast<std::size_t>(((x + dx) % w + w) % w);
            for (std::size_t c = 0; c < img.channels(); ++c)
                out(yy, xx, c) = img(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
        }
    return out;
}

/// Gradient w.r.t. display pixels from a gradient w.r.t. normalised pixels.
inline ImageTensor unnormalize_gradient(ImageTensor g, const Channel3& std) {
    for (std::size_t y = 0; y < g.height(); ++y)
        for (std::size_t x = 0; x < g.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) g(y, x, c) /= std[c];
    return g;
}

inline bool all_finite(const ImageTensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace detail

/// Adam in Fourier-coefficient space on a sigmoid-squashed image.
inline VisResult optimize_image(const ImageObjective& objective, bool maximize, std::size_t size,
                                const VisConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    FourierRenderer renderer(size, size, cfg.decay);
    VisResult res;
    res.param = FourierImageParam::random(size, size, cfg.seed, cfg.init_sd);
    res.trace.maximize = maximize;
    Adam adam(cfg.adam);
    Rng jitter_rng(derive_seed(cfg.seed, std::string_view("jitter")));
    std::uniform_int_distribution<long> shift(-static_cast<long>(cfg.jitter_px), static_cast<long>(cfg.jitter_px));
    const double sign = maximize ? -1.0 : 1.0;  // Adam minimises
    double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();

    auto abort = [&](const std::string& why) {
        res.trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        throw OptimizationAborted(why, res.trace);
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ImageTensor img = renderer.render(res.param);
        if (cfg.on_step) cfg.on_step(step, img);
        long dy = 0, dx = 0;
        if (cfg.jitter) dy = shift(jitter_rng), dx = shift(jitter_rng);
        auto [value, grad] = objective(cfg.jitter ? detail::roll(img, dy, dx) : img);
        if (cfg.jitter) grad = detail::roll(grad, -dy, -dx);
        res.trace.objective.push_back(value);
        ++res.trace.steps;
        if (!std::isfinite(value)) abort("non-finite objective at step " + std::to_string(step));
        if (!detail::all_finite(grad)) abort("non-finite gradient at step " + std::to_string(step));
        if (maximize ? value > best : value < best) {
            best = value;
            res.trace.best_step = step;
            res.image = img;
        }
        res.trace.best.push_back(best);

        std::vector<Complex> g = renderer.backward(grad, img);
        for (auto& z : g) z *= sign;
        adam.begin_step();
        adam.update(0, reinterpret_cast<Scalar*>(res.param.coeffs.data()), reinterpret_cast<const Scalar*>(g.data()),
                    2 * g.size());
    }
    res.trace.final_image = renderer.render(res.param);
    if (res.image.empty()) res.image = res.trace.final_image;
    res.trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// Models whose class logits are differentiable w.r.t. the normalised input.
template <typename M>
concept LogitDifferentiable = requires(const M& m, const ImageTensor& x, int c) {
    { m.num_classes() } -> std::convertible_to<int>;
    { m.input_size() } -> std::convertible_to<std::size_t>;
    { m.logit_input_gradient(x, c) } -> std::convertible_to<std::pair<Scalar, ImageTensor>>;
};

template <typename M>
concept InversionDifferentiable = requires(const M& m, const ImageTensor& x, int l, const Vector& t) {
    { m.num_layers() } -> std::convertible_to<int>;
    { m.token_dim() } -> std::convertible_to<int>;
    { m.input_size() } -> std::convertible_to<std::size_t>;
    { m.inversion_loss_gradient(x, l, t) } -> std::convertible_to<std::pair<Scalar, ImageTensor>>;
};

/// Maximises the pre-softmax logit of class c.
template <LogitDifferentiable M>
VisResult class_visualization(const M& model, int c, const VisConfig& cfg = {}) {
    if (c < 0 || c >= model.num_classes())
        throw std::out_of_range("class_visualization: class " + std::to_string(c) + " out of range");
    ImageObjective obj = [&](const ImageTensor& img) {
        auto [logit, g] = model.logit_input_gradient(normalize(img, cfg.mean, cfg.std), c);
        return std::pair{logit, detail::unnormalize_gradient(std::move(g), cfg.std)};
    };
    return optimize_image(obj, true, model.input_size(), cfg);
}

/// Minimises ||f_layer(img) - target||^2.
template <InversionDifferentiable M>
VisResult feature_inversion(const M& model, int layer, const Vector& target, const VisConfig& cfg = {}) {
    if (layer < 0 || layer >= model.num_layers())
        throw std::out_of_range("feature_inversion: layer " + std::to_string(layer) + " out of range");
    if (target.size() != model.token_dim()) throw std::invalid_argument("feature_inversion: target dimension mismatch");
    if (!target.allFinite()) throw std::invalid_argument("feature_inversion: non-finite target");
    ImageObjective obj = [&](const ImageTensor& img) {
        auto [loss, g] = model.inversion_loss_gradient(normalize(img, cfg.mean, cfg.std), layer, target);
        return std::pair{loss, detail::unnormalize_gradient(std::move(g), cfg.std)};
    };
    return optimize_image(obj, false, model.input_size(), cfg);
}

/// Sidecar record written next to an optimised image.
inline nlohmann::json sidecar_json(const VisConfig& cfg, const OptimizationTrace& trace, const std::string& config_hash) {
    return {{"seed", cfg.seed},
            {"steps", trace.steps},
            {"final_objective", trace.objective.empty() ? 0.0 : trace.objective.back()},
            {"best_objective", trace.best_objective()},
            {"best_step", trace.best_step},
            {"objective", trace.maximize ? "maximize" : "minimize"},
            {"learning_rate", cfg.adam.learning_rate},
            {"decay", cfg.decay},
            {"jitter", cfg.jitter},
            {"config_hash", config_hash}};
}

}  // namespace cvatlas
