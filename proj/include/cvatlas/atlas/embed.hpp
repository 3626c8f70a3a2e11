#pragma once

#include "cvatlas/core/rng.hpp"
#include "cvatlas/core/tensor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

enum class Reducer { TSNE, PCA };

inline std::string to_string(Reducer r) { return r == Reducer::TSNE ? "tsne" : "pca"; }

inline Reducer reducer_from_string(const std::string& s) {
    if (s == "tsne") return Reducer::TSNE;
    if (s == "pca") return Reducer::PCA;
    throw std::invalid_argument("unknown reducer '" + s + "' (expected tsne or pca)");
}

/// Exact t-SNE settings. learning_rate <= 0 selects max(N / exaggeration / 4, 50).
struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 250;
    double learning_rate = 0.0;
    double min_gain = 0.01;
};

struct ReducerConfig {
    Reducer kind = Reducer::TSNE;
    TsneConfig tsne;
};

/// One (x, y) row per record.
struct Embedding2D {
    RowMatrix coords;
    Reducer reducer = Reducer::TSNE;
    double perplexity = 0.0;  // effective value after clamping
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(coords.rows()); }
};

namespace detail {

inline RowMatrix squared_distances(const Matrix& x) {
    const Vector sq = x.rowwise().squaredNorm();
    RowMatrix d = (-2.0 * x * x.transpose()).colwise() + sq;
    d.rowwise() += sq.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

/// Row-conditional affinities with entropy log(perplexity), by bisection on
/// the precision of each Gaussian kernel.
inline RowMatrix conditional_affinities(const RowMatrix& d2, double perplexity) {
    const Eigen::Index n = d2.rows();
    const double target = std::log(perplexity);
    RowMatrix p = RowMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 100; ++it) {
            double sum = 0.0, wsum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double v = std::exp(-d2(i, j) * beta);
                p(i, j) = v;
                sum += v;
                wsum += d2(i, j) * v;
            }
            if (sum == 0.0) sum = 1e-8;
            const double entropy = std::log(sum) + beta * wsum / sum;
            for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) <= 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
            }
        }
    }
    return p;
}

}  // namespace detail

/// Exact t-SNE (gradient descent with momentum and per-coordinate gains).
inline Embedding2D tsne(const Matrix& input, const TsneConfig& cfg, std::uint64_t seed) {
    const Eigen::Index n = input.rows();
    if (n < 2) throw std::invalid_argument("tsne: at least 2 records required");
    if (!input.allFinite()) throw std::invalid_argument("tsne: non-finite input");
    Embedding2D emb;
    emb.reducer = Reducer::TSNE;
    emb.seed = seed;

    Matrix x = input;
    RowMatrix d2 = detail::squared_distances(x);
    if (d2.maxCoeff() <= 0.0) {
        emb.warnings.emplace_back("degenerate input: all vectors identical; jitter added");
        spdlog::warn("tsne: all input vectors identical, adding seeded jitter");
        Rng jr(derive_seed(seed, std::string_view("degenerate")));
        std::normal_distribution<double> g(0.0, 1e-6 * std::max(1.0, x.cwiseAbs().maxCoeff()));
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += g(jr);
        d2 = detail::squared_distances(x);
    }

    double perp = cfg.perplexity;
    const double cap = static_cast<double>(n - 1) / 3.0;
    if (perp > cap || perp < 1.0) {
        perp = std::max(1.0, std::min(perp, cap));
        emb.warnings.push_back("perplexity clamped to " + std::to_string(perp));
        spdlog::warn("tsne: perplexity {} clamped to {} for {} records", cfg.perplexity, perp, n);
    }
    emb.perplexity = perp;

    RowMatrix p = detail::conditional_affinities(d2, perp);
    p = p + p.transpose().eval();
    p /= p.sum();
    p = p.cwiseMax(1e-12);
    p.diagonal().setZero();

    Rng rng(seed);
    std::normal_distribution<double> init(0.0, 1e-4);
    RowMatrix y(n, 2);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = init(rng);

    const double lr = cfg.learning_rate > 0 ? cfg.learning_rate
                                            : std::max(static_cast<double>(n) / cfg.early_exaggeration / 4.0, 50.0);
    RowMatrix update = RowMatrix::Zero(n, 2), gains = RowMatrix::Ones(n, 2), grad(n, 2);
    RowMatrix num(n, n);
    for (int it = 0; it < cfg.iterations; ++it) {
        const bool early = it < cfg.exaggeration_iterations;
        const double exag = early ? cfg.early_exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        double qsum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num(i, i) = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
                const double v = 1.0 / (1.0 + dx * dx + dy * dy);
                num(i, j) = num(j, i) = v;
                qsum += 2.0 * v;
            }
        }
        grad.setZero();
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double m = (exag * p(i, j) - num(i, j) / qsum) * num(i, j);
                grad(i, 0) += 4.0 * m * (y(i, 0) - y(j, 0));
                grad(i, 1) += 4.0 * m * (y(i, 1) - y(j, 1));
            }
        for (Eigen::Index k = 0; k < grad.size(); ++k) {
            double& gain = gains.data()[k];
            gain = (update.data()[k] * grad.data()[k] < 0.0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, cfg.min_gain);
            update.data()[k] = momentum * update.data()[k] - lr * gain * grad.data()[k];
            y.data()[k] += update.data()[k];
        }
    }
    emb.coords = y;
    return emb;
}

/// Projection on the two leading principal components.
inline Embedding2D pca_2d(const Matrix& input, std::uint64_t seed = 0) {
    if (input.rows() < 2) throw std::invalid_argument("pca_2d: at least 2 records required");
    const Matrix centered = input.rowwise() - input.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Matrix> es(centered.transpose() * centered);
    const Eigen::Index d = input.cols();
    Matrix basis(d, 2);
    for (int k = 0; k < 2; ++k) {
        Vector v = k < d ? Vector(es.eigenvectors().col(d - 1 - k)) : Vector::Zero(d);
        // Sign convention: largest-magnitude component positive.
        Eigen::Index arg = 0;
        if (v.size() > 0) v.cwiseAbs().maxCoeff(&arg);
        if (v.size() > 0 && v(arg) < 0) v = -v;
        basis.col(k) = v;
    }
    Embedding2D emb;
    emb.reducer = Reducer::PCA;
    emb.seed = seed;
    emb.coords = centered * basis;
    return emb;
}

inline Embedding2D embed_2d(const Matrix& x, const ReducerConfig& cfg, std::uint64_t seed) {
    return cfg.kind == Reducer::TSNE ? tsne(x, cfg.tsne, seed) : pca_2d(x, seed);
}

/// Mean silhouette coefficient of 2-D points under Euclidean distance.
inline double silhouette_score(const RowMatrix& pts, const std::vector<int>& labels) {
    const auto n = static_cast<std::size_t>(pts.rows());
    if (labels.size() != n) throw std::invalid_argument("silhouette_score: label count mismatch");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                sums[static_cast<std::size_t>(labels[j])] +=
                    (pts.row(static_cast<Eigen::Index>(i)) - pts.row(static_cast<Eigen::Index>(j))).norm();
        const auto own = static_cast<std::size_t>(labels[i]);
        if (counts[own] <= 1) continue;  // singleton clusters score 0
        const double a = sums[own] / static_cast<double>(counts[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < sums.size(); ++c)
            if (c != own && counts[c] > 0) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
        if (std::isinf(b)) continue;
        total += (b - a) / std::max(a, b);
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace cvatlas
