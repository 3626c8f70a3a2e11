#pragma once

#include "cvatlas/surrogate/features.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// Mean, shrunk covariance (1-λ)S + λ(tr S / D)I, its pseudo-inverse and λ.
struct CovarianceFit {
    Vector mean;
    Matrix covariance;
    Matrix precision;
    double shrinkage = 0.0;
    std::size_t samples = 0;
};

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues at or
/// below D * eps * max|eigenvalue| are treated as zero.
inline Matrix symmetric_pinv(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    const Vector& ev = es.eigenvalues();
    const double cutoff = static_cast<double>(a.rows()) * std::numeric_limits<double>::epsilon() *
                          (ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0);
    Vector inv = Vector::Zero(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (std::abs(ev(i)) > cutoff) inv(i) = 1.0 / ev(i);
    Matrix p = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (p + p.transpose());
}

/// Ledoit-Wolf intensity for centred samples (rows). λ = 1 when the
/// empirical covariance is already a multiple of the identity.
inline double ledoit_wolf_shrinkage(const Matrix& centered) {
    const auto n = static_cast<double>(centered.rows());
    const auto p = static_cast<double>(centered.cols());
    const Matrix x2 = centered.array().square().matrix();
    const Vector var = x2.colwise().sum().transpose() / n;
    const double mu = var.sum() / p;
    const double beta_sum = (x2.transpose() * x2).sum();
    const Matrix s = centered.transpose() * centered / n;
    const double s_norm2 = s.squaredNorm();
    double beta = (beta_sum / n - s_norm2) / (p * n);
    const double delta = (s_norm2 - 2.0 * mu * var.sum() + p * mu * mu) / p;
    if (!(delta > 0.0)) return 1.0;
    beta = std::min(beta, delta);
    return std::clamp(beta / delta, 0.0, 1.0);
}

/// Covariance fit over sample rows. `fixed_shrinkage` overrides the
/// Ledoit-Wolf intensity (0 gives the plain empirical covariance).
inline CovarianceFit covariance_fit(const Matrix& samples, std::optional<double> fixed_shrinkage = std::nullopt) {
    if (samples.rows() < 2) throw std::invalid_argument("covariance fit needs at least 2 samples");
    if (!samples.allFinite()) throw std::invalid_argument("covariance fit: non-finite samples");
    CovarianceFit fit;
    fit.samples = static_cast<std::size_t>(samples.rows());
    fit.mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - fit.mean.transpose();
    const Matrix s = centered.transpose() * centered / static_cast<double>(samples.rows());
    fit.shrinkage = fixed_shrinkage ? *fixed_shrinkage : ledoit_wolf_shrinkage(centered);
    if (fit.shrinkage < 0.0 || fit.shrinkage > 1.0) throw std::invalid_argument("shrinkage must lie in [0, 1]");
    const double mu = s.trace() / static_cast<double>(s.rows());
    fit.covariance = (1.0 - fit.shrinkage) * s;
    fit.covariance.diagonal().array() += fit.shrinkage * mu;
    fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
    fit.precision = symmetric_pinv(fit.covariance);
    return fit;
}

inline CovarianceFit ledoit_wolf_fit(const Matrix& samples) { return covariance_fit(samples); }

/// (p - mu)^T precision (p - mu), clamped at 0 against round-off.
inline double mahalanobis_sq(const Vector& p, const Vector& mu, const Matrix& precision) {
    if (p.size() != mu.size() || precision.rows() != p.size() || precision.cols() != p.size())
        throw std::invalid_argument("mahalanobis_sq: dimension mismatch");
    if (!p.allFinite() || !mu.allFinite()) throw std::invalid_argument("mahalanobis_sq: non-finite input");
    const Vector d = p - mu;
    return std::max(0.0, d.dot(precision * d));
}

inline double cosine_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_distance: zero vector");
    return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

/// Per-layer, per-channel weights; empty means all ones.
using LpipsWeights = std::vector<Vector>;

/// Sum over layers of the position-averaged squared distance between
/// channel-unit-normalised features.
inline double lpips(const FeatureSet& a, const FeatureSet& b, const LpipsWeights& weights = {}) {
    if (a.layers.size() != b.layers.size()) throw std::invalid_argument("lpips: layer count mismatch");
    if (!weights.empty() && weights.size() != a.layers.size()) throw std::invalid_argument("lpips: weight count mismatch");
    constexpr double eps = 1e-10;
    double total = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        const RowMatrix& fa = a.layers[l];
        const RowMatrix& fb = b.layers[l];
        if (fa.rows() != fb.rows() || fa.cols() != fb.cols()) throw std::invalid_argument("lpips: feature shape mismatch");
        if (!weights.empty() && weights[l].size() != fa.cols()) throw std::invalid_argument("lpips: weight width mismatch");
        double layer = 0.0;
        for (Eigen::Index pos = 0; pos < fa.rows(); ++pos) {
            const Vector na = fa.row(pos).transpose() / (fa.row(pos).norm() + eps);
            const Vector nb = fb.row(pos).transpose() / (fb.row(pos).norm() + eps);
            Vector d = na - nb;
            if (!weights.empty()) d = d.cwiseProduct(weights[l]);
            layer += d.squaredNorm();
        }
        total += layer / static_cast<double>(fa.rows());
    }
    return total;
}

inline double lpips(const ImageTensor& a, const ImageTensor& b, const FeatureExtractor& extractor,
                    const LpipsWeights& weights = {}) {
    if (!a.same_shape(b)) throw std::invalid_argument("lpips: image size mismatch");
    return lpips(extractor.extract(a), extractor.extract(b), weights);
}

}  // namespace cvatlas
