#pragma once

#include "cvatlas/core/hash.hpp"
#include "cvatlas/core/rng.hpp"
#include "cvatlas/core/tensor.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// Shape of the transformer backbone. Layers are indexed 0..num_layers-1.
struct BackboneSpec {
    int num_layers = 8;
    int token_dim = 128;
    int patch_size = 16;
    int num_heads = 4;
    int input_size = 224;
    int mlp_ratio = 4;

    void validate() const {
        if (num_layers < 2) throw std::invalid_argument("BackboneSpec: num_layers must be >= 2");
        if (patch_size <= 0 || input_size <= 0 || input_size % patch_size != 0)
            throw std::invalid_argument("BackboneSpec: input_size must be divisible by patch_size");
        if (num_heads <= 0 || token_dim % num_heads != 0)
            throw std::invalid_argument("BackboneSpec: token_dim must be divisible by num_heads");
        if (mlp_ratio <= 0) throw std::invalid_argument("BackboneSpec: mlp_ratio must be positive");
    }

    [[nodiscard]] int grid() const noexcept { return input_size / patch_size; }
    [[nodiscard]] int num_patches() const noexcept { return grid() * grid(); }
    [[nodiscard]] int num_tokens() const noexcept { return num_patches() + 1; }
    [[nodiscard]] int patch_dim() const noexcept { return patch_size * patch_size * 3; }
    [[nodiscard]] int head_dim() const noexcept { return token_dim / num_heads; }
    [[nodiscard]] int mlp_dim() const noexcept { return token_dim * mlp_ratio; }

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Post-norm encoder block:  y = LN1(x + MHSA(x)),  z = LN2(y + MLP(y)).
struct BlockWeights {
    RowMatrix wq, wk, wv, wo;  // D x D, applied as x * W
    Vector bq, bk, bv, bo;
    Vector ln1_gamma, ln1_beta;
    RowMatrix w1;  // D x M
    Vector b1;
    RowMatrix w2;  // M x D
    Vector b2;
    Vector ln2_gamma, ln2_beta;

    static BlockWeights zeros_like(const BackboneSpec& s) {
        const auto d = s.token_dim, m = s.mlp_dim();
        BlockWeights w;
        w.wq = w.wk = w.wv = w.wo = RowMatrix::Zero(d, d);
        w.bq = w.bk = w.bv = w.bo = Vector::Zero(d);
        w.ln1_gamma = w.ln1_beta = w.ln2_gamma = w.ln2_beta = Vector::Zero(d);
        w.w1 = RowMatrix::Zero(d, m);
        w.b1 = Vector::Zero(m);
        w.w2 = RowMatrix::Zero(m, d);
        w.b2 = Vector::Zero(d);
        return w;
    }

    /// Visits every parameter array in a fixed order (serialisation, hashing, optimisers).
    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f(self.wq), f(self.wk), f(self.wv), f(self.wo);
        f(self.bq), f(self.bk), f(self.bv), f(self.bo);
        f(self.ln1_gamma), f(self.ln1_beta);
        f(self.w1), f(self.b1), f(self.w2), f(self.b2);
        f(self.ln2_gamma), f(self.ln2_beta);
    }
};

struct BackboneWeights {
    RowMatrix patch_w;  // patch_dim x D
    Vector patch_b;
    Vector cls;
    RowMatrix pos;  // tokens x D
    std::vector<BlockWeights> blocks;

    static BackboneWeights zeros_like(const BackboneSpec& s) {
        BackboneWeights w;
        w.patch_w = RowMatrix::Zero(s.patch_dim(), s.token_dim);
        w.patch_b = Vector::Zero(s.token_dim);
        w.cls = Vector::Zero(s.token_dim);
        w.pos = RowMatrix::Zero(s.num_tokens(), s.token_dim);
        for (int l = 0; l < s.num_layers; ++l) w.blocks.push_back(BlockWeights::zeros_like(s));
        return w;
    }

    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f(self.patch_w), f(self.patch_b), f(self.cls), f(self.pos);
        for (auto& b : self.blocks) BlockWeights::visit(b, f);
    }

    [[nodiscard]] std::string fingerprint() const {
        Sha256 h;
        visit(*this, [&](const auto& m) { h.update(m.data(), static_cast<std::size_t>(m.size()) * sizeof(Scalar)); });
        return h.hex();
    }
};

/// Seeded random initialisation, fan-in scaled.
inline BackboneWeights init_backbone(const BackboneSpec& s, std::uint64_t seed) {
    s.validate();
    Rng rng(seed);
    std::normal_distribution<Scalar> gauss(0.0, 1.0);
    auto fill = [&](auto& m, double std) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * gauss(rng);
    };
    auto w = BackboneWeights::zeros_like(s);
    fill(w.patch_w, 1.0 / std::sqrt(static_cast<double>(s.patch_dim())));
    fill(w.cls, 0.5);
    fill(w.pos, 0.1);
    const double inv_d = 1.0 / std::sqrt(static_cast<double>(s.token_dim));
    for (auto& b : w.blocks) {
        fill(b.wq, inv_d), fill(b.wk, inv_d), fill(b.wv, inv_d), fill(b.wo, inv_d);
        fill(b.w1, inv_d);
        fill(b.w2, 1.0 / std::sqrt(static_cast<double>(s.mlp_dim())));
        b.ln1_gamma.setOnes();
        b.ln2_gamma.setOnes();
    }
    return w;
}

namespace nn {

inline constexpr Scalar kLayerNormEps = 1e-6;

struct LayerNormCache {
    RowMatrix xhat;
    Vector inv_std;
};

inline RowMatrix layer_norm(const RowMatrix& x, const Vector& gamma, const Vector& beta, LayerNormCache& cache) {
    const auto rows = x.rows();
    const auto d = static_cast<Scalar>(x.cols());
    cache.xhat.resize(rows, x.cols());
    cache.inv_std.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Scalar mu = x.row(r).sum() / d;
        const Scalar var = (x.row(r).array() - mu).square().sum() / d;
        const Scalar inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std(r) = inv;
        cache.xhat.row(r) = (x.row(r).array() - mu) * inv;
    }
    RowMatrix out = cache.xhat.array().rowwise() * gamma.transpose().array();
    out.rowwise() += beta.transpose();
    return out;
}

inline RowMatrix layer_norm_backward(const RowMatrix& dout, const Vector& gamma, const LayerNormCache& cache,
                                     Vector* dgamma, Vector* dbeta) {
    const auto d = static_cast<Scalar>(dout.cols());
    if (dgamma) *dgamma += (dout.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
    if (dbeta) *dbeta += dout.colwise().sum().transpose();
    RowMatrix dxhat = dout.array().rowwise() * gamma.transpose().array();
    RowMatrix dx(dout.rows(), dout.cols());
    for (Eigen::Index r = 0; r < dout.rows(); ++r) {
        const Scalar s1 = dxhat.row(r).sum();
        const Scalar s2 = dxhat.row(r).dot(cache.xhat.row(r));
        dx.row(r) = (cache.inv_std(r) / d) * (d * dxhat.row(r).array() - s1 - cache.xhat.row(r).array() * s2);
    }
    return dx;
}

inline Scalar gelu(Scalar x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline Scalar gelu_grad(Scalar x) {
    const Scalar cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const Scalar pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

}  // namespace nn

struct BlockCache {
    RowMatrix x;                 // block input
    RowMatrix q, k, v;           // T x D
    std::vector<RowMatrix> probs;  // per head, T x T
    RowMatrix heads;             // concatenated head outputs, T x D
    nn::LayerNormCache ln1;
    RowMatrix y;                 // LN1 output
    RowMatrix pre;               // T x M, before GELU
    RowMatrix act;               // T x M, after GELU
    nn::LayerNormCache ln2;
    RowMatrix z;                 // block output
};

inline RowMatrix block_forward(const BackboneSpec& s, const BlockWeights& w, const RowMatrix& x, BlockCache& c) {
    const int h = s.num_heads, dh = s.head_dim();
    const auto t = x.rows();
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    c.x = x;
    c.q = (x * w.wq).rowwise() + w.bq.transpose();
    c.k = (x * w.wk).rowwise() + w.bk.transpose();
    c.v = (x * w.wv).rowwise() + w.bv.transpose();
    c.probs.resize(static_cast<std::size_t>(h));
    c.heads.resize(t, s.token_dim);
    for (int hh = 0; hh < h; ++hh) {
        const auto off = hh * dh;
        RowMatrix scores = c.q.middleCols(off, dh) * c.k.middleCols(off, dh).transpose() * scale;
        for (Eigen::Index r = 0; r < t; ++r) {
            const Scalar m = scores.row(r).maxCoeff();
            scores.row(r) = (scores.row(r).array() - m).exp();
            scores.row(r) /= scores.row(r).sum();
        }
        c.heads.middleCols(off, dh) = scores * c.v.middleCols(off, dh);
        c.probs[static_cast<std::size_t>(hh)] = std::move(scores);
    }
    RowMatrix attn = (c.heads * w.wo).rowwise() + w.bo.transpose();
    c.y = nn::layer_norm(x + attn, w.ln1_gamma, w.ln1_beta, c.ln1);
    c.pre = (c.y * w.w1).rowwise() + w.b1.transpose();
    c.act = c.pre.unaryExpr([](Scalar v) { return nn::gelu(v); });
    RowMatrix mlp = (c.act * w.w2).rowwise() + w.b2.transpose();
    c.z = nn::layer_norm(c.y + mlp, w.ln2_gamma, w.ln2_beta, c.ln2);
    return c.z;
}

/// Backpropagates d(loss)/d(block output) to d(loss)/d(block input).
/// Parameter gradients are accumulated into `grads` when non-null.
inline RowMatrix block_backward(const BackboneSpec& s, const BlockWeights& w, const BlockCache& c, const RowMatrix& dz,
                                BlockWeights* grads = nullptr) {
    const int h = s.num_heads, dh = s.head_dim();
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));

    RowMatrix dr2 = nn::layer_norm_backward(dz, w.ln2_gamma, c.ln2, grads ? &grads->ln2_gamma : nullptr,
                                            grads ? &grads->ln2_beta : nullptr);
    // r2 = y + act * w2 + b2
    RowMatrix dact = dr2 * w.w2.transpose();
    if (grads) {
        grads->w2.noalias() += c.act.transpose() * dr2;
        grads->b2 += dr2.colwise().sum().transpose();
    }
    RowMatrix dpre = dact.array() * c.pre.unaryExpr([](Scalar v) { return nn::gelu_grad(v); }).array();
    RowMatrix dy = dr2 + dpre * w.w1.transpose();
    if (grads) {
        grads->w1.noalias() += c.y.transpose() * dpre;
        grads->b1 += dpre.colwise().sum().transpose();
    }
    RowMatrix dr1 = nn::layer_norm_backward(dy, w.ln1_gamma, c.ln1, grads ? &grads->ln1_gamma : nullptr,
                                            grads ? &grads->ln1_beta : nullptr);
    // r1 = x + heads * wo + bo
    RowMatrix dheads = dr1 * w.wo.transpose();
    if (grads) {
        grads->wo.noalias() += c.heads.transpose() * dr1;
        grads->bo += dr1.colwise().sum().transpose();
    }
    RowMatrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int hh = 0; hh < h; ++hh) {
        const auto off = hh * dh;
        const auto& p = c.probs[static_cast<std::size_t>(hh)];
        const RowMatrix dout = dheads.middleCols(off, dh);
        RowMatrix dp = dout * c.v.middleCols(off, dh).transpose();
        dv.middleCols(off, dh) = p.transpose() * dout;
        Vector rowdot = (dp.array() * p.array()).rowwise().sum();
        RowMatrix ds = p.array() * (dp.colwise() - rowdot).array();
        ds *= scale;
        dq.middleCols(off, dh) = ds * c.k.middleCols(off, dh);
        dk.middleCols(off, dh) = ds.transpose() * c.q.middleCols(off, dh);
    }
    RowMatrix dx = dr1;
    dx.noalias() += dq * w.wq.transpose();
    dx.noalias() += dk * w.wk.transpose();
    dx.noalias() += dv * w.wv.transpose();
    if (grads) {
        grads->wq.noalias() += c.x.transpose() * dq;
        grads->wk.noalias() += c.x.transpose() * dk;
        grads->wv.noalias() += c.x.transpose() * dv;
        grads->bq += dq.colwise().sum().transpose();
        grads->bk += dk.colwise().sum().transpose();
        grads->bv += dv.colwise().sum().transpose();
    }
    return dx;
}

/// Rows are patches in raster order; columns run (dy, dx, channel).
inline RowMatrix patchify(const BackboneSpec& s, const ImageTensor& img) {
    const int p = s.patch_size, g = s.grid();
    RowMatrix out(s.num_patches(), s.patch_dim());
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            const int row = py * g + px;
            int col = 0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < 3; ++c)
                        out(row, col++) = img(static_cast<std::size_t>(py * p + dy), static_cast<std::size_t>(px * p + dx),
                                              static_cast<std::size_t>(c));
        }
    return out;
}

inline ImageTensor unpatchify(const BackboneSpec& s, const RowMatrix& patches) {
    const int p = s.patch_size, g = s.grid();
    ImageTensor img(static_cast<std::size_t>(s.input_size), static_cast<std::size_t>(s.input_size), 3);
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            const int row = py * g + px;
            int col = 0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < 3; ++c)
                        img(static_cast<std::size_t>(py * p + dy), static_cast<std::size_t>(px * p + dx),
                            static_cast<std::size_t>(c)) = patches(row, col++);
        }
    return img;
}

/// Activations kept for a backward pass. `blocks[l].z` is the token grid
/// after layer l; row 0 is the cls token.
struct BackboneTrace {
    RowMatrix patches;
    std::vector<BlockCache> blocks;
};

class Backbone {
public:
    Backbone() = default;
    Backbone(BackboneSpec spec, BackboneWeights weights) : spec_(spec), weights_(std::move(weights)) {
        spec_.validate();
        if (static_cast<int>(weights_.blocks.size()) != spec_.num_layers)
            throw std::invalid_argument("Backbone: weight block count does not match spec");
    }
    static Backbone random(const BackboneSpec& spec, std::uint64_t seed) { return {spec, init_backbone(spec, seed)}; }

    [[nodiscard]] const BackboneSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const BackboneWeights& weights() const noexcept { return weights_; }
    [[nodiscard]] BackboneWeights& mutable_weights() noexcept { return weights_; }

    void check_input(const ImageTensor& img) const {
        const auto n = static_cast<std::size_t>(spec_.input_size);
        if (img.height() != n || img.width() != n || img.channels() != 3)
            throw std::invalid_argument("Backbone: expected " + std::to_string(n) + "x" + std::to_string(n) +
                                        "x3 input, got " + std::to_string(img.height()) + "x" +
                                        std::to_string(img.width()) + "x" + std::to_string(img.channels()));
    }

    [[nodiscard]] RowMatrix embed(const RowMatrix& patches) const {
        RowMatrix x(spec_.num_tokens(), spec_.token_dim);
        x.row(0) = weights_.cls.transpose();
        x.bottomRows(spec_.num_patches()) = (patches * weights_.patch_w).rowwise() + weights_.patch_b.transpose();
        x += weights_.pos;
        return x;
    }

    /// Runs blocks 0..last_layer on a normalised image, filling `trace`.
    void forward(const ImageTensor& normalized, int last_layer, BackboneTrace& trace) const {
        check_input(normalized);
        check_layer(last_layer);
        trace.patches = patchify(spec_, normalized);
        trace.blocks.resize(static_cast<std::size_t>(last_layer + 1));
        RowMatrix x = embed(trace.patches);
        for (int l = 0; l <= last_layer; ++l)
            x = block_forward(spec_, weights_.blocks[static_cast<std::size_t>(l)], x, trace.blocks[static_cast<std::size_t>(l)]);
    }

    /// Continues the forward pass from the token grid after layer `layer`.
    [[nodiscard]] RowMatrix forward_from(int layer, const RowMatrix& tokens) const {
        check_layer(layer);
        RowMatrix x = tokens;
        BlockCache scratch;
        for (int l = layer + 1; l < spec_.num_layers; ++l)
            x = block_forward(spec_, weights_.blocks[static_cast<std::size_t>(l)], x, scratch);
        return x;
    }

    /// Backpropagates a gradient on the token grid after layer `from` down to
    /// the token grid after layer `to` (to <= from).
    [[nodiscard]] RowMatrix backward_between(const BackboneTrace& trace, int from, int to, RowMatrix grad) const {
        for (int l = from; l > to; --l)
            grad = block_backward(spec_, weights_.blocks[static_cast<std::size_t>(l)], trace.blocks[static_cast<std::size_t>(l)], grad);
        return grad;
    }

    /// Backpropagates a gradient on the token grid after layer `from` to the
    /// normalised input image.
    [[nodiscard]] ImageTensor backward_to_input(const BackboneTrace& trace, int from, RowMatrix grad,
                                                BackboneWeights* grads = nullptr) const {
        for (int l = from; l >= 0; --l)
            grad = block_backward(spec_, weights_.blocks[static_cast<std::size_t>(l)], trace.blocks[static_cast<std::size_t>(l)],
                                  grad, grads ? &grads->blocks[static_cast<std::size_t>(l)] : nullptr);
        const auto dembed = grad.bottomRows(spec_.num_patches());
        if (grads) {
            grads->pos += grad;
            grads->cls += grad.row(0).transpose();
            grads->patch_w.noalias() += trace.patches.transpose() * dembed;
            grads->patch_b += dembed.colwise().sum().transpose();
        }
        RowMatrix dpatches = dembed * weights_.patch_w.transpose();
        return unpatchify(spec_, dpatches);
    }

    void check_layer(int layer) const {
        if (layer < 0 || layer >= spec_.num_layers)
            throw std::out_of_range("layer " + std::to_string(layer) + " outside [0, " +
                                    std::to_string(spec_.num_layers) + ")");
    }

private:
    BackboneSpec spec_;
    BackboneWeights weights_;
};

}  // namespace cvatlas
