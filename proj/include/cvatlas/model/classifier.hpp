#pragma once

#include "cvatlas/data/augment.hpp"
#include "cvatlas/data/class_map.hpp"
#include "cvatlas/model/vit.hpp"

#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cvatlas {

struct LinearHead {
    RowMatrix weight;  // C x D
    Vector bias;       // C

    [[nodiscard]] Vector apply(const Vector& f) const { return weight * f + bias; }
    [[nodiscard]] int num_classes() const noexcept { return static_cast<int>(weight.rows()); }

    static LinearHead init(int classes, int dim, std::uint64_t seed) {
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<Scalar> u(-bound, bound);
        LinearHead h{RowMatrix(classes, dim), Vector(classes)};
        for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < h.bias.size(); ++i) h.bias(i) = u(rng);
        return h;
    }

    friend bool operator==(const LinearHead& a, const LinearHead& b) {
        return a.weight == b.weight && a.bias == b.bias;
    }
};

struct CapturedForward {
    Vector logits;                       // pre-softmax
    RowMatrix cls_by_layer;              // L x D
    std::vector<RowMatrix> token_grids;  // optional, per layer

    friend bool operator==(const CapturedForward&, const CapturedForward&) = default;
};

struct LogitGradient {
    Scalar logit = 0.0;
    Vector grad;  // d logit / d cls token at the requested layer
};

/// Frozen transformer backbone followed by a linear head on the final cls token.
///
/// Captured activations are the post-block (post-LayerNorm) cls rows. Every
/// quantity exposed here is a pre-softmax logit; `softmax` exists for display.
class Model {
public:
    Model() = default;
    Model(Backbone backbone, LinearHead head, ClassMap classes)
        : backbone_(std::move(backbone)), head_(std::move(head)), classes_(std::move(classes)) {
        if (head_.weight.cols() != backbone_.spec().token_dim)
            throw std::invalid_argument("Model: head width does not match token dimension");
        if (static_cast<std::size_t>(head_.num_classes()) != classes_.size())
            throw std::invalid_argument("Model: head rows do not match class map size");
        if (!head_.weight.allFinite() || !head_.bias.allFinite())
            throw std::invalid_argument("Model: non-finite head parameters");
    }

    [[nodiscard]] const Backbone& backbone() const noexcept { return backbone_; }
    [[nodiscard]] const LinearHead& head() const noexcept { return head_; }
    [[nodiscard]] const ClassMap& classes() const noexcept { return classes_; }
    [[nodiscard]] const BackboneSpec& spec() const noexcept { return backbone_.spec(); }
    [[nodiscard]] int num_classes() const noexcept { return head_.num_classes(); }
    [[nodiscard]] int num_layers() const noexcept { return spec().num_layers; }
    [[nodiscard]] int token_dim() const noexcept { return spec().token_dim; }
    [[nodiscard]] std::size_t input_size() const noexcept { return static_cast<std::size_t>(spec().input_size); }

    void set_head(LinearHead head) { head_ = std::move(head); }

    /// Marks the backbone as inference-only (e.g. an imported feature
    /// extractor without a backward pass); gradient queries then fail.
    void set_inference_only(bool v) noexcept { inference_only_ = v; }
    [[nodiscard]] bool inference_only() const noexcept { return inference_only_; }

    /// Default capture layer: floor(0.58 * L), the relative depth of layer 14 of 24.
    [[nodiscard]] int default_layer() const noexcept { return static_cast<int>(0.58 * num_layers()); }

    [[nodiscard]] CapturedForward forward_with_capture(const ImageTensor& normalized, bool keep_tokens = false) const {
        BackboneTrace trace;
        backbone_.forward(normalized, num_layers() - 1, trace);
        CapturedForward out;
        out.cls_by_layer.resize(num_layers(), token_dim());
        for (int l = 0; l < num_layers(); ++l) {
            const auto& z = trace.blocks[static_cast<std::size_t>(l)].z;
            out.cls_by_layer.row(l) = z.row(0);
            if (keep_tokens) out.token_grids.push_back(z);
        }
        out.logits = head_.apply(out.cls_by_layer.row(num_layers() - 1).transpose());
        return out;
    }

    [[nodiscard]] Vector logits(const ImageTensor& normalized) const {
        BackboneTrace trace;
        backbone_.forward(normalized, num_layers() - 1, trace);
        return head_.apply(trace.blocks.back().z.row(0).transpose());
    }

    /// cls activation at one layer; runs only blocks 0..layer.
    [[nodiscard]] Vector activation(const ImageTensor& normalized, int layer) const {
        BackboneTrace trace;
        backbone_.forward(normalized, layer, trace);
        return trace.blocks.back().z.row(0).transpose();
    }

    /// Logits from a token grid substituted after `layer`.
    [[nodiscard]] Vector logits_from_tokens(int layer, const RowMatrix& tokens) const {
        RowMatrix z = backbone_.forward_from(layer, tokens);
        return head_.apply(z.row(0).transpose());
    }

    /// Pre-softmax logit for class c and its gradient with respect to the cls
    /// token after `layer`, differentiated through the remaining blocks with
    /// all other tokens held fixed.
    [[nodiscard]] LogitGradient class_logit_and_grad(const ImageTensor& normalized, int layer, int c) const {
        require_gradients();
        check_class(c);
        backbone_.check_layer(layer);
        BackboneTrace trace;
        backbone_.forward(normalized, num_layers() - 1, trace);
        return {head_.apply(trace.blocks.back().z.row(0).transpose())(c), cls_gradient(trace, layer, c)};
    }

    /// Gradient of logit c w.r.t. the cls token after `layer`, from a full trace.
    [[nodiscard]] Vector cls_gradient(const BackboneTrace& trace, int layer, int c) const {
        const int last = num_layers() - 1;
        if (layer == last) return head_.weight.row(c).transpose();
        RowMatrix seed = RowMatrix::Zero(spec().num_tokens(), token_dim());
        seed.row(0) = head_.weight.row(c);
        RowMatrix g = backbone_.backward_between(trace, last, layer, std::move(seed));
        return g.row(0).transpose();
    }

    struct Attribution {
        Vector activation;   // f: cls token at the layer
        Vector attribution;  // per class <f, d cl(c) / d f>
        int ground_truth = -1;
    };

    [[nodiscard]] Attribution attribution(const ImageTensor& normalized, int layer) const {
        require_gradients();
        backbone_.check_layer(layer);
        BackboneTrace trace;
        backbone_.forward(normalized, num_layers() - 1, trace);
        Attribution out;
        out.activation = trace.blocks[static_cast<std::size_t>(layer)].z.row(0).transpose();
        out.attribution.resize(num_classes());
        for (int c = 0; c < num_classes(); ++c) out.attribution(c) = out.activation.dot(cls_gradient(trace, layer, c));
        return out;
    }

    /// Logit c and its gradient with respect to the normalised input image.
    [[nodiscard]] std::pair<Scalar, ImageTensor> logit_input_gradient(const ImageTensor& normalized, int c) const {
        require_gradients();
        check_class(c);
        BackboneTrace trace;
        const int last = num_layers() - 1;
        backbone_.forward(normalized, last, trace);
        const Scalar logit = head_.apply(trace.blocks.back().z.row(0).transpose())(c);
        RowMatrix seed = RowMatrix::Zero(spec().num_tokens(), token_dim());
        seed.row(0) = head_.weight.row(c);
        return {logit, backbone_.backward_to_input(trace, last, std::move(seed))};
    }

    /// ||f_layer(img) - target||^2 and its gradient with respect to the normalised input.
    [[nodiscard]] std::pair<Scalar, ImageTensor> inversion_loss_gradient(const ImageTensor& normalized, int layer,
                                                                         const Vector& target) const {
        require_gradients();
        BackboneTrace trace;
        backbone_.forward(normalized, layer, trace);
        const Vector diff = trace.blocks.back().z.row(0).transpose() - target;
        RowMatrix seed = RowMatrix::Zero(spec().num_tokens(), token_dim());
        seed.row(0) = 2.0 * diff.transpose();
        return {diff.squaredNorm(), backbone_.backward_to_input(trace, layer, std::move(seed))};
    }

    [[nodiscard]] std::string fingerprint() const {
        Sha256 h;
        h.update(backbone_.weights().fingerprint());
        h.update(head_.weight.data(), static_cast<std::size_t>(head_.weight.size()) * sizeof(Scalar));
        h.update(head_.bias.data(), static_cast<std::size_t>(head_.bias.size()) * sizeof(Scalar));
        for (const auto& c : classes_.codes()) h.update(c).update("\n");
        return h.hex();
    }

    void check_class(int c) const {
        if (c < 0 || c >= num_classes())
            throw std::out_of_range("class " + std::to_string(c) + " outside [0, " + std::to_string(num_classes()) + ")");
    }

private:
    void require_gradients() const {
        if (inference_only_) throw std::logic_error("gradient unavailable: backbone is inference-only");
    }

    Backbone backbone_;
    LinearHead head_;
    ClassMap classes_;
    bool inference_only_ = false;
};

inline Vector softmax(const Vector& logits) {
    Vector e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

inline int argmax(const Vector& v) {
    Eigen::Index idx = 0;
    v.maxCoeff(&idx);
    return static_cast<int>(idx);
}

}  // namespace cvatlas
