#pragma once

#include "cvatlas/data/augment.hpp"
#include "cvatlas/model/classifier.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// positions x channels; flat outputs have one position.
struct LayerShape {
    std::size_t positions = 1;
    std::size_t channels = 0;
    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Per-layer feature grids (positions x channels) plus the final flat representation.
struct FeatureSet {
    std::vector<RowMatrix> layers;
    Vector final;
};

/// Deterministic image -> features map on display-space images.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual std::vector<LayerShape> shapes() const = 0;
    [[nodiscard]] virtual std::size_t final_dim() const = 0;
    [[nodiscard]] virtual FeatureSet extract(const ImageTensor& display) const = 0;
};

/// Token grids of selected backbone blocks; the final representation is the
/// last block's cls token.
class VitFeatureExtractor final : public FeatureExtractor {
public:
    explicit VitFeatureExtractor(std::shared_ptr<const Model> model, std::vector<int> layers = {},
                                 std::string name = "vit")
        : model_(std::move(model)), layers_(std::move(layers)), name_(std::move(name)) {
        if (!model_) throw std::invalid_argument("VitFeatureExtractor: null model");
        if (layers_.empty())
            for (int l = 0; l < model_->num_layers(); ++l) layers_.push_back(l);
        for (int l : layers_) model_->backbone().check_layer(l);
    }

    [[nodiscard]] std::string name() const override { return name_; }

    [[nodiscard]] std::vector<LayerShape> shapes() const override {
        const auto& s = model_->spec();
        return std::vector<LayerShape>(layers_.size(), {static_cast<std::size_t>(s.num_tokens()),
                                                        static_cast<std::size_t>(s.token_dim)});
    }

    [[nodiscard]] std::size_t final_dim() const override { return static_cast<std::size_t>(model_->token_dim()); }

    [[nodiscard]] FeatureSet extract(const ImageTensor& display) const override {
        const auto cap = model_->forward_with_capture(normalize(display), true);
        FeatureSet fs;
        for (int l : layers_) fs.layers.push_back(cap.token_grids[static_cast<std::size_t>(l)]);
        fs.final = cap.cls_by_layer.row(model_->num_layers() - 1).transpose();
        return fs;
    }

private:
    std::shared_ptr<const Model> model_;
    std::vector<int> layers_;
    std::string name_;
};

}  // namespace cvatlas
