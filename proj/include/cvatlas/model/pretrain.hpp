#pragma once

#include "cvatlas/model/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cvatlas {

/// End-to-end supervised training of a backbone on a proxy dataset. It
/// stands in for the foundation-model pretraining the toolkit assumes: the
/// returned backbone is frozen afterwards and only a fresh linear head is fit.
struct PretrainConfig {
    AdamConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.01};
    int epochs = 20;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::optional<AugmentConfig> augment;
};

struct PretrainResult {
    Backbone backbone;
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;  // of the proxy head, last epoch
};

inline PretrainResult pretrain_backbone(const BackboneSpec& spec, const Dataset& proxy, const PretrainConfig& cfg) {
    if (proxy.patches.empty()) throw std::invalid_argument("pretrain_backbone: empty proxy dataset");
    if (cfg.epochs < 1 || cfg.batch_size == 0) throw std::invalid_argument("pretrain_backbone: bad schedule");
    proxy.validate();
    Backbone bb = Backbone::random(spec, derive_seed(cfg.seed, "pretrain-backbone"));
    const int classes = static_cast<int>(proxy.class_map.size());
    LinearHead head = LinearHead::init(classes, spec.token_dim, derive_seed(cfg.seed, "pretrain-head"));
    Adam opt(cfg.optimizer);
    Rng rng(derive_seed(cfg.seed, "pretrain-order"));
    std::vector<std::size_t> order(proxy.size());
    std::iota(order.begin(), order.end(), 0);
    const int last = spec.num_layers - 1;
    PretrainResult result;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            auto grads = BackboneWeights::zeros_like(spec);
            RowMatrix dW = RowMatrix::Zero(head.weight.rows(), head.weight.cols());
            Vector db = Vector::Zero(head.bias.size());
            for (std::size_t k = start; k < end; ++k) {
                const auto& patch = proxy.patches[order[k]];
                const ImageTensor img = cfg.augment ? augment(patch.image, *cfg.augment, rng) : patch.image;
                BackboneTrace trace;
                bb.forward(normalize(img), last, trace);
                const Vector cls = trace.blocks.back().z.row(0).transpose();
                const Vector logits = head.apply(cls);
                Vector p = softmax(logits);
                loss_sum -= std::log(std::max(p(patch.class_id), 1e-300));
                correct += argmax(logits) == patch.class_id;
                // d(cross-entropy)/d(logits) = softmax - onehot.
                p(patch.class_id) -= 1.0;
                dW.noalias() += p * cls.transpose();
                db += p;
                RowMatrix seed = RowMatrix::Zero(spec.num_tokens(), spec.token_dim);
                seed.row(0) = (head.weight.transpose() * p).transpose();
                (void)bb.backward_to_input(trace, last, std::move(seed), &grads);
            }
            if (!std::isfinite(loss_sum)) throw std::runtime_error("pretrain_backbone: non-finite loss");
            const double inv = 1.0 / static_cast<double>(end - start);
            dW *= inv;
            db *= inv;
            opt.begin_step();
            opt.update(0, head.weight, dW);
            opt.update(1, head.bias, db);
            std::vector<Scalar*> params;
            std::vector<std::size_t> sizes;
            BackboneWeights::visit(bb.mutable_weights(), [&](auto& m) {
                params.push_back(m.data());
                sizes.push_back(static_cast<std::size_t>(m.size()));
            });
            std::size_t slot = 0;
            BackboneWeights::visit(grads, [&](auto& g) {
                g *= inv;
                opt.update(2 + slot, params[slot], g.data(), sizes[slot]);
                ++slot;
            });
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(proxy.size()));
        result.train_accuracy = static_cast<double>(correct) / static_cast<double>(proxy.size());
        spdlog::debug("pretrain epoch {}: loss {:.4f} acc {:.3f}", epoch, result.epoch_loss.back(),
                      result.train_accuracy);
    }
    result.backbone = std::move(bb);
    return result;
}

}  // namespace cvatlas
