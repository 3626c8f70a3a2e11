#pragma once

#include "cvatlas/core/optim.hpp"
#include "cvatlas/data/augment.hpp"
#include "cvatlas/data/dataset.hpp"
#include "cvatlas/model/classifier.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

namespace cvatlas {

struct TrainConfig {
    AdamConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.01};
    int max_epochs = 50;
    int patience = 20;  // epochs without validation-loss improvement
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::optional<AugmentConfig> augment;  // training-set augmentation, re-drawn every epoch
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    LinearHead head;  // lowest validation loss
    std::vector<EpochLog> log;
    int best_epoch = -1;
    bool stopped_early = false;
};

/// Final-layer cls features of a set of display-space images.
inline RowMatrix final_features(const Model& model, const std::vector<const ImageTensor*>& images) {
    RowMatrix out(static_cast<Eigen::Index>(images.size()), model.token_dim());
    const int last = model.num_layers() - 1;
    for (std::size_t i = 0; i < images.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = model.activation(normalize(*images[i]), last).transpose();
    return out;
}

namespace detail {

inline double cross_entropy(const LinearHead& head, const RowMatrix& x, const std::vector<int>& y,
                            RowMatrix* dW = nullptr, Vector* db = nullptr, std::size_t* correct = nullptr) {
    double loss = 0.0;
    if (correct) *correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector z = head.apply(x.row(i).transpose());
        const double m = z.maxCoeff();
        const double lse = m + std::log((z.array() - m).exp().sum());
        const int yi = y[static_cast<std::size_t>(i)];
        loss += lse - z(yi);
        if (correct && argmax(z) == yi) ++*correct;
        if (dW) {
            Vector p = (z.array() - lse).exp();
            p(yi) -= 1.0;
            dW->noalias() += p * x.row(i);
            *db += p;
        }
    }
    return x.rows() > 0 ? loss / static_cast<double>(x.rows()) : 0.0;
}

}  // namespace detail

/// Trains only the linear head (cross-entropy, AdamW) on frozen backbone
/// features with early stopping on validation loss. The model's backbone is
/// never written; the returned head is the best-validation checkpoint.
inline TrainResult train_linear_head(const Model& model, const Dataset& train, const Dataset& val,
                                     const TrainConfig& cfg) {
    if (train.patches.empty()) throw std::invalid_argument("train_linear_head: empty training set");
    if (val.patches.empty()) throw std::invalid_argument("train_linear_head: empty validation set");

    auto images = [](const Dataset& ds) {
        std::vector<const ImageTensor*> out;
        for (const auto& p : ds.patches) out.push_back(&p.image);
        return out;
    };
    auto labels = [](const Dataset& ds) {
        std::vector<int> out;
        for (const auto& p : ds.patches) out.push_back(p.class_id);
        return out;
    };
    const std::vector<int> y_train = labels(train), y_val = labels(val);
    const RowMatrix x_val = final_features(model, images(val));
    RowMatrix x_train;
    if (!cfg.augment) x_train = final_features(model, images(train));

    Rng rng(cfg.seed);
    LinearHead head = LinearHead::init(model.num_classes(), model.token_dim(), derive_seed(cfg.seed, "head-init"));
    Adam opt(cfg.optimizer);
    TrainResult result{head, {}, -1, false};
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (cfg.augment) {
            std::vector<ImageTensor> aug;
            aug.reserve(train.size());
            for (const auto& p : train.patches) aug.push_back(augment(p.image, *cfg.augment, rng));
            std::vector<const ImageTensor*> ptrs;
            for (const auto& a : aug) ptrs.push_back(&a);
            x_train = final_features(model, ptrs);
        }
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            RowMatrix xb(static_cast<Eigen::Index>(end - start), x_train.cols());
            std::vector<int> yb;
            for (std::size_t i = start; i < end; ++i) {
                xb.row(static_cast<Eigen::Index>(i - start)) = x_train.row(static_cast<Eigen::Index>(order[i]));
                yb.push_back(y_train[order[i]]);
            }
            RowMatrix dW = RowMatrix::Zero(head.weight.rows(), head.weight.cols());
            Vector db = Vector::Zero(head.bias.size());
            const double loss = detail::cross_entropy(head, xb, yb, &dW, &db);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_linear_head: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch starting " + std::to_string(start));
            const double inv = 1.0 / static_cast<double>(yb.size());
            dW *= inv;
            db *= inv;
            opt.begin_step();
            opt.update(0, head.weight, dW);
            opt.update(1, head.bias, db);
            epoch_loss += loss * static_cast<double>(yb.size());
        }
        std::size_t correct = 0;
        const double val_loss = detail::cross_entropy(head, x_val, y_val, nullptr, nullptr, &correct);
        if (!std::isfinite(val_loss)) throw std::runtime_error("train_linear_head: non-finite validation loss");
        result.log.push_back({epoch, epoch_loss / static_cast<double>(train.size()), val_loss,
                              static_cast<double>(correct) / static_cast<double>(val.size())});
        spdlog::debug("epoch {}: train {:.4f} val {:.4f} acc {:.3f}", epoch, result.log.back().train_loss, val_loss,
                      result.log.back().val_accuracy);
        if (val_loss < best_val) {
            best_val = val_loss;
            result.head = head;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    return result;
}

struct EvalReport {
    double auroc = 0.0;     // macro one-vs-rest over classes present in the ground truth
    double f1 = 0.0;        // macro over classes present in truth or prediction
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // rows truth, cols predicted
    std::vector<int> auroc_excluded;
};

/// One-vs-rest ROC AUC via the rank-sum statistic with averaged ties.
inline double binary_auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (positive[i]) {
            n_pos += 1;
            rank_sum += rank[i];
        } else {
            n_neg += 1;
        }
    }
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("binary_auroc: need both classes");
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

/// Metrics from per-sample class probabilities (rows) and integer truth.
inline EvalReport evaluate_scores(const RowMatrix& probs, const std::vector<int>& truth) {
    const auto nc = static_cast<std::size_t>(probs.cols());
    if (truth.empty()) throw std::invalid_argument("evaluate: empty set");
    std::set<int> present(truth.begin(), truth.end());
    if (present.size() < 2) throw std::invalid_argument("evaluate: need at least two classes in the ground truth");

    EvalReport rep;
    rep.confusion.assign(nc, std::vector<std::size_t>(nc, 0));
    std::vector<int> pred(truth.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        pred[i] = argmax(probs.row(static_cast<Eigen::Index>(i)).transpose());
        ++rep.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
        correct += pred[i] == truth[i] ? 1 : 0;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

    std::set<int> labels = present;
    labels.insert(pred.begin(), pred.end());
    double f1_sum = 0.0;
    for (int c : labels) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += (pred[i] == c && truth[i] == c) ? 1 : 0;
            fp += (pred[i] == c && truth[i] != c) ? 1 : 0;
            fn += (pred[i] != c && truth[i] == c) ? 1 : 0;
        }
        f1_sum += (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    }
    rep.f1 = f1_sum / static_cast<double>(labels.size());

    double auc_sum = 0.0;
    std::size_t auc_n = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        if (!present.count(static_cast<int>(c))) {
            rep.auroc_excluded.push_back(static_cast<int>(c));
            spdlog::warn("evaluate: class {} absent from ground truth, excluded from macro AUROC", c);
            continue;
        }
        std::vector<double> s(truth.size());
        std::vector<bool> pos(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            s[i] = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            pos[i] = truth[i] == static_cast<int>(c);
        }
        auc_sum += binary_auroc(s, pos);
        ++auc_n;
    }
    rep.auroc = auc_sum / static_cast<double>(auc_n);
    return rep;
}

inline EvalReport evaluate(const Model& model, const Dataset& ds) {
    RowMatrix probs(static_cast<Eigen::Index>(ds.size()), model.num_classes());
    std::vector<int> truth;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        probs.row(static_cast<Eigen::Index>(i)) = softmax(model.logits(normalize(ds.patches[i].image))).transpose();
        truth.push_back(ds.patches[i].class_id);
    }
    return evaluate_scores(probs, truth);
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out{ds.class_map, {}};
    for (auto i : idx) out.patches.push_back(ds.patches.at(i));
    return out;
}

}  // namespace cvatlas
