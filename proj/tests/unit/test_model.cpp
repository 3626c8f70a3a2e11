#include "cvatlas/model/checkpoint.hpp"
#include "cvatlas/model/pretrain.hpp"
#include "cvatlas/model/train.hpp"

#include "../support/fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace cvatlas;
using namespace cvatlas::testing;

TEST(BackboneSpec, Validation) {
    BackboneSpec s = tiny_spec();
    EXPECT_NO_THROW(s.validate());
    s.input_size = 18;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = tiny_spec();
    s.num_heads = 3;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = tiny_spec(1);
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(ForwardWithCapture, DeterministicAndHeadConsistent) {
    auto model = tiny_model();
    Rng rng(3);
    auto img = normalize(random_image(16, rng));
    auto a = model.forward_with_capture(img, true);
    auto b = model.forward_with_capture(img, true);
    EXPECT_EQ(a, b);  // bitwise
    ASSERT_EQ(a.cls_by_layer.rows(), 3);
    ASSERT_EQ(a.token_grids.size(), 3u);
    const Vector via_head = model.head().apply(a.cls_by_layer.row(2).transpose());
    EXPECT_LT((via_head - a.logits).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ForwardWithCapture, TwentyFourLayerBackboneHasTwentyFourRows) {
    auto spec = tiny_spec(24);
    spec.token_dim = 8;
    Model model(Backbone::random(spec, 2), LinearHead::init(2, 8, 3), ClassMap::from_codes({"A", "B"}));
    Rng rng(4);
    auto cap = model.forward_with_capture(normalize(random_image(16, rng)));
    EXPECT_EQ(cap.cls_by_layer.rows(), 24);
    EXPECT_EQ(model.default_layer(), 13);  // floor(0.58 * 24), zero-based layer 14
}

TEST(ForwardWithCapture, ShapeMismatchIsAnError) {
    auto model = tiny_model();
    EXPECT_THROW(model.forward_with_capture(ImageTensor(12, 16, 3)), std::invalid_argument);
    EXPECT_THROW(model.forward_with_capture(ImageTensor(16, 16, 1)), std::invalid_argument);
}

TEST(ClassLogitAndGrad, FinalLayerGradientIsHeadRow) {
    auto model = tiny_model();
    Rng rng(5);
    auto img = normalize(random_image(16, rng));
    for (int c = 0; c < 3; ++c) {
        auto g = model.class_logit_and_grad(img, 2, c);
        EXPECT_EQ(g.grad, Vector(model.head().weight.row(c).transpose()));
        EXPECT_NEAR(g.logit, model.logits(img)(c), 1e-12);
    }
}

TEST(ClassLogitAndGrad, MatchesCentralFiniteDifferences) {
    auto model = tiny_model(4, 3, 9);
    Rng rng(6);
    const double h = 1e-4;
    for (int probe = 0; probe < 10; ++probe) {
        auto img = normalize(random_image(16, rng));
        const int layer = static_cast<int>(rng() % 4);
        const int c = static_cast<int>(rng() % 3);
        auto g = model.class_logit_and_grad(img, layer, c);
        auto cap = model.forward_with_capture(img, true);
        const RowMatrix& tokens = cap.token_grids[static_cast<std::size_t>(layer)];
        Vector fd(model.token_dim());
        for (int d = 0; d < model.token_dim(); ++d) {
            RowMatrix plus = tokens, minus = tokens;
            plus(0, d) += h;
            minus(0, d) -= h;
            fd(d) = (model.logits_from_tokens(layer, plus)(c) - model.logits_from_tokens(layer, minus)(c)) / (2 * h);
        }
        EXPECT_LT(relative_error(g.grad, fd), 1e-3) << "layer " << layer << " class " << c;

        // First-order prediction of a small random (symmetric) perturbation of the cls token.
        Vector delta = Vector::Random(model.token_dim()) * h;
        RowMatrix fwd = tokens, back = tokens;
        fwd.row(0) += delta.transpose();
        back.row(0) -= delta.transpose();
        const double actual = 0.5 * (model.logits_from_tokens(layer, fwd)(c) - model.logits_from_tokens(layer, back)(c));
        EXPECT_LT(std::abs(g.grad.dot(delta) - actual), 1e-3 * std::abs(actual) + 1e-12);
    }
}

TEST(ClassLogitAndGrad, IdenticalHeadRowsGiveIdenticalGradients) {
    auto base = tiny_model();
    LinearHead head = base.head();
    head.weight.row(1) = head.weight.row(0);
    head.bias(1) = head.bias(0);
    Model model(base.backbone(), head, base.classes());
    Rng rng(7);
    auto img = normalize(random_image(16, rng));
    EXPECT_EQ(model.class_logit_and_grad(img, 0, 0).grad, model.class_logit_and_grad(img, 0, 1).grad);
}

TEST(ClassLogitAndGrad, RangeAndInferenceOnlyErrors) {
    auto model = tiny_model();
    Rng rng(8);
    auto img = normalize(random_image(16, rng));
    EXPECT_THROW(model.class_logit_and_grad(img, 3, 0), std::out_of_range);
    EXPECT_THROW(model.class_logit_and_grad(img, 0, 3), std::out_of_range);
    model.set_inference_only(true);
    EXPECT_THROW(model.class_logit_and_grad(img, 0, 0), std::logic_error);
}

TEST(InputGradient, LogitGradientMatchesFiniteDifferences) {
    auto model = tiny_model(3, 3, 4);
    Rng rng(9);
    auto img = normalize(random_image(16, rng));
    auto [logit, grad] = model.logit_input_gradient(img, 1);
    EXPECT_NEAR(logit, model.logits(img)(1), 1e-12);
    const double h = 1e-5;
    for (int probe = 0; probe < 12; ++probe) {
        const std::size_t idx = rng() % img.size();
        auto plus = img, minus = img;
        plus.data()[idx] += h;
        minus.data()[idx] -= h;
        const double fd = (model.logits(plus)(1) - model.logits(minus)(1)) / (2 * h);
        EXPECT_NEAR(grad.data()[idx], fd, 1e-6 + 1e-4 * std::abs(fd));
    }
}

TEST(InputGradient, InversionLossGradientMatchesFiniteDifferences) {
    auto model = tiny_model(3, 3, 5);
    Rng rng(10);
    auto img = normalize(random_image(16, rng));
    Vector target = model.activation(normalize(random_image(16, rng)), 1);
    auto [loss, grad] = model.inversion_loss_gradient(img, 1, target);
    EXPECT_NEAR(loss, (model.activation(img, 1) - target).squaredNorm(), 1e-12);
    const double h = 1e-5;
    for (int probe = 0; probe < 12; ++probe) {
        const std::size_t idx = rng() % img.size();
        auto plus = img, minus = img;
        plus.data()[idx] += h;
        minus.data()[idx] -= h;
        const double fd = ((model.activation(plus, 1) - target).squaredNorm() -
                           (model.activation(minus, 1) - target).squaredNorm()) / (2 * h);
        EXPECT_NEAR(grad.data()[idx], fd, 1e-6 + 1e-4 * std::abs(fd));
    }
}

TEST(Backbone, ParameterGradientsMatchFiniteDifferences) {
    auto model = tiny_model(2, 2, 11);
    Rng rng(12);
    auto img = normalize(random_image(16, rng));
    const auto& bb = model.backbone();
    BackboneTrace trace;
    bb.forward(img, 1, trace);
    RowMatrix seed = RowMatrix::Zero(bb.spec().num_tokens(), bb.spec().token_dim);
    seed.row(0) = model.head().weight.row(0);
    auto grads = BackboneWeights::zeros_like(bb.spec());
    (void)bb.backward_to_input(trace, 1, seed, &grads);

    std::vector<Scalar*> params, grad_ptrs;
    std::vector<Eigen::Index> sizes;
    auto weights = bb.weights();
    BackboneWeights::visit(weights, [&](auto& m) { params.push_back(m.data()), sizes.push_back(m.size()); });
    BackboneWeights::visit(grads, [&](auto& m) { grad_ptrs.push_back(m.data()); });
    const double h = 1e-5;
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t slot = rng() % params.size();
        const auto idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(sizes[slot]));
        auto eval = [&](double delta) {
            auto w = weights;
            std::vector<Scalar*> ptrs;
            BackboneWeights::visit(w, [&](auto& m) { ptrs.push_back(m.data()); });
            ptrs[slot][idx] += delta;
            Model m(Backbone(bb.spec(), w), model.head(), model.classes());
            return m.logits(img)(0);
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        EXPECT_NEAR(grad_ptrs[slot][idx], fd, 1e-6 + 1e-4 * std::abs(fd)) << "slot " << slot;
    }
}

namespace {

struct TwoClassSplit {
    Dataset train, val;
};

TwoClassSplit separable_split() {
    auto classes = textures::coarse3();
    classes.pop_back();
    SyntheticConfig cfg{24, 16, 4, 21};
    auto ds = make_texture_dataset(classes, cfg);
    TwoClassSplit out{{ds.class_map, {}}, {ds.class_map, {}}};
    for (std::size_t i = 0; i < ds.size(); ++i) (i % 4 == 0 ? out.val : out.train).patches.push_back(ds.patches[i]);
    return out;
}

}  // namespace

TEST(TrainLinearHead, SeparableTwoClassReachesPerfectValidation) {
    auto split = separable_split();
    auto spec = tiny_spec(3);
    Model model(Backbone::random(spec, 31), LinearHead::init(2, spec.token_dim, 1), split.train.class_map);
    const auto before = model.backbone().weights().fingerprint();
    TrainConfig cfg;
    cfg.seed = 5;
    auto result = train_linear_head(model, split.train, split.val, cfg);
    EXPECT_EQ(model.backbone().weights().fingerprint(), before);
    EXPECT_LE(result.log.size(), 50u);
    ASSERT_GE(result.best_epoch, 0);
    EXPECT_DOUBLE_EQ(result.log[static_cast<std::size_t>(result.best_epoch)].val_accuracy, 1.0);
    model.set_head(result.head);
    EXPECT_DOUBLE_EQ(evaluate(model, split.val).accuracy, 1.0);
    EXPECT_DOUBLE_EQ(cfg.optimizer.learning_rate, 1e-3);
    EXPECT_EQ(cfg.max_epochs, 50);
    EXPECT_EQ(cfg.patience, 20);
}

TEST(TrainLinearHead, PatienceExhaustedStopsEarlyWithBestCheckpoint) {
    auto split = separable_split();
    // Shuffle training labels so validation loss stops improving quickly.
    for (std::size_t i = 0; i < split.train.patches.size(); ++i) split.train.patches[i].class_id = static_cast<int>((i / 3) % 2);
    auto spec = tiny_spec(3);
    Model model(Backbone::random(spec, 31), LinearHead::init(2, spec.token_dim, 1), split.train.class_map);
    TrainConfig cfg;
    cfg.patience = 3;
    cfg.optimizer.learning_rate = 0.05;
    auto result = train_linear_head(model, split.train, split.val, cfg);
    EXPECT_TRUE(result.stopped_early);
    EXPECT_LT(result.log.size(), 50u);
    double best = 1e300;
    int best_epoch = -1;
    for (const auto& e : result.log)
        if (e.val_loss < best) best = e.val_loss, best_epoch = e.epoch;
    EXPECT_EQ(result.best_epoch, best_epoch);
    EXPECT_EQ(static_cast<int>(result.log.size()), best_epoch + 1 + cfg.patience);
}

TEST(TrainLinearHead, EmptyTrainingSetIsAnError) {
    auto split = separable_split();
    Dataset empty{split.train.class_map, {}};
    auto model = tiny_model(3, 2);
    EXPECT_THROW(train_linear_head(model, empty, split.val, {}), std::invalid_argument);
}

TEST(Evaluate, PerfectAndChanceLevel) {
    RowMatrix perfect(4, 2);
    perfect << 0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6;
    auto rep = evaluate_scores(perfect, {0, 1, 0, 1});
    EXPECT_DOUBLE_EQ(rep.auroc, 1.0);
    EXPECT_DOUBLE_EQ(rep.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(rep.f1, 1.0);

    RowMatrix constant(4, 2);
    constant << 0.6, 0.4, 0.6, 0.4, 0.6, 0.4, 0.6, 0.4;
    rep = evaluate_scores(constant, {0, 1, 0, 1});
    EXPECT_DOUBLE_EQ(rep.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(rep.auroc, 0.5);
    EXPECT_EQ(rep.confusion[0][0] + rep.confusion[0][1], 2u);
    EXPECT_EQ(rep.confusion[1][0] + rep.confusion[1][1], 2u);
}

TEST(Evaluate, AbsentClassExcludedFromAuroc) {
    RowMatrix p(4, 3);
    p << 0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.7, 0.2, 0.1, 0.2, 0.7, 0.1;
    auto rep = evaluate_scores(p, {0, 1, 0, 1});
    EXPECT_EQ(rep.auroc_excluded, std::vector<int>{2});
    EXPECT_DOUBLE_EQ(rep.auroc, 1.0);
    EXPECT_THROW(evaluate_scores(p, {0, 0, 0, 0}), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
    auto model = tiny_model(3, 3, 77);
    Checkpoint ck{model, {{0, 1.0, 0.9, 0.5}, {1, 0.8, 0.7, 0.75}}, {{"note", "x"}}};
    auto path = std::filesystem::temp_directory_path() / "cvatlas_ckpt_test.bin";
    save_checkpoint(path, ck);
    auto back = load_checkpoint(path);
    EXPECT_EQ(back.model.fingerprint(), model.fingerprint());
    EXPECT_EQ(back.model.spec(), model.spec());
    EXPECT_EQ(back.model.head(), model.head());
    EXPECT_EQ(back.model.classes(), model.classes());
    ASSERT_EQ(back.training_log.size(), 2u);
    EXPECT_EQ(back.training_log[1].val_accuracy, 0.75);
    EXPECT_EQ(back.metadata.at("note"), "x");
    std::ofstream(path, std::ios::binary) << "garbage";
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(PretrainBackbone, LossDecreasesAndIsDeterministic) {
    const auto ds = make_texture_dataset(textures::coarse3(), SyntheticConfig{10, 16, 2, 3});
    PretrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.seed = 4;
    const auto a = pretrain_backbone(tiny_spec(), ds, cfg);
    const auto b = pretrain_backbone(tiny_spec(), ds, cfg);
    ASSERT_EQ(a.epoch_loss.size(), 6u);
    EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
    EXPECT_EQ(a.epoch_loss, b.epoch_loss);
    EXPECT_EQ(a.backbone.weights().fingerprint(), b.backbone.weights().fingerprint());
    EXPECT_NE(a.backbone.weights().fingerprint(),
              Backbone::random(tiny_spec(), derive_seed(4, "pretrain-backbone")).weights().fingerprint());
}

TEST(PretrainBackbone, EmptyProxyAndBadScheduleAreErrors) {
    Dataset empty{ClassMap::from_codes({"A", "B"}), {}};
    EXPECT_THROW(pretrain_backbone(tiny_spec(), empty, {}), std::invalid_argument);
    const auto ds = make_texture_dataset(textures::coarse3(), SyntheticConfig{2, 16, 1, 3});
    PretrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(pretrain_backbone(tiny_spec(), ds, cfg), std::invalid_argument);
}
