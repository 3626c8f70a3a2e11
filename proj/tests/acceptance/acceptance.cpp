// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "cvatlas/model/pretrain.hpp"
#include "cvatlas/pipeline/stages.hpp"

#include "../support/agreement_oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>

using namespace cvatlas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

/// Toy-scale stand-in for a foundation backbone plus linear head.
struct Toy {
    Dataset ds;
    Dataset val;
    std::shared_ptr<Model> model;
    double val_accuracy = 0.0;
};

BackboneSpec toy_spec() {
    BackboneSpec s;
    s.num_layers = 4;
    s.token_dim = 32;
    s.patch_size = 8;
    s.num_heads = 4;
    s.input_size = 32;
    s.mlp_ratio = 2;
    return s;
}

/// Backbone pretrained on a disjoint proxy draw (seed 99), head trained on
/// folds 1-4 of a five-fold grouped split, accuracy measured on fold 0.
Toy make_toy(const std::vector<TextureClass>& tex, std::size_t per_class, double palette_swap, std::uint64_t seed,
             std::size_t proxy_per_class = 60) {
    Toy t;
    t.ds = make_texture_dataset(tex, {per_class, 32, 8, 7, palette_swap});
    const auto proxy = make_texture_dataset(tex, {proxy_per_class, 32, 8, 99, palette_swap});
    PretrainConfig pc;
    pc.epochs = 15;
    pc.seed = seed;
    const auto pre = pretrain_backbone(toy_spec(), proxy, pc);
    const auto folds = stratified_group_kfold(t.ds, 5, seed);
    const auto train = subset(t.ds, folds.complement(0));
    t.val = subset(t.ds, folds.members(0));
    t.model = std::make_shared<Model>(pre.backbone, LinearHead::init(static_cast<int>(tex.size()), 32, seed + 1),
                                      t.ds.class_map);
    TrainConfig tc;
    tc.seed = seed;
    t.model->set_head(train_linear_head(*t.model, train, t.val, tc).head);
    t.val_accuracy = evaluate(*t.model, t.val).accuracy;
    return t;
}

const Toy& plain_toy() {
    static const Toy t = make_toy(textures::five_class(), 60, 0.0, 4);
    return t;
}

const Toy& nuisance_toy() {
    static const Toy t = make_toy(textures::five_class(), 60, 0.5, 4);
    return t;
}

// 1 ------------------------------------------------------------------------

Outcome agreement_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    std::size_t checks = 0, failures = 0;
    auto compare = [&](std::optional<double> expected, const std::function<double()>& got) {
        ++checks;
        if (!expected) {
            try {
                (void)got();
                ++failures;
            } catch (const std::invalid_argument&) {
            }
            return;
        }
        const double d = std::abs(got() - *expected);
        worst = std::max(worst, d);
        if (!(d <= 1e-9)) ++failures;
    };
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t items = 2 + rng() % 11, raters = 2 + rng() % 4, cats = 2 + rng() % 5;
        const bool damaged = trial % 2 == 1;
        const auto m = oracle::random_matrix(rng(), items, raters, cats, damaged ? 0.15 : 0.0, damaged ? 0.15 : 0.0);
        for (auto mode : {UncertainMode::Exclude, UncertainMode::Category}) {
            compare(oracle::fleiss(m, mode), [&] { return fleiss_kappa(m, mode).value; });
            compare(oracle::alpha(m, mode), [&] { return krippendorff_alpha(m, mode).value; });
            for (std::size_t a = 0; a < raters; ++a)
                for (std::size_t b = a + 1; b < raters; ++b) {
                    const auto x = m.column(a), y = m.column(b);
                    compare(oracle::cohen(x, y, mode), [&] { return cohens_kappa(x, y, cats, mode).value; });
                }
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {failures == 0 && secs < 10.0,
            fmt("%zu comparisons, %zu mismatches, max |diff| %.2e, %.2f s", checks, failures, worst, secs)};
}

// 2 ------------------------------------------------------------------------

Outcome attribution_identity() {
    const auto& toy = nuisance_toy();
    const Model& m = *toy.model;
    AtlasConfig ac;
    ac.seed = 3;
    const auto atlas = build_atlas(m, toy.ds, ac);
    std::map<std::string, const LabeledPatch*> by_id;
    for (const auto& p : toy.ds.patches) by_id[p.id] = &p;

    std::vector<const AtlasCell*> cells;
    for (const auto& c : atlas.cells)
        if (!c.empty()) cells.push_back(&c);
    if (cells.size() < 20) return {false, fmt("only %zu non-empty cells", cells.size())};
    Rng rng(11);
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(20);

    double worst = 0.0;
    for (const auto* cell : cells)
        for (int c = 0; c < m.num_classes(); ++c) {
            double sum = 0.0;
            for (auto k : cell->members) {
                const auto x = normalize(by_id.at(atlas.records[k].patch_id)->image);
                const Vector f = m.activation(x, atlas.layer);
                sum += f.dot(m.class_logit_and_grad(x, atlas.layer, c).grad);
            }
            const double brute = sum / static_cast<double>(cell->n());
            worst = std::max(worst, std::abs(cell_attribution_score(*cell, c) - brute));
        }

    bool head_rows = true;
    const int last = m.num_layers() - 1;
    for (std::size_t p = 0; p < 10; ++p) {
        const auto x = normalize(toy.ds.patches[p * 17 % toy.ds.size()].image);
        for (int c = 0; c < m.num_classes(); ++c)
            head_rows = head_rows && m.class_logit_and_grad(x, last, c).grad == Vector(m.head().weight.row(c).transpose());
    }
    return {worst <= 1e-5 && head_rows,
            fmt("20 cells x %d classes, max |diff| %.2e; final-layer gradient == head row: %s", m.num_classes(), worst,
                head_rows ? "yes" : "no")};
}

// 3 ------------------------------------------------------------------------

Outcome gradient_checks() {
    const Model& m = *plain_toy().model;
    const auto& ds = plain_toy().ds;
    Rng rng(31);
    double worst_cls = 0.0;
    const double h = 1e-4;
    for (int probe = 0; probe < 12; ++probe) {
        const auto x = normalize(ds.patches[rng() % ds.size()].image);
        const int layer = static_cast<int>(rng() % static_cast<unsigned>(m.num_layers()));
        const int c = static_cast<int>(rng() % static_cast<unsigned>(m.num_classes()));
        const auto g = m.class_logit_and_grad(x, layer, c);
        const RowMatrix tokens = m.forward_with_capture(x, true).token_grids[static_cast<std::size_t>(layer)];
        Vector fd(m.token_dim());
        for (int d = 0; d < m.token_dim(); ++d) {
            RowMatrix plus = tokens, minus = tokens;
            plus(0, d) += h;
            minus(0, d) -= h;
            fd(d) = (m.logits_from_tokens(layer, plus)(c) - m.logits_from_tokens(layer, minus)(c)) / (2 * h);
        }
        worst_cls = std::max(worst_cls, (g.grad - fd).norm() / std::max(fd.norm(), 1e-12));
    }

    const std::size_t n = m.input_size();
    FourierRenderer r(n, n);
    double worst_fourier = 0.0;
    std::size_t fourier_probes = 0;
    for (int trial = 0; trial < 4; ++trial) {
        const auto p = FourierImageParam::random(n, n, rng(), 0.05);
        const int c = trial % m.num_classes();
        auto objective = [&](const FourierImageParam& q) { return m.logits(normalize(r.render(q)))(c); };
        const auto img = r.render(p);
        const auto gx = m.logit_input_gradient(normalize(img), c).second;
        const auto grad = r.backward(detail::unnormalize_gradient(gx, kImageNetStd), img);
        const double step = 1e-5;
        for (int probe = 0; probe < 10; ++probe) {
            const auto i = static_cast<std::size_t>(rng() % p.coeffs.size());
            const int part = probe % 2;
            auto plus = p, minus = p;
            const Complex d = part == 0 ? Complex{step, 0} : Complex{0, step};
            plus.coeffs[i] += d;
            minus.coeffs[i] -= d;
            const double fd = (objective(plus) - objective(minus)) / (2 * step);
            const double an = part == 0 ? grad[i].real() : grad[i].imag();
            // Imaginary parts of self-conjugate bins have no effect on the image.
            if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
            worst_fourier = std::max(worst_fourier, std::abs(fd - an) / std::max(std::abs(fd), 1e-8));
            ++fourier_probes;
        }
    }
    return {worst_cls < 1e-3 && worst_fourier < 1e-2 && fourier_probes >= 20,
            fmt("cls-token max rel err %.2e (12 probes); Fourier max rel err %.2e (%zu probes)", worst_cls,
                worst_fourier, fourier_probes)};
}

// 4 ------------------------------------------------------------------------

Matrix gaussian(Eigen::Index n, Eigen::Index d, Rng& rng, double shift, Eigen::Index stretched) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) + shift;
    x.col(stretched) *= 2.5;
    return x;
}

/// Shrunk covariance from the per-sample definition of the optimal intensity.
Matrix oracle_shrunk_covariance(const Matrix& x) {
    const Eigen::Index n = x.rows(), p = x.cols();
    const Vector mean = x.colwise().mean().transpose();
    Matrix s = Matrix::Zero(p, p);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vector c = x.row(k).transpose() - mean;
        s += c * c.transpose();
    }
    s /= double(n);
    const double mu = s.trace() / double(p);
    const Matrix target = mu * Matrix::Identity(p, p);
    const double delta = (s - target).squaredNorm() / double(p);
    double beta = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vector c = x.row(k).transpose() - mean;
        beta += (c * c.transpose() - s).squaredNorm();
    }
    beta /= double(n) * double(n) * double(p);
    const double lambda = delta == 0.0 ? 1.0 : std::min(beta, delta) / delta;
    return (1.0 - lambda) * s + lambda * target;
}

/// Features are the first 16 stored values of the image, so images can carry
/// arbitrary Gaussian vectors.
class StoredVectorExtractor final : public FeatureExtractor {
public:
    static constexpr std::size_t kDim = 16;
    [[nodiscard]] std::string name() const override { return "stored"; }
    [[nodiscard]] std::vector<LayerShape> shapes() const override { return {}; }
    [[nodiscard]] std::size_t final_dim() const override { return kDim; }
    [[nodiscard]] FeatureSet extract(const ImageTensor& img) const override {
        FeatureSet fs;
        fs.final = Eigen::Map<const Vector>(img.data().data(), kDim);
        return fs;
    }
    static ImageTensor encode(const Vector& v) {
        ImageTensor img(1, 6, 3);
        for (std::size_t k = 0; k < kDim; ++k) img.data()[k] = v(static_cast<Eigen::Index>(k));
        return img;
    }
};

Outcome mahalanobis_suite() {
    constexpr Eigen::Index D = 16;
    Rng rng(41);
    bool ok = true;
    std::string why;
    auto fail = [&](const std::string& w) {
        if (ok) why = w;
        ok = false;
    };

    Dataset refs_ds{ClassMap::from_codes({"G0", "G1", "G2"}), {}};
    std::vector<Matrix> samples;
    for (int c = 0; c < 3; ++c) {
        samples.push_back(gaussian(80, D, rng, 1.2 * c, c));
        for (Eigen::Index k = 0; k < samples.back().rows(); ++k)
            refs_ds.patches.push_back({"g" + std::to_string(c) + "_" + std::to_string(k),
                                       StoredVectorExtractor::encode(samples.back().row(k).transpose()), c, "g"});
    }
    StoredVectorExtractor ex;
    const auto refs = build_reference_sets(refs_ds, ex, 80, 5);

    double lambda_min = 1.0, lambda_max = 0.0, eig_min = 1e300;
    for (int c = 0; c < 3; ++c) {
        const auto& fit = refs.classes[static_cast<std::size_t>(c)].fit;
        if (mahalanobis_sq(fit.mean, fit.mean, fit.precision) != 0.0) fail("MD(mu) != 0");
        lambda_min = std::min(lambda_min, fit.shrinkage);
        lambda_max = std::max(lambda_max, fit.shrinkage);
        eig_min = std::min(eig_min, Eigen::SelfAdjointEigenSolver<Matrix>(fit.covariance).eigenvalues().minCoeff());
        if ((fit.covariance - fit.covariance.transpose()).norm() != 0.0) fail("covariance not symmetric");
    }
    for (int t = 0; t < 20; ++t) {
        const Matrix few = gaussian(3 + static_cast<Eigen::Index>(rng() % 30), D, rng, 0.0, t % D);
        const auto fit = ledoit_wolf_fit(few);
        lambda_min = std::min(lambda_min, fit.shrinkage);
        lambda_max = std::max(lambda_max, fit.shrinkage);
        eig_min = std::min(eig_min, Eigen::SelfAdjointEigenSolver<Matrix>(fit.covariance).eigenvalues().minCoeff());
    }
    if (lambda_min < 0.0 || lambda_max > 1.0) fail("shrinkage outside [0,1]");
    if (eig_min < -1e-12) fail("shrunk covariance not PSD");

    double euclid = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Vector p = gaussian(1, D, rng, 0.0, 0).row(0).transpose();
        const Vector mu = gaussian(1, D, rng, 1.0, 0).row(0).transpose();
        euclid = std::max(euclid, std::abs(mahalanobis_sq(p, mu, Matrix::Identity(D, D)) - (p - mu).squaredNorm()));
    }
    if (euclid > 1e-12) fail("identity covariance differs from squared Euclidean");

    Atlas atlas;
    atlas.grid = 10;
    atlas.classes = refs_ds.class_map;
    Matrix queries(50, D);
    for (Eigen::Index k = 0; k < 50; ++k) queries.row(k) = gaussian(1, D, rng, 1.2 * double(k % 3), k % 3).row(0);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            AtlasCell cell;
            cell.i = i;
            cell.j = j;
            const int k = i * 10 + j;
            if (k % 2 == 0) {
                cell.members = {0};
                cell.generated_image = StoredVectorExtractor::encode(queries.row(k / 2).transpose());
            }
            atlas.cells.push_back(std::move(cell));
        }
    const auto labels = assign_labels(atlas, LabelMethod::Mahalanobis, Strategy::NN, &refs, &ex);

    std::vector<Matrix> inverse;
    std::vector<Vector> means;
    for (const auto& x : samples) {
        inverse.push_back(oracle_shrunk_covariance(x).inverse());
        means.push_back(x.colwise().mean().transpose());
    }
    std::size_t agree = 0, seen = 0;
    std::map<int, int> spread;
    for (const auto& cl : labels.cells) {
        const Vector q = queries.row((cl.i * 10 + cl.j) / 2).transpose();
        int best = -1;
        double bd = 0.0;
        for (int c = 0; c < 3; ++c) {
            const Vector d = q - means[static_cast<std::size_t>(c)];
            const double md = d.dot(inverse[static_cast<std::size_t>(c)] * d);
            if (best < 0 || md < bd) best = c, bd = md;
        }
        ++seen;
        ++spread[best];
        agree += cl.label == best;
    }
    if (seen != 50 || agree != seen) fail("assign_labels differs from brute-force scan");
    return {ok && spread.size() == 3,
            fmt("%zu/%zu cells match the scan (%zu classes hit); lambda in [%.3f, %.3f]; min eigenvalue %.2e; "
                "identity case max |diff| %.1e%s",
                agree, seen, spread.size(), lambda_min, lambda_max, eig_min, euclid,
                ok ? "" : ("; " + why).c_str())};
}

// 5 ------------------------------------------------------------------------

Outcome lpips_cosine_suite() {
    const auto& toy = plain_toy();
    VitFeatureExtractor ex(toy.model);
    Rng rng(51);
    std::normal_distribution<double> g(0.0, 1.0);
    double self = 0.0, asym = 0.0, reduction = 0.0, ortho = 0.0, anti = 0.0;
    bool in_range = true;
    for (int t = 0; t < 10; ++t) {
        const auto& x = toy.ds.patches[rng() % toy.ds.size()].image;
        const auto& y = toy.ds.patches[rng() % toy.ds.size()].image;
        self = std::max(self, std::abs(lpips(x, x, ex)));
        asym = std::max(asym, std::abs(lpips(x, y, ex) - lpips(y, x, ex)));
    }
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index positions = 1 + static_cast<Eigen::Index>(rng() % 9), channels = 2 + static_cast<Eigen::Index>(rng() % 30);
        FeatureSet a, b;
        a.layers = {RowMatrix(positions, channels)};
        b.layers = {RowMatrix(positions, channels)};
        for (Eigen::Index k = 0; k < a.layers[0].size(); ++k) a.layers[0].data()[k] = g(rng), b.layers[0].data()[k] = g(rng);
        double direct = 0.0;
        for (Eigen::Index p = 0; p < positions; ++p)
            for (Eigen::Index ch = 0; ch < channels; ++ch) {
                const double d = a.layers[0](p, ch) / a.layers[0].row(p).norm() - b.layers[0](p, ch) / b.layers[0].row(p).norm();
                direct += d * d;
            }
        reduction = std::max(reduction, std::abs(lpips(a, b) - direct / double(positions)));
    }
    for (int t = 0; t < 50; ++t) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 20);
        Vector u(d), v(d);
        for (auto& e : u) e = g(rng);
        for (auto& e : v) e = g(rng);
        const double cd = cosine_distance(u, v);
        in_range = in_range && cd >= 0.0 && cd <= 2.0;
        const Vector w = v - u * (u.dot(v) / u.squaredNorm());
        ortho = std::max(ortho, std::abs(cosine_distance(u, w) - 1.0));
        anti = std::max(anti, std::abs(cosine_distance(u, -3.0 * u) - 2.0));
    }
    const bool ok = self == 0.0 && asym <= 1e-12 && reduction <= 1e-6 && in_range && ortho <= 1e-12 && anti <= 1e-12;
    return {ok, fmt("self %.1e, asymmetry %.1e, reduction %.1e, cosine in [0,2]: %s, orthogonal %.1e, antiparallel %.1e",
                    self, asym, reduction, in_range ? "yes" : "no", ortho, anti)};
}

// 6 ------------------------------------------------------------------------

Outcome class_visualization_check() {
    const auto& toy = plain_toy();
    const Model& m = *toy.model;
    VisConfig vc;
    vc.steps = 1024;
    std::size_t hits = 0;
    std::string per_class;
    for (int c = 0; c < m.num_classes(); ++c) {
        vc.seed = derive_seed(5, static_cast<std::uint64_t>(c));
        const auto img = quantized(class_visualization(m, c, vc).image);
        const int top = argmax(m.logits(normalize(img)));
        hits += top == c;
        per_class += " " + m.classes().code(c) + "->" + m.classes().code(top);
    }
    return {toy.val_accuracy >= 0.95 && hits >= 4,
            fmt("held-out accuracy %.3f; %zu/%d self-classified at 1024 steps:%s", toy.val_accuracy, hits,
                m.num_classes(), per_class.c_str())};
}

// 7 ------------------------------------------------------------------------

Outcome inversion_quality() {
    const auto& toy = plain_toy();
    AtlasConfig ac;
    ac.seed = 3;
    auto atlas = build_atlas(*toy.model, toy.ds, ac);
    VisConfig vc;
    vc.seed = 17;
    const auto summary = synthesize_atlas(atlas, *toy.model, vc);
    std::size_t good = 0;
    double worst = 0.0;
    for (const auto& c : atlas.cells) {
        if (c.empty()) continue;
        const double ratio = c.inversion_loss / c.initial_loss;
        worst = std::max(worst, ratio);
        good += ratio <= 0.1;
    }
    const double share = static_cast<double>(good) / static_cast<double>(atlas.non_empty());
    return {share >= 0.9 && summary.failed == 0,
            fmt("layer %d, %zu steps: %zu/%zu non-empty cells at <= 10%% of initial loss (worst ratio %.4f)",
                atlas.layer, vc.steps, good, atlas.non_empty(), worst)};
}

// 8 ------------------------------------------------------------------------

double kappa_vs_gt(const LabelMap& m, const LabelMap& gt, std::size_t classes) {
    std::vector<int> a, b;
    for (const auto& c : gt.cells) {
        const auto* x = m.find(c.i, c.j);
        a.push_back(x && x->label ? *x->label : kMissingLabel);
        b.push_back(*c.label);
    }
    return cohens_kappa(a, b, classes).value;
}

Outcome granularity_trend() {
    const std::uint64_t seed = 1;
    PretrainConfig pc;
    pc.epochs = 15;
    pc.seed = seed;
    const auto backbone =
        pretrain_backbone(toy_spec(), make_texture_dataset(textures::coarse3(), {60, 32, 8, 99}), pc).backbone;
    const std::vector<LabelMethod> methods{LabelMethod::LPIPS, LabelMethod::Cosine, LabelMethod::Mahalanobis};
    std::map<std::string, std::vector<double>> kappa;
    std::string attribution;
    for (const std::string name : {"coarse", "fine"}) {
        const auto tex = name == "coarse" ? textures::coarse3() : textures::fine6();
        const auto ds = make_texture_dataset(tex, {40, 32, 8, 7});
        const auto folds = stratified_group_kfold(ds, 5, seed);
        auto m = std::make_shared<Model>(backbone, LinearHead::init(static_cast<int>(tex.size()), 32, 2), ds.class_map);
        TrainConfig tc;
        tc.seed = seed;
        m->set_head(train_linear_head(*m, subset(ds, folds.complement(0)), subset(ds, folds.members(0)), tc).head);
        AtlasConfig ac;
        ac.seed = seed;
        auto atlas = build_atlas(*m, ds, ac);
        VisConfig vc;
        vc.steps = 256;
        vc.seed = seed;
        synthesize_atlas(atlas, *m, vc);
        VitFeatureExtractor ex(m);
        const auto refs = build_reference_sets(ds, ex, 32, seed);
        const auto gt = majority_gt_labels(atlas);
        for (auto method : methods)
            kappa[name].push_back(kappa_vs_gt(assign_labels(atlas, method, Strategy::NN, &refs, &ex), gt, tex.size()));
        attribution += fmt(" %s %.2f", name.c_str(),
                           kappa_vs_gt(assign_labels(atlas, LabelMethod::Attribution, Strategy::NN), gt, tex.size()));
    }
    int higher = 0;
    std::string detail;
    for (std::size_t k = 0; k < methods.size(); ++k) {
        higher += kappa["coarse"][k] > kappa["fine"][k];
        detail += fmt("%s %.2f>%.2f; ", method_id(methods[k], Strategy::NN).c_str(), kappa["coarse"][k], kappa["fine"][k]);
    }
    return {higher >= 2, detail + fmt("%d/3 NN methods higher on coarse (Attribution_NN:%s)", higher, attribution.c_str())};
}

// 9 ------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = detail::read_text(e.path());
    return out;
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "cvatlas_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string yaml =
        "seed: 12\n"
        "output_dir: out\n"
        "dataset:\n  synthetic: {preset: five, per_class: 30}\n"
        "cv:\n  steps: 256\n"
        "atlas:\n  steps: 256\n";
    std::vector<std::map<std::string, std::string>> runs;
    for (const std::string name : {"a", "b"}) {
        auto cfg = parse_run_config(yaml, root, "run.yaml");
        cfg.output_dir = root / name;
        train_stage(cfg);
        capture_stage(cfg);
        cv_stage(cfg);
        atlas_stage(cfg);
        auto files = tree_bytes(layout(cfg).cv_dir());
        for (auto& [k, v] : tree_bytes(layout(cfg).atlas_dir())) files["atlas/" + k] = std::move(v);
        runs.push_back(std::move(files));
    }
    std::size_t differing = 0;
    for (const auto& [k, v] : runs[0])
        differing += !runs[1].count(k) || runs[1].at(k) != v;
    const bool artifacts = runs[0].size() == runs[1].size() && differing == 0 && !runs[0].empty();

    const auto ds = make_texture_dataset(textures::five_class(), {40, 32, 8, 7});
    const bool folds = stratified_group_kfold(ds, 5, 8).fold == stratified_group_kfold(ds, 5, 8).fold;
    const auto m = oracle::random_matrix(9, 60, 2, 4, 0.05, 0.05);
    const auto a = m.column(0), b = m.column(1);
    const auto c1 = bootstrap_ci(a, b, 4, kappa_statistic, 300, 21);
    const auto c2 = bootstrap_ci(a, b, 4, kappa_statistic, 300, 21);
    const bool boot = c1.iterations == 300 && c1.lo == c2.lo && c1.hi == c2.hi && c1.point == c2.point &&
                      std::isfinite(c1.lo) && std::isfinite(c1.hi);
    fs::remove_all(root);
    return {artifacts && folds && boot,
            fmt("%zu cv/atlas files, %zu differ; folds reproduce: %s; 300-iteration CI [%.4f, %.4f] reproduces: %s",
                runs[0].size(), differing, folds ? "yes" : "no", c1.lo, c1.hi, boot ? "yes" : "no")};
}

// 10 -----------------------------------------------------------------------

Outcome layer_sweep() {
    const auto& toy = nuisance_toy();
    const Model& m = *toy.model;
    std::vector<double> purity;
    std::string detail;
    for (int l = 0; l < m.num_layers(); ++l) {
        AtlasConfig ac;
        ac.layer = l;
        ac.seed = 3;
        const auto atlas = build_atlas(m, toy.ds, ac);
        purity.push_back(mean_cell_purity(atlas));
        detail += fmt("L%d %.3f (%zu cells) ", l, purity.back(), atlas.non_empty());
    }
    const int d = m.default_layer();
    return {purity.size() == static_cast<std::size_t>(m.num_layers()) && purity[static_cast<std::size_t>(d)] > purity[0],
            detail + fmt("; default layer %d vs layer 0", d)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"agreement statistics match direct-formula oracles", agreement_oracles},
        {"cell attribution identity", attribution_identity},
        {"gradient checks against central differences", gradient_checks},
        {"Mahalanobis and Ledoit-Wolf suite", mahalanobis_suite},
        {"LPIPS and cosine suite", lpips_cosine_suite},
        {"class visualizations self-classify", class_visualization_check},
        {"feature inversion quality", inversion_quality},
        {"agreement falls with class granularity", granularity_trend},
        {"stage determinism", determinism},
        {"layer sweep purity", layer_sweep},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("criterion %2zu %s: %s [%.1f s] %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                    secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
