#include "cvatlas/data/augment.hpp"
#include "cvatlas/data/dataset.hpp"
#include "cvatlas/data/folds.hpp"
#include "cvatlas/data/synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace cvatlas;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cvatlas_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ImageTensor solid(std::size_t n, double v) { return ImageTensor(n, n, 3, v); }

Dataset dataset_with_groups(const std::vector<int>& classes, const std::vector<std::string>& groups, int n_classes) {
    std::vector<std::string> codes;
    for (int c = 0; c < n_classes; ++c) codes.push_back("C" + std::to_string(c));
    Dataset ds{ClassMap::from_codes(codes), {}};
    for (std::size_t i = 0; i < classes.size(); ++i)
        ds.patches.push_back({"p" + std::to_string(i), solid(2, 0.5), classes[i], groups[i]});
    return ds;
}

}  // namespace

TEST(LoadImageFolder, ThreeClassesTwoImagesEach) {
    auto root = fresh_dir("load3");
    auto cm = ClassMap::from_codes({"A", "B", "C"});
    for (const auto& code : cm.codes()) {
        fs::create_directories(root / code);
        for (int i = 0; i < 2; ++i) write_png(root / code / ("img" + std::to_string(i) + ".png"), solid(4, 0.25));
    }
    LoadReport rep;
    auto ds = load_image_folder(root, cm, &rep);
    EXPECT_EQ(ds.size(), 6u);
    EXPECT_EQ(ds.class_histogram(), (std::vector<std::size_t>{2, 2, 2}));
    EXPECT_EQ(rep.loaded, 6u);
    EXPECT_NO_THROW(ds.validate());
    // 8-bit sources divided by 255.
    EXPECT_NEAR(ds.patches[0].image(0, 0, 0), 64.0 / 255.0, 1e-12);
}

TEST(LoadImageFolder, EmptyClassDirectoryWarns) {
    auto root = fresh_dir("empty");
    auto cm = ClassMap::from_codes({"A", "B"});
    fs::create_directories(root / "A");
    fs::create_directories(root / "B");
    write_png(root / "A" / "x.png", solid(4, 0.5));
    LoadReport rep;
    auto ds = load_image_folder(root, cm, &rep);
    EXPECT_EQ(ds.class_histogram(), (std::vector<std::size_t>{1, 0}));
    ASSERT_FALSE(rep.warnings.empty());
    EXPECT_NE(rep.warnings.front().find("'B'"), std::string::npos);
}

TEST(LoadImageFolder, UnknownDirectoryIsAnError) {
    auto root = fresh_dir("unknown");
    fs::create_directories(root / "ZZZ");
    try {
        load_image_folder(root, ClassMap::from_codes({"A"}));
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("ZZZ"), std::string::npos);
    }
}

TEST(LoadImageFolder, UnreadableFileSkippedAndCounted) {
    auto root = fresh_dir("unreadable");
    fs::create_directories(root / "A");
    write_png(root / "A" / "good.png", solid(4, 0.5));
    std::ofstream(root / "A" / "bad.png") << "not an image";
    LoadReport rep;
    auto ds = load_image_folder(root, ClassMap::from_codes({"A"}), &rep);
    EXPECT_EQ(ds.size(), 1u);
    EXPECT_EQ(rep.skipped_unreadable, 1u);
}

TEST(LoadImageFolder, NctLayoutGivesNineClasses) {
    auto root = fresh_dir("nct");
    auto cm = class_maps::nct9();
    for (const auto& code : cm.codes()) {
        fs::create_directories(root / code);
        write_png(root / code / (code + "-AAAA.png"), solid(4, 0.1));
    }
    auto ds = load_image_folder(root, cm);
    EXPECT_EQ(ds.class_map.size(), 9u);
    EXPECT_EQ(ds.class_histogram(), std::vector<std::size_t>(9, 1));
    EXPECT_EQ(cm.code(0), "ADI");
    EXPECT_EQ(cm.code(8), "TUM");
}

TEST(ClassMap, RejectsUncertainAndDuplicates) {
    EXPECT_THROW(ClassMap::from_codes({"A", "???"}), std::invalid_argument);
    EXPECT_THROW(ClassMap::from_codes({"A", "A"}), std::invalid_argument);
    EXPECT_EQ(class_maps::tcga11().size(), 11u);
    EXPECT_EQ(class_maps::tcga8().size(), 8u);
    EXPECT_EQ(class_maps::tcga5().size(), 5u);
    EXPECT_EQ(ClassMap::from_codes({"A"}).annotation_vocabulary().back(), "???");
}

TEST(GroupId, ParsesSlidePrefixOrFallsBackToStem) {
    EXPECT_EQ(parse_group_id("slide7__0001"), "slide7");
    EXPECT_EQ(parse_group_id("TCGA-AA-3520-01Z-00-DX1_patch12"), "TCGA-AA-3520");
    EXPECT_EQ(parse_group_id("ADI-AAAWMSFI"), "ADI-AAAWMSFI");
}

TEST(StratifiedGroupKFold, SingletonGroupsBalancePerClass) {
    std::vector<int> classes;
    std::vector<std::string> groups;
    for (int i = 0; i < 53; ++i) {
        classes.push_back((i * 7) % 3);
        groups.push_back("g" + std::to_string(i));
    }
    auto ds = dataset_with_groups(classes, groups, 3);
    auto folds = stratified_group_kfold(ds, 5, 11);
    for (int c = 0; c < 3; ++c) {
        std::vector<int> per_fold(5, 0);
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.patches[i].class_id == c) ++per_fold[static_cast<std::size_t>(folds.fold[i])];
        auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
        EXPECT_LE(*hi - *lo, 1) << "class " << c;
    }
}

TEST(StratifiedGroupKFold, TwoGroupsTwoFolds) {
    auto ds = dataset_with_groups({0, 1, 0, 1}, {"a", "a", "b", "b"}, 2);
    auto folds = stratified_group_kfold(ds, 2, 3);
    EXPECT_EQ(folds.fold[0], folds.fold[1]);
    EXPECT_EQ(folds.fold[2], folds.fold[3]);
    EXPECT_NE(folds.fold[0], folds.fold[2]);
}

TEST(StratifiedGroupKFold, NoGroupSpansFoldsExhaustive) {
    Rng rng(99);
    std::vector<int> classes;
    std::vector<std::string> groups;
    for (int i = 0; i < 100; ++i) {
        classes.push_back(static_cast<int>(rng() % 4));
        groups.push_back("g" + std::to_string(rng() % 10));
    }
    auto ds = dataset_with_groups(classes, groups, 4);
    auto folds = stratified_group_kfold(ds, 5, 42);
    ASSERT_EQ(folds.fold.size(), 100u);
    // Brute force: every pair of patches sharing a group shares a fold.
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_GE(folds.fold[i], 0);
        EXPECT_LT(folds.fold[i], 5);
        for (std::size_t j = i + 1; j < ds.size(); ++j)
            if (ds.patches[i].group_id == ds.patches[j].group_id) EXPECT_EQ(folds.fold[i], folds.fold[j]);
    }
    // Union of folds covers the data exactly once.
    std::size_t total = 0;
    for (int f = 0; f < 5; ++f) total += folds.members(f).size();
    EXPECT_EQ(total, ds.size());
    EXPECT_EQ(stratified_group_kfold(ds, 5, 42), folds);
}

TEST(StratifiedGroupKFold, FewerGroupsThanFoldsIsAnError) {
    auto ds = dataset_with_groups({0, 1, 0}, {"a", "a", "b"}, 2);
    EXPECT_THROW(stratified_group_kfold(ds, 3, 0), std::invalid_argument);
    EXPECT_THROW(stratified_group_kfold(ds, 1, 0), std::invalid_argument);
}

TEST(StratifiedGroupKFold, FoldCsvSchema) {
    auto ds = dataset_with_groups({0, 1}, {"a", "b"}, 2);
    auto folds = stratified_group_kfold(ds, 2, 0);
    auto path = fresh_dir("foldcsv") / "folds.csv";
    write_fold_csv(path.string(), ds, folds);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "patch_id,group_id,class_code,fold");
}

TEST(Augment, DisabledIsIdentity) {
    Rng rng(1);
    auto img = render_texture(textures::five_class()[0], 16, rng);
    EXPECT_EQ(augment(img, AugmentConfig::disabled(), rng), img);
}

TEST(Augment, FlipIsAnInvolution) {
    Rng rng(2);
    auto img = render_texture(textures::five_class()[1], 12, rng);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
    EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
    EXPECT_EQ(rotate90(rotate90(img, 1), 3), img);
}

TEST(Augment, BrightnessOnTwoByTwoByHand) {
    ImageTensor img(2, 2, 3);
    const double px[12] = {0.1, 0.2, 0.3, 0.5, 0.6, 0.7, 0.9, 0.95, 1.0, 0.0, 0.4, 0.8};
    std::copy(px, px + 12, img.data().begin());
    const double f = 1.1;
    auto out = adjust_brightness(img, f);
    // Hand values: clamp(p * 1.1).
    const double expected[12] = {0.11, 0.22, 0.33, 0.55, 0.66, 0.77, 0.99, 1.0, 1.0, 0.0, 0.44, 0.88};
    for (int i = 0; i < 12; ++i) EXPECT_NEAR(out.data()[static_cast<std::size_t>(i)], expected[i], 1e-12);
}

TEST(Augment, OutputInUnitRangeAndCropShape) {
    Rng rng(5);
    AugmentConfig cfg;
    cfg.brightness = cfg.contrast = cfg.saturation = 0.5;
    cfg.crop = 10;
    auto img = render_texture(textures::five_class()[2], 16, rng);
    for (int i = 0; i < 20; ++i) {
        auto out = augment(img, cfg, rng);
        EXPECT_EQ(out.height(), 10u);
        EXPECT_EQ(out.width(), 10u);
        EXPECT_TRUE(out.in_unit_range());
    }
    cfg.crop = 17;
    EXPECT_THROW(augment(img, cfg, rng), std::invalid_argument);
}

TEST(Normalize, ImageNetMeanMapsToZero) {
    ImageTensor img(1, 1, 3);
    img(0, 0, 0) = 0.485;
    img(0, 0, 1) = 0.456;
    img(0, 0, 2) = 0.406;
    auto out = normalize(img, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225});
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(0, 0, c), 0.0, 1e-15);
}

TEST(Normalize, UnitStatsIdentityAndRoundTrip) {
    Rng rng(8);
    auto img = render_texture(textures::five_class()[3], 8, rng);
    EXPECT_EQ(normalize(img, {0, 0, 0}, {1, 1, 1}), img);
    auto back = denormalize(normalize(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 1e-6);
    EXPECT_THROW(normalize(img, {0, 0, 0}, {1, 0, 1}), std::invalid_argument);
}

TEST(Synthetic, DeterministicAndGrouped) {
    SyntheticConfig cfg{6, 16, 3, 77};
    auto a = make_texture_dataset(textures::coarse3(), cfg);
    auto b = make_texture_dataset(textures::coarse3(), cfg);
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_EQ(a.size(), 18u);
    EXPECT_NO_THROW(a.validate());
    std::set<std::string> groups;
    for (const auto& p : a.patches) groups.insert(p.group_id);
    EXPECT_EQ(groups.size(), 9u);
}

TEST(Synthetic, PaletteSwapChangesColoursOnly) {
    SyntheticConfig plain{12, 16, 3, 5};
    SyntheticConfig swapped = plain;
    swapped.palette_swap = 0.5;
    const auto a = make_texture_dataset(textures::five_class(), plain);
    const auto b = make_texture_dataset(textures::five_class(), swapped);
    ASSERT_EQ(a.size(), b.size());
    std::size_t differing = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.patches[k].id, b.patches[k].id);
        EXPECT_EQ(a.patches[k].class_id, b.patches[k].class_id);
        EXPECT_EQ(a.patches[k].group_id, b.patches[k].group_id);
        differing += !(a.patches[k].image == b.patches[k].image);
    }
    EXPECT_GT(differing, 0u);
    EXPECT_NO_THROW(b.validate());
    SyntheticConfig zero = plain;
    zero.palette_swap = 0.0;
    EXPECT_EQ(make_texture_dataset(textures::five_class(), zero).fingerprint(), a.fingerprint());
}
