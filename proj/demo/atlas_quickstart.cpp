// Library walk-through: synthetic textures, toy backbone, linear head, a 6x6
// atlas with inverted cell images and two surrogate label maps.

#include "cvatlas/atlas/io.hpp"
#include "cvatlas/data/folds.hpp"
#include "cvatlas/data/synthetic.hpp"
#include "cvatlas/model/pretrain.hpp"
#include "cvatlas/surrogate/labels.hpp"

#include <iostream>

using namespace cvatlas;

int main(int argc, char** argv) {
    const std::filesystem::path out = argc > 1 ? argv[1] : "atlas_quickstart_out";
    spdlog::set_level(spdlog::level::warn);

    const auto ds = make_texture_dataset(textures::five_class(), {40, 32, 8, 7});
    BackboneSpec spec{4, 32, 8, 4, 32, 2};
    PretrainConfig pc;
    pc.epochs = 10;
    const auto proxy = make_texture_dataset(textures::five_class(), {40, 32, 8, 99});
    auto model = std::make_shared<Model>(pretrain_backbone(spec, proxy, pc).backbone, LinearHead::init(5, 32, 1),
                                         ds.class_map);

    const auto folds = stratified_group_kfold(ds, 5, 0);
    const auto val = subset(ds, folds.members(0));
    model->set_head(train_linear_head(*model, subset(ds, folds.complement(0)), val, {}).head);
    std::cout << "held-out accuracy " << evaluate(*model, val).accuracy << "\n";

    AtlasConfig ac;
    ac.grid = 6;
    auto atlas = build_atlas(*model, ds, ac);
    VisConfig vc;
    vc.steps = 256;
    synthesize_atlas(atlas, *model, vc);
    std::cout << "layer " << atlas.layer << ", " << atlas.non_empty() << " non-empty cells, purity "
              << mean_cell_purity(atlas) << "\n";

    VitFeatureExtractor ex(model);
    const auto refs = build_reference_sets(ds, ex, 16);
    const auto gt = majority_gt_labels(atlas);
    for (auto method : {LabelMethod::LPIPS, LabelMethod::Mahalanobis}) {
        const auto map = assign_labels(atlas, method, Strategy::NN, &refs, &ex);
        std::size_t hits = 0;
        for (const auto& c : map.cells) hits += c.label == gt.find(c.i, c.j)->label;
        std::cout << map.method << ": " << hits << "/" << map.cells.size() << " cells match the majority class\n";
    }
    export_atlas(atlas, out);
    std::cout << "atlas written to " << out.string() << "\n";
}
