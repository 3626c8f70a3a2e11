#pragma once

#include "cvatlas/data/synthetic.hpp"
#include "cvatlas/model/classifier.hpp"

#include <random>

namespace cvatlas::testing {

/// Small backbone used across unit tests: 16 px input, 4 px patches.
inline BackboneSpec tiny_spec(int layers = 3) {
    BackboneSpec s;
    s.num_layers = layers;
    s.token_dim = 16;
    s.patch_size = 4;
    s.num_heads = 2;
    s.input_size = 16;
    s.mlp_ratio = 2;
    return s;
}

inline Model tiny_model(int layers = 3, int classes = 3, std::uint64_t seed = 1) {
    const auto spec = tiny_spec(layers);
    std::vector<std::string> codes;
    for (int c = 0; c < classes; ++c) codes.push_back("K" + std::to_string(c));
    return Model(Backbone::random(spec, seed), LinearHead::init(classes, spec.token_dim, seed + 100),
                 ClassMap::from_codes(codes));
}

inline ImageTensor random_image(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(n, n, 3);
    for (auto& v : img.data()) v = u(rng);
    return img;
}

inline double relative_error(const Vector& a, const Vector& b) {
    const double denom = std::max(b.norm(), 1e-12);
    return (a - b).norm() / denom;
}

}  // namespace cvatlas::testing
