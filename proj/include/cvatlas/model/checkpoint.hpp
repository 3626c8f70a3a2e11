#pragma once

#include "cvatlas/model/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace cvatlas {

inline constexpr char kCheckpointMagic[8] = {'C', 'V', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    std::vector<EpochLog> training_log;
    nlohmann::json metadata = nlohmann::json::object();
};

inline nlohmann::json to_json(const BackboneSpec& s) {
    return {{"num_layers", s.num_layers}, {"token_dim", s.token_dim}, {"patch_size", s.patch_size},
            {"num_heads", s.num_heads},   {"input_size", s.input_size}, {"mlp_ratio", s.mlp_ratio}};
}

inline BackboneSpec backbone_spec_from_json(const nlohmann::json& j) {
    BackboneSpec s;
    s.num_layers = j.at("num_layers").get<int>();
    s.token_dim = j.at("token_dim").get<int>();
    s.patch_size = j.at("patch_size").get<int>();
    s.num_heads = j.at("num_heads").get<int>();
    s.input_size = j.at("input_size").get<int>();
    s.mlp_ratio = j.value("mlp_ratio", 4);
    s.validate();
    return s;
}

inline nlohmann::json to_json(const ClassMap& m) {
    auto arr = nlohmann::json::array();
    for (const auto& e : m.entries()) arr.push_back({{"id", e.id}, {"code", e.code}, {"name", e.name}});
    return arr;
}

inline ClassMap class_map_from_json(const nlohmann::json& j) {
    std::vector<ClassEntry> entries;
    for (const auto& e : j) entries.push_back({e.at("id").get<int>(), e.at("code").get<std::string>(), e.value("name", "")});
    return ClassMap(std::move(entries));
}

namespace detail {

template <typename Dense>
void write_array(std::ostream& out, const Dense& m) {
    const auto n = static_cast<std::uint64_t>(m.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(n * sizeof(Scalar)));
}

template <typename Dense>
void read_array(std::istream& in, Dense& m) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n != static_cast<std::uint64_t>(m.size())) throw std::runtime_error("checkpoint: array size mismatch");
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(Scalar)));
    if (!in) throw std::runtime_error("checkpoint: truncated array");
}

}  // namespace detail

/// Binary container: magic, version, JSON header, then raw little-endian
/// doubles for every backbone parameter and the head. Round trips bit-exact.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["backbone"] = to_json(ck.model.spec());
    header["classes"] = to_json(ck.model.classes());
    header["inference_only"] = ck.model.inference_only();
    header["capture"] = "cls row of each block output, after the block's closing LayerNorm";
    header["metadata"] = ck.metadata;
    auto log = nlohmann::json::array();
    for (const auto& e : ck.training_log)
        log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}});
    header["training_log"] = log;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    BackboneWeights::visit(ck.model.backbone().weights(), [&](const auto& m) { detail::write_array(out, m); });
    detail::write_array(out, ck.model.head().weight);
    detail::write_array(out, ck.model.head().bias);
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header");
    const auto header = nlohmann::json::parse(text);

    const auto spec = backbone_spec_from_json(header.at("backbone"));
    const auto classes = class_map_from_json(header.at("classes"));
    auto weights = BackboneWeights::zeros_like(spec);
    BackboneWeights::visit(weights, [&](auto& m) { detail::read_array(in, m); });
    LinearHead head{RowMatrix(static_cast<Eigen::Index>(classes.size()), spec.token_dim),
                    Vector(static_cast<Eigen::Index>(classes.size()))};
    detail::read_array(in, head.weight);
    detail::read_array(in, head.bias);

    Checkpoint ck{Model(Backbone(spec, std::move(weights)), std::move(head), classes), {}, header.value("metadata", nlohmann::json::object())};
    ck.model.set_inference_only(header.value("inference_only", false));
    for (const auto& e : header.at("training_log"))
        ck.training_log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(),
                                   e.at("val_accuracy").get<double>()});
    return ck;
}

}  // namespace cvatlas
