#pragma once

#include "cvatlas/atlas/atlas.hpp"
#include "cvatlas/core/hash.hpp"
#include "cvatlas/model/checkpoint.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cvatlas {

inline constexpr int kAtlasFormatVersion = 1;
inline constexpr const char* kAtlasFormat = "cvatlas-atlas";

namespace detail {

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json loss_json(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
inline double json_loss(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string cell_image_name(int i, int j) {
    return "cells/cell_" + std::to_string(i) + "_" + std::to_string(j) + ".png";
}

/// Canonical text of a manifest minus its checksum field.
inline std::string canonical_manifest(nlohmann::json m) {
    m.erase("checksum");
    return m.dump(2);
}

}  // namespace detail

/// Writes manifest.json, records.json and cells/cell_<i>_<j>.png under dir.
/// Output bytes depend only on the atlas contents.
inline void export_atlas(const Atlas& atlas, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "cells");

    nlohmann::json records = nlohmann::json::array();
    for (std::size_t r = 0; r < atlas.records.size(); ++r) {
        const auto& rec = atlas.records[r];
        const auto k = static_cast<Eigen::Index>(r);
        records.push_back({{"patch_id", rec.patch_id},
                           {"layer", rec.layer},
                           {"f", detail::vec_json(rec.f)},
                           {"gt_class", rec.gt_class},
                           {"attribution", detail::vec_json(rec.attribution)},
                           {"x", atlas.embedding.coords(k, 0)},
                           {"y", atlas.embedding.coords(k, 1)},
                           {"cell", {atlas.assignment.at(r).i, atlas.assignment.at(r).j}}});
    }
    const std::string records_text = records.dump(1);
    detail::write_text(dir / "records.json", records_text);

    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : atlas.cells) {
        nlohmann::json cj{{"i", c.i},
                          {"j", c.j},
                          {"n", c.n()},
                          {"members", c.members},
                          {"mean_activation", detail::vec_json(c.mean_activation)},
                          {"class_histogram", c.class_histogram},
                          {"mean_attribution", detail::vec_json(c.mean_attribution)},
                          {"majority_gt", c.majority_gt ? nlohmann::json(atlas.classes.code(*c.majority_gt)) : nullptr},
                          {"majority_tie", c.majority_tie},
                          {"initial_loss", detail::loss_json(c.initial_loss)},
                          {"inversion_loss", detail::loss_json(c.inversion_loss)},
                          {"seed", c.seed},
                          {"error", c.error},
                          {"image", nullptr},
                          {"image_sha256", nullptr}};
        if (c.generated_image) {
            const auto name = detail::cell_image_name(c.i, c.j);
            const auto png = encode_png(*c.generated_image);
            std::ofstream out(dir / name, std::ios::binary);
            out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
            if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
            cj["image"] = name;
            cj["image_sha256"] = Sha256{}.update(png.data(), png.size()).hex();
        }
        cells.push_back(std::move(cj));
    }

    nlohmann::json m{{"format", kAtlasFormat},
                     {"format_version", kAtlasFormatVersion},
                     {"grid", atlas.grid},
                     {"layer", atlas.layer},
                     {"classes", to_json(atlas.classes)},
                     {"cell_count", atlas.cells.size()},
                     {"record_count", atlas.records.size()},
                     {"dataset_fingerprint", atlas.dataset_fingerprint},
                     {"model_fingerprint", atlas.model_fingerprint},
                     {"config_hash", atlas.config_hash},
                     {"embedding",
                      {{"reducer", to_string(atlas.embedding.reducer)},
                       {"perplexity", atlas.embedding.perplexity},
                       {"seed", atlas.embedding.seed}}},
                     {"records_file", "records.json"},
                     {"records_sha256", sha256_hex(records_text)},
                     {"cells", std::move(cells)}};
    m["checksum"] = sha256_hex(detail::canonical_manifest(m));
    detail::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) throw std::runtime_error("no atlas manifest at " + path.string());
    auto m = nlohmann::json::parse(detail::read_text(path));
    if (m.value("format", "") != kAtlasFormat) throw std::runtime_error("not an atlas manifest: " + path.string());
    if (m.value("format_version", -1) != kAtlasFormatVersion)
        throw std::runtime_error("unsupported atlas format version " + m["format_version"].dump() + " (expected " +
                                 std::to_string(kAtlasFormatVersion) + ")");
    if (!m.contains("checksum") || m["checksum"] != sha256_hex(detail::canonical_manifest(m)))
        throw std::runtime_error("atlas manifest checksum mismatch: " + path.string());
    return m;
}

inline Atlas import_atlas(const std::filesystem::path& dir) {
    const auto m = read_manifest(dir);
    Atlas a;
    a.grid = m.at("grid").get<int>();
    a.layer = m.at("layer").get<int>();
    a.classes = class_map_from_json(m.at("classes"));
    a.dataset_fingerprint = m.at("dataset_fingerprint").get<std::string>();
    a.model_fingerprint = m.at("model_fingerprint").get<std::string>();
    a.config_hash = m.at("config_hash").get<std::string>();
    a.embedding.reducer = reducer_from_string(m.at("embedding").at("reducer").get<std::string>());
    a.embedding.perplexity = m.at("embedding").at("perplexity").get<double>();
    a.embedding.seed = m.at("embedding").at("seed").get<std::uint64_t>();

    const std::string records_text = detail::read_text(dir / m.at("records_file").get<std::string>());
    if (sha256_hex(records_text) != m.at("records_sha256").get<std::string>())
        throw std::runtime_error("atlas records checksum mismatch");
    const auto records = nlohmann::json::parse(records_text);
    a.embedding.coords.resize(static_cast<Eigen::Index>(records.size()), 2);
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rj = records[r];
        a.records.push_back({rj.at("patch_id").get<std::string>(), rj.at("layer").get<int>(), detail::json_vec(rj.at("f")),
                             rj.at("gt_class").get<int>(), detail::json_vec(rj.at("attribution"))});
        a.embedding.coords(static_cast<Eigen::Index>(r), 0) = rj.at("x").get<double>();
        a.embedding.coords(static_cast<Eigen::Index>(r), 1) = rj.at("y").get<double>();
        a.assignment.push_back({rj.at("cell")[0].get<int>(), rj.at("cell")[1].get<int>()});
    }

    for (const auto& cj : m.at("cells")) {
        AtlasCell c;
        c.i = cj.at("i").get<int>();
        c.j = cj.at("j").get<int>();
        c.members = cj.at("members").get<std::vector<std::size_t>>();
        c.mean_activation = detail::json_vec(cj.at("mean_activation"));
        c.class_histogram = cj.at("class_histogram").get<std::vector<std::size_t>>();
        c.mean_attribution = detail::json_vec(cj.at("mean_attribution"));
        if (!cj.at("majority_gt").is_null()) {
            const auto id = a.classes.find(cj.at("majority_gt").get<std::string>());
            if (!id) throw std::runtime_error("atlas manifest: unknown majority class");
            c.majority_gt = *id;
        }
        c.majority_tie = cj.at("majority_tie").get<bool>();
        c.initial_loss = detail::json_loss(cj.at("initial_loss"));
        c.inversion_loss = detail::json_loss(cj.at("inversion_loss"));
        c.seed = cj.at("seed").get<std::uint64_t>();
        c.error = cj.at("error").get<std::string>();
        if (!cj.at("image").is_null()) {
            const auto path = dir / cj.at("image").get<std::string>();
            if (sha256_file(path.string()) != cj.at("image_sha256").get<std::string>())
                throw std::runtime_error("atlas image checksum mismatch: " + path.string());
            auto img = read_image(path);
            if (!img) throw std::runtime_error("cannot decode atlas image " + path.string());
            c.generated_image = std::move(*img);
        }
        a.cells.push_back(std::move(c));
    }
    if (a.cells.size() != static_cast<std::size_t>(a.grid * a.grid))
        throw std::runtime_error("atlas manifest: expected " + std::to_string(a.grid * a.grid) + " cells");
    return a;
}

}  // namespace cvatlas
