#pragma once

#include "cvatlas/atlas/io.hpp"
#include "cvatlas/pipeline/store.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace cvatlas {

/// Fields withheld from blind responses: anything derived from ground truth
/// or from the model's class attributions.
inline const std::vector<std::string>& blind_suppressed_fields() {
    static const std::vector<std::string> fields{"class_histogram", "mean_attribution", "majority_gt", "majority_tie"};
    return fields;
}

/// Atlas id used to tie an annotation store to one atlas export.
inline std::string atlas_id_of(const nlohmann::json& manifest) {
    return manifest.at("checksum").get<std::string>().substr(0, 16);
}

/// "host:port" from CVATLAS_BIND, when set.
inline std::optional<std::pair<std::string, int>> bind_override() {
    const char* v = std::getenv("CVATLAS_BIND");
    if (!v || !*v) return std::nullopt;
    const std::string s(v);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0) throw std::invalid_argument("CVATLAS_BIND must be host:port, got " + s);
    try {
        return std::pair{s.substr(0, colon), std::stoi(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw std::invalid_argument("CVATLAS_BIND has a malformed port: " + s);
    }
}

/// Read/annotate API over one exported atlas. Routes:
///   GET  /api/atlas                     atlas summary and cell list
///   GET  /api/cells/{i}/{j}[?blind=]    cell metadata
///   GET  /api/cells/{i}/{j}/image       generated cell image (PNG)
///   GET  /api/cv                        class visualizations, if present
///   GET  /api/cv/{code}/image           one class visualization (PNG)
///   GET  /api/vocabulary                label palette (codes then ???)
///   GET  /api/progress                  annotated cells per rater
///   POST /api/annotations               {"i","j","rater","label"}
///   GET  /api/annotations[?rater=]      current labels
///   GET  /api/export                    annotation CSV
class AtlasService {
public:
    AtlasService(std::filesystem::path atlas_dir, std::filesystem::path store_file, bool blind_default,
                 std::filesystem::path cv_dir = {})
        : atlas_dir_(std::move(atlas_dir)), cv_dir_(std::move(cv_dir)), blind_default_(blind_default) {
        manifest_ = read_manifest(atlas_dir_);
        atlas_ = import_atlas(atlas_dir_);
        store_ = std::make_unique<AnnotationStore>(std::move(store_file), atlas_id_of(manifest_), atlas_.classes,
                                                   atlas_.grid);
    }

    [[nodiscard]] const Atlas& atlas() const noexcept { return atlas_; }
    [[nodiscard]] AnnotationStore& store() noexcept { return *store_; }

    /// Cell metadata; blind responses omit blind_suppressed_fields().
    [[nodiscard]] nlohmann::json cell_json(int i, int j, bool blind) const {
        const auto& c = atlas_.cell(i, j);
        nlohmann::json out{{"i", c.i},
                           {"j", c.j},
                           {"item_id", cell_item_id(c.i, c.j)},
                           {"n", c.n()},
                           {"image", c.generated_image ? nlohmann::json(image_url(c.i, c.j)) : nlohmann::json(nullptr)},
                           {"initial_loss", detail::loss_json(c.initial_loss)},
                           {"inversion_loss", detail::loss_json(c.inversion_loss)},
                           {"seed", c.seed},
                           {"error", c.error},
                           {"blind", blind}};
        if (!blind) {
            out["class_histogram"] = c.class_histogram;
            out["mean_attribution"] = detail::vec_json(c.mean_attribution);
            out["majority_gt"] = c.majority_gt ? nlohmann::json(atlas_.classes.code(*c.majority_gt)) : nullptr;
            out["majority_tie"] = c.majority_tie;
        }
        return out;
    }

    [[nodiscard]] nlohmann::json atlas_json(bool blind) const {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : atlas_.cells) {
            nlohmann::json cj{{"i", c.i}, {"j", c.j}, {"n", c.n()},
                              {"image", c.generated_image ? nlohmann::json(image_url(c.i, c.j)) : nlohmann::json(nullptr)}};
            if (!blind) cj["majority_gt"] = c.majority_gt ? nlohmann::json(atlas_.classes.code(*c.majority_gt)) : nullptr;
            cells.push_back(std::move(cj));
        }
        return {{"atlas_id", store_->atlas_id()},
                {"grid", atlas_.grid},
                {"layer", atlas_.layer},
                {"classes", to_json(atlas_.classes)},
                {"cell_count", atlas_.cells.size()},
                {"non_empty", atlas_.non_empty()},
                {"config_hash", atlas_.config_hash},
                {"blind", blind},
                {"cells", cells}};
    }

    [[nodiscard]] nlohmann::json vocabulary_json() const {
        return {{"codes", atlas_.classes.codes()},
                {"uncertain", std::string(kUncertainCode)},
                {"vocabulary", store_->vocabulary()},
                {"classes", to_json(atlas_.classes)}};
    }

    [[nodiscard]] nlohmann::json progress_json() const {
        nlohmann::json raters = nlohmann::json::object();
        const auto total = static_cast<std::size_t>(atlas_.grid * atlas_.grid);
        for (const auto& [r, n] : store_->progress())
            raters[r] = {{"annotated", n}, {"remaining", total - n}};
        return {{"grid", atlas_.grid}, {"total_cells", total}, {"non_empty", atlas_.non_empty()}, {"raters", raters}};
    }

    void mount(httplib::Server& srv) {
        srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string msg = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                msg = e.what();
            } catch (...) {
            }
            send(res, 500, {{"error", msg}});
        });
        srv.Get("/api/atlas", [this](const httplib::Request& req, httplib::Response& res) {
            send(res, 200, atlas_json(blind(req)));
        });
        srv.Get(R"(/api/cells/(-?\d+)/(-?\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto [i, j] = coords(req);
            if (!atlas_.contains(i, j)) return not_found(res, i, j);
            send(res, 200, cell_json(i, j, blind(req)));
        });
        srv.Get(R"(/api/cells/(-?\d+)/(-?\d+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto [i, j] = coords(req);
            if (!atlas_.contains(i, j)) return not_found(res, i, j);
            const auto& c = atlas_.cell(i, j);
            if (!c.generated_image) return send(res, 404, {{"error", "cell has no image"}});
            const auto png = encode_png(*c.generated_image);
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
        srv.Get("/api/cv", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& code : atlas_.classes.codes())
                if (!cv_dir_.empty() && std::filesystem::exists(cv_dir_ / ("class_" + code + ".png")))
                    out.push_back({{"class", code}, {"image", "/api/cv/" + code + "/image"}});
            send(res, 200, out);
        });
        srv.Get(R"(/api/cv/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string code = req.matches[1];
            const auto path = cv_dir_ / ("class_" + code + ".png");
            if (cv_dir_.empty() || !atlas_.classes.find(code) || !std::filesystem::exists(path))
                return send(res, 404, {{"error", "no class visualization for '" + code + "'"}});
            res.set_content(detail::read_text(path), "image/png");
        });
        srv.Get("/api/vocabulary", [this](const httplib::Request&, httplib::Response& res) {
            send(res, 200, vocabulary_json());
        });
        srv.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            send(res, 200, progress_json());
        });
        srv.Post("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body;
            int i = 0, j = 0;
            std::string rater, label;
            try {
                body = nlohmann::json::parse(req.body);
                i = body.at("i").get<int>();
                j = body.at("j").get<int>();
                rater = body.at("rater").get<std::string>();
                label = body.at("label").get<std::string>();
            } catch (const std::exception& e) {
                return send(res, 400, {{"error", std::string("expected {i, j, rater, label}: ") + e.what()}});
            }
            try {
                send(res, 200, to_json(store_->submit(i, j, rater, label)));
            } catch (const AnnotationError& e) {
                if (e.kind() == AnnotationError::Kind::UnknownCell) return not_found(res, i, j);
                nlohmann::json err{{"error", e.what()}};
                if (e.kind() == AnnotationError::Kind::BadLabel) err["vocabulary"] = e.vocabulary();
                send(res, 400, err);
            }
        });
        srv.Get("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
            std::optional<std::string> rater;
            if (req.has_param("rater")) rater = req.get_param_value("rater");
            nlohmann::json out = nlohmann::json::array();
            for (const auto& r : store_->current(rater)) out.push_back(to_json(r));
            send(res, 200, out);
        });
        srv.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
            res.set_header("Content-Disposition", "attachment; filename=\"annotations.csv\"");
            res.set_content(store_->export_csv(), "text/csv");
        });
    }

private:
    static void send(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void not_found(httplib::Response& res, int i, int j) {
        send(res, 404, {{"error", "unknown cell (" + std::to_string(i) + "," + std::to_string(j) + ")"}});
    }

    static std::pair<int, int> coords(const httplib::Request& req) {
        try {
            return {std::stoi(req.matches[1]), std::stoi(req.matches[2])};
        } catch (const std::out_of_range&) {
            return {-1, -1};
        }
    }

    [[nodiscard]] bool blind(const httplib::Request& req) const {
        if (!req.has_param("blind")) return blind_default_;
        const auto v = req.get_param_value("blind");
        return !(v == "0" || v == "false" || v == "no");
    }

    static std::string image_url(int i, int j) {
        return "/api/cells/" + std::to_string(i) + "/" + std::to_string(j) + "/image";
    }

    std::filesystem::path atlas_dir_;
    std::filesystem::path cv_dir_;
    bool blind_default_;
    nlohmann::json manifest_;
    Atlas atlas_;
    std::unique_ptr<AnnotationStore> store_;
};

}  // namespace cvatlas
