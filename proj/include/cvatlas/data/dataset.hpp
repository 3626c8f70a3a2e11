#pragma once

#include "cvatlas/core/hash.hpp"
#include "cvatlas/core/image_io.hpp"
#include "cvatlas/core/tensor.hpp"
#include "cvatlas/data/class_map.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <regex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

struct LabeledPatch {
    std::string id;
    ImageTensor image;
    int class_id = 0;
    std::string group_id;
};

struct Dataset {
    ClassMap class_map;
    std::vector<LabeledPatch> patches;

    [[nodiscard]] std::size_t size() const noexcept { return patches.size(); }

    [[nodiscard]] std::vector<std::size_t> class_histogram() const {
        std::vector<std::size_t> hist(class_map.size(), 0);
        for (const auto& p : patches) ++hist.at(static_cast<std::size_t>(p.class_id));
        return hist;
    }

    /// Checks LabeledPatch invariants: unit-range pixels, valid class ids, unique ids.
    void validate() const {
        std::set<std::string> ids;
        for (const auto& p : patches) {
            if (p.class_id < 0 || static_cast<std::size_t>(p.class_id) >= class_map.size())
                throw std::invalid_argument("patch " + p.id + ": class id out of range");
            if (!p.image.in_unit_range()) throw std::invalid_argument("patch " + p.id + ": pixels outside [0,1]");
            if (!ids.insert(p.id).second) throw std::invalid_argument("duplicate patch id " + p.id);
        }
    }

    /// Content hash over ids, labels, groups and pixels.
    [[nodiscard]] std::string fingerprint() const {
        Sha256 h;
        for (const auto& c : class_map.codes()) h.update(c).update("\n");
        for (const auto& p : patches) {
            h.update(p.id).update("\t").update(p.group_id).update("\t").update(std::to_string(p.class_id));
            h.update(std::span<const Scalar>(p.image.data()));
        }
        return h.hex();
    }
};

struct LoadReport {
    std::size_t loaded = 0;
    std::size_t skipped_unreadable = 0;
    std::vector<std::string> warnings;
};

/// Group id from a filename stem. `slide__rest` yields `slide`; TCGA-style
/// barcodes yield the patient prefix `TCGA-XX-XXXX`; otherwise the full stem.
inline std::string parse_group_id(const std::string& stem) {
    if (auto pos = stem.find("__"); pos != std::string::npos && pos > 0) return stem.substr(0, pos);
    static const std::regex kTcga(R"(^(TCGA-[A-Za-z0-9]{2}-[A-Za-z0-9]{4}))");
    std::smatch m;
    if (std::regex_search(stem, m, kTcga)) return m[1].str();
    return stem;
}

inline bool is_raster_extension(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".tif" || ext == ".tiff";
}

/// Loads `root/<class_code>/*.{png,jpg,tif}`. Files are visited in sorted
/// order so the resulting patch order is reproducible.
inline Dataset load_image_folder(const std::filesystem::path& root, const ClassMap& class_map,
                                 LoadReport* report = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw std::invalid_argument("load_image_folder: not a directory: " + root.string());

    LoadReport local;
    LoadReport& rep = report ? *report : local;
    Dataset ds{class_map, {}};

    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());

    std::map<std::string, bool> seen_class;
    for (const auto& dir : dirs) {
        const auto code = dir.filename().string();
        auto cls = class_map.find(code);
        if (!cls) throw std::invalid_argument("load_image_folder: unknown class directory '" + dir.string() + "'");
        seen_class[code] = true;

        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && is_raster_extension(entry.path())) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            rep.warnings.push_back("class directory '" + code + "' is empty");
            spdlog::warn("load_image_folder: class directory '{}' is empty", code);
        }
        for (const auto& f : files) {
            auto img = read_image(f);
            if (!img) {
                ++rep.skipped_unreadable;
                rep.warnings.push_back("unreadable image " + f.string());
                spdlog::warn("load_image_folder: skipping unreadable {}", f.string());
                continue;
            }
            const auto stem = f.stem().string();
            ds.patches.push_back({code + "/" + f.filename().string(), std::move(*img), *cls, parse_group_id(stem)});
            ++rep.loaded;
        }
    }
    for (const auto& code : class_map.codes())
        if (!seen_class.count(code)) rep.warnings.push_back("no directory for class '" + code + "'");
    return ds;
}

/// Writes a dataset back out in the folder-per-class layout (8-bit PNG).
inline void write_image_folder(const std::filesystem::path& root, const Dataset& ds) {
    namespace fs = std::filesystem;
    for (const auto& code : ds.class_map.codes()) fs::create_directories(root / code);
    for (const auto& p : ds.patches) {
        auto name = p.id;
        if (auto slash = name.find('/'); slash != std::string::npos) name = name.substr(slash + 1);
        fs::path file = root / ds.class_map.code(p.class_id) / fs::path(name).replace_extension(".png");
        write_png(file, p.image);
    }
}

}  // namespace cvatlas
