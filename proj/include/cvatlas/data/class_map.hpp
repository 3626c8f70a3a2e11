#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace cvatlas {

/// Annotation code for "uncertain / indecisive". Never a training class.
inline constexpr std::string_view kUncertainCode = "???";

struct ClassEntry {
    int id = 0;
    std::string code;
    std::string name;
    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

/// Ordered class vocabulary. Class ids are the dense indices 0..C-1.
class ClassMap {
public:
    ClassMap() = default;

    explicit ClassMap(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            auto& e = entries_[i];
            if (e.id != static_cast<int>(i))
                throw std::invalid_argument("ClassMap: class ids must be dense and ordered, got " +
                                            std::to_string(e.id) + " at position " + std::to_string(i));
            if (e.code.empty()) throw std::invalid_argument("ClassMap: empty class code");
            if (e.code == kUncertainCode)
                throw std::invalid_argument("ClassMap: the uncertain code is reserved for annotations");
            if (!seen.insert(e.code).second) throw std::invalid_argument("ClassMap: duplicate code " + e.code);
        }
    }

    static ClassMap from_codes(const std::vector<std::string>& codes) {
        std::vector<ClassEntry> entries;
        for (std::size_t i = 0; i < codes.size(); ++i) entries.push_back({static_cast<int>(i), codes[i], codes[i]});
        return ClassMap(std::move(entries));
    }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] const std::vector<ClassEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] const std::string& code(int id) const { return entries_.at(static_cast<std::size_t>(id)).code; }

    [[nodiscard]] std::optional<int> find(std::string_view code) const noexcept {
        for (const auto& e : entries_)
            if (e.code == code) return e.id;
        return std::nullopt;
    }

    [[nodiscard]] std::vector<std::string> codes() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) out.push_back(e.code);
        return out;
    }

    /// Class codes followed by the uncertain code, the annotation vocabulary.
    [[nodiscard]] std::vector<std::string> annotation_vocabulary() const {
        auto out = codes();
        out.emplace_back(kUncertainCode);
        return out;
    }

    friend bool operator==(const ClassMap&, const ClassMap&) = default;

private:
    std::vector<ClassEntry> entries_;
};

namespace class_maps {

inline ClassMap nct9() {
    return ClassMap({{0, "ADI", "Adipose"},
                     {1, "BACK", "Background"},
                     {2, "DEB", "Debris"},
                     {3, "LYM", "Lymphocytes"},
                     {4, "MUC", "Mucus"},
                     {5, "MUS", "Smooth muscle"},
                     {6, "NORM", "Normal colon mucosa"},
                     {7, "STR", "Cancer-associated stroma"},
                     {8, "TUM", "Colorectal adenocarcinoma epithelium"}});
}

inline ClassMap tcga11() {
    return ClassMap({{0, "BRCA", "Breast invasive carcinoma"},
                     {1, "COAD", "Colon adenocarcinoma"},
                     {2, "KIRC", "Kidney renal clear cell carcinoma"},
                     {3, "KIRP", "Kidney renal papillary cell carcinoma"},
                     {4, "LUAD", "Lung adenocarcinoma"},
                     {5, "LUSC", "Lung squamous cell carcinoma"},
                     {6, "DLBCL", "Lymphoid neoplasm diffuse large B-cell lymphoma"},
                     {7, "PRAD", "Prostate adenocarcinoma"},
                     {8, "READ", "Rectum adenocarcinoma"},
                     {9, "SARC", "Sarcoma"},
                     {10, "SKCM", "Skin cutaneous melanoma"}});
}

inline ClassMap subset(const ClassMap& full, const std::vector<std::string>& codes) {
    std::vector<ClassEntry> entries;
    for (const auto& c : codes) {
        auto id = full.find(c);
        if (!id) throw std::invalid_argument("class_maps::subset: unknown code " + c);
        entries.push_back({static_cast<int>(entries.size()), c, full.entries()[static_cast<std::size_t>(*id)].name});
    }
    return ClassMap(std::move(entries));
}

inline ClassMap tcga5() { return subset(tcga11(), {"COAD", "DLBCL", "READ", "SARC", "SKCM"}); }
inline ClassMap tcga8() { return subset(tcga11(), {"BRCA", "COAD", "KIRC", "KIRP", "LUAD", "LUSC", "PRAD", "READ"}); }

/// Resolves a preset name ("nct9", "tcga5", "tcga8", "tcga11").
inline std::optional<ClassMap> preset(std::string_view name) {
    if (name == "nct9") return nct9();
    if (name == "tcga5") return tcga5();
    if (name == "tcga8") return tcga8();
    if (name == "tcga11") return tcga11();
    return std::nullopt;
}

}  // namespace class_maps
}  // namespace cvatlas
