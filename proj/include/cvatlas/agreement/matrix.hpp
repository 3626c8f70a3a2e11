#pragma once

#include "cvatlas/data/class_map.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// Label codes inside an AnnotationMatrix: class ids are >= 0.
inline constexpr int kMissingLabel = -1;
inline constexpr int kUncertainLabel = -2;

enum class UncertainMode { Exclude, Category };

inline std::string to_string(UncertainMode m) { return m == UncertainMode::Exclude ? "exclude" : "category"; }

inline UncertainMode uncertain_mode_from_string(const std::string& s) {
    if (s == "exclude") return UncertainMode::Exclude;
    if (s == "category") return UncertainMode::Category;
    throw std::invalid_argument("unknown uncertain mode '" + s + "' (expected exclude or category)");
}

/// Items x raters grid of nominal labels.
struct AnnotationMatrix {
    ClassMap classes;
    std::vector<std::string> items;
    std::vector<std::string> raters;
    std::vector<std::vector<int>> labels;  // [item][rater]

    AnnotationMatrix() = default;
    AnnotationMatrix(ClassMap c, std::vector<std::string> item_ids, std::vector<std::string> rater_ids)
        : classes(std::move(c)), items(std::move(item_ids)), raters(std::move(rater_ids)),
          labels(items.size(), std::vector<int>(raters.size(), kMissingLabel)) {}

    [[nodiscard]] std::size_t num_items() const noexcept { return items.size(); }
    [[nodiscard]] std::size_t num_raters() const noexcept { return raters.size(); }

    [[nodiscard]] std::vector<int> column(std::size_t rater) const {
        std::vector<int> out;
        out.reserve(labels.size());
        for (const auto& row : labels) out.push_back(row.at(rater));
        return out;
    }

    [[nodiscard]] std::size_t rater_index(const std::string& id) const {
        const auto it = std::find(raters.begin(), raters.end(), id);
        if (it == raters.end()) throw std::out_of_range("unknown rater " + id);
        return static_cast<std::size_t>(it - raters.begin());
    }

    [[nodiscard]] std::string label_code(int label) const {
        if (label == kUncertainLabel) return std::string(kUncertainCode);
        if (label == kMissingLabel) return {};
        return classes.code(label);
    }

    [[nodiscard]] int parse_label(std::string_view code) const {
        if (code == kUncertainCode) return kUncertainLabel;
        const auto id = classes.find(code);
        if (!id) throw std::invalid_argument("label '" + std::string(code) + "' is not in the vocabulary");
        return *id;
    }

    /// Every entry is a class id, uncertain or missing.
    void validate() const {
        if (labels.size() != items.size()) throw std::invalid_argument("AnnotationMatrix: row count mismatch");
        for (const auto& row : labels) {
            if (row.size() != raters.size()) throw std::invalid_argument("AnnotationMatrix: column count mismatch");
            for (int v : row)
                if (v != kMissingLabel && v != kUncertainLabel && (v < 0 || v >= static_cast<int>(classes.size())))
                    throw std::invalid_argument("AnnotationMatrix: label code out of range");
        }
    }
};

inline constexpr const char* kAnnotationHeader = "item_id,rater_id,label";

/// Parses `item_id,rater_id,label` rows. Items and raters are sorted; absent
/// rows are missing; a repeated (item, rater) pair is an error.
inline AnnotationMatrix read_annotation_csv(std::istream& in, const ClassMap& classes) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("annotation CSV: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kAnnotationHeader)
        throw std::runtime_error("annotation CSV: expected header '" + std::string(kAnnotationHeader) + "'");
    struct Row {
        std::string item, rater, label;
        std::size_t line;
    };
    std::vector<Row> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.find(',', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos || line.find(',', b + 1) != std::string::npos)
            throw std::runtime_error("annotation CSV line " + std::to_string(lineno) + ": expected 3 fields");
        rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1), lineno});
    }
    std::vector<std::string> items, raters;
    for (const auto& r : rows) items.push_back(r.item), raters.push_back(r.rater);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    std::sort(raters.begin(), raters.end());
    raters.erase(std::unique(raters.begin(), raters.end()), raters.end());
    AnnotationMatrix m(classes, items, raters);
    for (const auto& r : rows) {
        const auto i = static_cast<std::size_t>(std::lower_bound(items.begin(), items.end(), r.item) - items.begin());
        const auto j = static_cast<std::size_t>(std::lower_bound(raters.begin(), raters.end(), r.rater) - raters.begin());
        if (m.labels[i][j] != kMissingLabel)
            throw std::runtime_error("annotation CSV line " + std::to_string(r.line) + ": duplicate rating for (" +
                                     r.item + ", " + r.rater + ")");
        try {
            m.labels[i][j] = m.parse_label(r.label);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("annotation CSV line " + std::to_string(r.line) + ": " + e.what());
        }
    }
    return m;
}

inline AnnotationMatrix read_annotation_csv(const std::string& path, const ClassMap& classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return read_annotation_csv(in, classes);
}

/// Rows sorted by (item, rater); missing entries are omitted.
inline std::string annotation_csv(const AnnotationMatrix& m) {
    std::vector<std::size_t> io(m.num_items()), ro(m.num_raters());
    for (std::size_t k = 0; k < io.size(); ++k) io[k] = k;
    for (std::size_t k = 0; k < ro.size(); ++k) ro[k] = k;
    std::sort(io.begin(), io.end(), [&](auto a, auto b) { return m.items[a] < m.items[b]; });
    std::sort(ro.begin(), ro.end(), [&](auto a, auto b) { return m.raters[a] < m.raters[b]; });
    std::ostringstream os;
    os << kAnnotationHeader << "\n";
    for (auto i : io)
        for (auto j : ro)
            if (m.labels[i][j] != kMissingLabel)
                os << m.items[i] << "," << m.raters[j] << "," << m.label_code(m.labels[i][j]) << "\n";
    return os.str();
}

}  // namespace cvatlas
