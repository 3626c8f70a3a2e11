#pragma once

#include "cvatlas/agreement/matrix.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace cvatlas {

/// Item id of atlas cell (i, j) in annotation exports.
inline std::string cell_item_id(int i, int j) { return "cell_" + std::to_string(i) + "_" + std::to_string(j); }

struct AnnotationRecord {
    std::string atlas_id;
    int i = 0;
    int j = 0;
    std::string rater;
    std::string label;  // class code or ???
    std::uint64_t seq = 0;
    std::int64_t timestamp_ms = 0;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline nlohmann::json to_json(const AnnotationRecord& r) {
    return {{"atlas_id", r.atlas_id}, {"i", r.i},     {"j", r.j},
            {"rater", r.rater},       {"label", r.label}, {"seq", r.seq}, {"timestamp_ms", r.timestamp_ms}};
}

inline AnnotationRecord annotation_record_from_json(const nlohmann::json& j) {
    return {j.at("atlas_id").get<std::string>(), j.at("i").get<int>(),          j.at("j").get<int>(),
            j.at("rater").get<std::string>(),    j.at("label").get<std::string>(), j.at("seq").get<std::uint64_t>(),
            j.at("timestamp_ms").get<std::int64_t>()};
}

/// Rejected write; `vocabulary` is set when the label was unknown.
class AnnotationError : public std::invalid_argument {
public:
    enum class Kind { BadLabel, UnknownCell, BadRater };
    AnnotationError(Kind kind, const std::string& msg, std::vector<std::string> vocabulary = {})
        : std::invalid_argument(msg), kind_(kind), vocabulary_(std::move(vocabulary)) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }

private:
    Kind kind_;
    std::vector<std::string> vocabulary_;
};

/// Append-only annotation log for one atlas. Every accepted write is flushed
/// to the file before it becomes visible; the current state is the last
/// write per (cell, rater) and is rebuilt from the file on open.
class AnnotationStore {
public:
    AnnotationStore(std::filesystem::path file, std::string atlas_id, ClassMap classes, int grid)
        : file_(std::move(file)), atlas_id_(std::move(atlas_id)), classes_(std::move(classes)), grid_(grid) {
        if (grid_ < 1) throw std::invalid_argument("AnnotationStore: grid must be >= 1");
        if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
        replay();
        out_.open(file_, std::ios::app | std::ios::binary);
        if (!out_) throw std::runtime_error("AnnotationStore: cannot open " + file_.string());
    }

    [[nodiscard]] const std::string& atlas_id() const noexcept { return atlas_id_; }
    [[nodiscard]] const ClassMap& classes() const noexcept { return classes_; }
    [[nodiscard]] int grid() const noexcept { return grid_; }
    [[nodiscard]] const std::filesystem::path& file() const noexcept { return file_; }

    /// Validates, appends and applies one write; returns the stored record.
    AnnotationRecord submit(int i, int j, const std::string& rater, const std::string& label) {
        validate(i, j, rater, label);
        std::lock_guard lock(mutex_);
        AnnotationRecord r{atlas_id_, i, j, rater, label, next_seq_,
                           std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count()};
        out_ << to_json(r).dump() << '\n';
        out_.flush();
        if (!out_) throw std::runtime_error("AnnotationStore: write to " + file_.string() + " failed");
        ++next_seq_;
        apply(r);
        return r;
    }

    [[nodiscard]] std::optional<AnnotationRecord> get(int i, int j, const std::string& rater) const {
        std::lock_guard lock(mutex_);
        const auto it = current_.find({i, j, rater});
        if (it == current_.end()) return std::nullopt;
        return it->second;
    }

    /// Current state, ordered by (i, j, rater).
    [[nodiscard]] std::vector<AnnotationRecord> current(const std::optional<std::string>& rater = std::nullopt) const {
        std::lock_guard lock(mutex_);
        std::vector<AnnotationRecord> out;
        for (const auto& [key, r] : current_)
            if (!rater || r.rater == *rater) out.push_back(r);
        return out;
    }

    [[nodiscard]] std::size_t log_size() const {
        std::lock_guard lock(mutex_);
        return next_seq_;
    }

    /// Annotated-cell count per rater.
    [[nodiscard]] std::map<std::string, std::size_t> progress() const {
        std::lock_guard lock(mutex_);
        std::map<std::string, std::size_t> out;
        for (const auto& [key, r] : current_) ++out[r.rater];
        return out;
    }

    /// Items are annotated cells, raters every rater with a write.
    [[nodiscard]] AnnotationMatrix matrix() const {
        const auto records = current();
        std::set<std::string> items, raters;
        for (const auto& r : records) {
            items.insert(cell_item_id(r.i, r.j));
            raters.insert(r.rater);
        }
        AnnotationMatrix m(classes_, {items.begin(), items.end()}, {raters.begin(), raters.end()});
        std::map<std::string, std::size_t> item_index, rater_index;
        for (std::size_t k = 0; k < m.items.size(); ++k) item_index[m.items[k]] = k;
        for (std::size_t k = 0; k < m.raters.size(); ++k) rater_index[m.raters[k]] = k;
        for (const auto& r : records)
            m.labels[item_index.at(cell_item_id(r.i, r.j))][rater_index.at(r.rater)] = m.parse_label(r.label);
        return m;
    }

    [[nodiscard]] std::string export_csv() const { return annotation_csv(matrix()); }

    [[nodiscard]] std::vector<std::string> vocabulary() const { return classes_.annotation_vocabulary(); }

private:
    using Key = std::tuple<int, int, std::string>;

    void validate(int i, int j, const std::string& rater, const std::string& label) const {
        if (i < 0 || j < 0 || i >= grid_ || j >= grid_)
            throw AnnotationError(AnnotationError::Kind::UnknownCell,
                                  "cell (" + std::to_string(i) + "," + std::to_string(j) + ") outside the " +
                                      std::to_string(grid_) + "x" + std::to_string(grid_) + " grid");
        if (rater.empty() || rater.find_first_of(",\n\r\"") != std::string::npos)
            throw AnnotationError(AnnotationError::Kind::BadRater, "rater id must be non-empty without commas or quotes");
        if (label != kUncertainCode && !classes_.find(label))
            throw AnnotationError(AnnotationError::Kind::BadLabel, "label '" + label + "' is not in the vocabulary",
                                  vocabulary());
    }

    void apply(const AnnotationRecord& r) { current_[{r.i, r.j, r.rater}] = r; }

    /// A torn final line (crash mid-append) is dropped; damage elsewhere is an error.
    void replay() {
        std::ifstream in(file_, std::ios::binary);
        if (!in) return;
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) lines.push_back(line);
        for (std::size_t n = 0; n < lines.size(); ++n) {
            AnnotationRecord r;
            try {
                r = annotation_record_from_json(nlohmann::json::parse(lines[n]));
            } catch (const std::exception& e) {
                if (n + 1 == lines.size()) {
                    spdlog::warn("annotation store {}: dropping torn final record", file_.string());
                    truncate_to(n, lines);
                    break;
                }
                throw std::runtime_error("annotation store " + file_.string() + " line " + std::to_string(n + 1) +
                                         ": " + e.what());
            }
            if (r.atlas_id != atlas_id_)
                throw std::runtime_error("annotation store " + file_.string() + " belongs to atlas " + r.atlas_id);
            validate(r.i, r.j, r.rater, r.label);
            apply(r);
            next_seq_ = std::max(next_seq_, r.seq + 1);
        }
    }

    void truncate_to(std::size_t keep, const std::vector<std::string>& lines) {
        std::ofstream out(file_, std::ios::trunc | std::ios::binary);
        for (std::size_t n = 0; n < keep; ++n) out << lines[n] << '\n';
    }

    std::filesystem::path file_;
    std::string atlas_id_;
    ClassMap classes_;
    int grid_;
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::map<Key, AnnotationRecord> current_;
    std::uint64_t next_seq_ = 0;
};

}  // namespace cvatlas
