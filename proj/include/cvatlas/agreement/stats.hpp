#pragma once

#include "cvatlas/agreement/matrix.hpp"
#include "cvatlas/core/rng.hpp"
#include "cvatlas/core/tensor.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvatlas {

/// A chance-corrected coefficient. `degenerate` marks a zero-variance
/// chance term, reported as 1.0.
struct AgreementValue {
    double value = std::numeric_limits<double>::quiet_NaN();
    bool degenerate = false;
    std::size_t used = 0;     // items (or pairs) that entered the statistic
    std::size_t dropped = 0;  // items (or pairs) left out
};

namespace detail {

/// Category index after applying the uncertain mode; -1 means "not usable".
inline int category(int label, std::size_t num_classes, UncertainMode mode) {
    if (label == kMissingLabel) return -1;
    if (label == kUncertainLabel) return mode == UncertainMode::Category ? static_cast<int>(num_classes) : -1;
    return label;
}

}  // namespace detail

/// Fleiss' kappa over items rated by every rater; with UncertainMode::Exclude
/// items containing an uncertain rating are dropped.
inline AgreementValue fleiss_kappa(const AnnotationMatrix& m, UncertainMode mode) {
    if (m.num_raters() < 2) throw std::invalid_argument("fleiss_kappa: at least 2 raters required");
    const std::size_t k = m.classes.size() + 1;
    const auto n = static_cast<double>(m.num_raters());
    std::vector<std::vector<double>> counts;
    AgreementValue out;
    for (const auto& row : m.labels) {
        std::vector<double> c(k, 0.0);
        bool ok = true;
        for (int v : row) {
            const int cat = detail::category(v, m.classes.size(), mode);
            if (cat < 0) {
                ok = false;
                break;
            }
            c[static_cast<std::size_t>(cat)] += 1.0;
        }
        if (ok) counts.push_back(std::move(c));
        else ++out.dropped;
    }
    if (counts.empty()) throw std::invalid_argument("fleiss_kappa: no complete items remain");
    if (out.dropped) spdlog::warn("fleiss_kappa: dropped {} incomplete or excluded items", out.dropped);
    out.used = counts.size();
    const auto items = static_cast<double>(counts.size());
    double pbar = 0.0;
    std::vector<double> pj(k, 0.0);
    for (const auto& c : counts) {
        double sq = 0.0;
        for (std::size_t j = 0; j < k; ++j) sq += c[j] * c[j], pj[j] += c[j];
        pbar += (sq - n) / (n * (n - 1.0));
    }
    pbar /= items;
    double pe = 0.0;
    for (double v : pj) pe += (v / (items * n)) * (v / (items * n));
    if (pe >= 1.0) {
        out.value = 1.0;
        out.degenerate = true;
        return out;
    }
    out.value = (pbar - pe) / (1.0 - pe);
    return out;
}

/// Paired labels retained under the uncertain mode, as category indices.
inline std::pair<std::vector<int>, std::vector<int>> retained_pairs(const std::vector<int>& a, const std::vector<int>& b,
                                                                     std::size_t num_classes, UncertainMode mode) {
    if (a.size() != b.size()) throw std::invalid_argument("paired label vectors differ in length");
    std::pair<std::vector<int>, std::vector<int>> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int x = detail::category(a[i], num_classes, mode), y = detail::category(b[i], num_classes, mode);
        if (x < 0 || y < 0) continue;
        out.first.push_back(x);
        out.second.push_back(y);
    }
    return out;
}

/// Cohen's kappa on already-retained category pairs.
inline AgreementValue cohens_kappa_pairs(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cohens_kappa: length mismatch");
    if (a.empty()) throw std::invalid_argument("cohens_kappa: no retained pairs");
    int k = 0;
    for (std::size_t i = 0; i < a.size(); ++i) k = std::max({k, a[i] + 1, b[i] + 1});
    std::vector<double> pa(static_cast<std::size_t>(k), 0.0), pb(static_cast<std::size_t>(k), 0.0);
    double agree = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[static_cast<std::size_t>(a[i])] += 1.0;
        pb[static_cast<std::size_t>(b[i])] += 1.0;
        if (a[i] == b[i]) agree += 1.0;
    }
    const auto n = static_cast<double>(a.size());
    const double po = agree / n;
    double pe = 0.0;
    for (std::size_t c = 0; c < pa.size(); ++c) pe += (pa[c] / n) * (pb[c] / n);
    AgreementValue out;
    out.used = a.size();
    if (pe >= 1.0) {
        out.value = 1.0;
        out.degenerate = true;
        return out;
    }
    out.value = (po - pe) / (1.0 - pe);
    return out;
}

inline AgreementValue cohens_kappa(const std::vector<int>& a, const std::vector<int>& b, std::size_t num_classes,
                                   UncertainMode mode = UncertainMode::Exclude) {
    const auto [x, y] = retained_pairs(a, b, num_classes, mode);
    auto out = cohens_kappa_pairs(x, y);
    out.dropped = a.size() - x.size();
    return out;
}

inline double percent_agreement_pairs(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty()) throw std::invalid_argument("percent_agreement: no retained pairs");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

/// Krippendorff's alpha (nominal) via the coincidence matrix; units with
/// fewer than two usable values contribute nothing.
inline AgreementValue krippendorff_alpha(const AnnotationMatrix& m, UncertainMode mode) {
    if (m.num_raters() < 2) throw std::invalid_argument("krippendorff_alpha: at least 2 raters required");
    const std::size_t k = m.classes.size() + 1;
    std::vector<std::vector<double>> o(k, std::vector<double>(k, 0.0));
    AgreementValue out;
    for (const auto& row : m.labels) {
        std::vector<int> vals;
        for (int v : row)
            if (const int c = detail::category(v, m.classes.size(), mode); c >= 0) vals.push_back(c);
        if (vals.size() < 2) {
            ++out.dropped;
            continue;
        }
        ++out.used;
        const double w = 1.0 / static_cast<double>(vals.size() - 1);
        for (std::size_t i = 0; i < vals.size(); ++i)
            for (std::size_t j = 0; j < vals.size(); ++j)
                if (i != j) o[static_cast<std::size_t>(vals[i])][static_cast<std::size_t>(vals[j])] += w;
    }
    if (out.used == 0) throw std::invalid_argument("krippendorff_alpha: no pairable values");
    std::vector<double> nc(k, 0.0);
    double n = 0.0, disagree = 0.0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t d = 0; d < k; ++d) {
            nc[c] += o[c][d];
            if (c != d) disagree += o[c][d];
        }
    for (double v : nc) n += v;
    double expected = 0.0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t d = 0; d < k; ++d)
            if (c != d) expected += nc[c] * nc[d];
    if (expected <= 0.0) {
        out.value = 1.0;
        out.degenerate = true;
        return out;
    }
    out.value = 1.0 - (n - 1.0) * disagree / expected;
    return out;
}

/// Resample indices of bootstrap iteration `iteration` over n pairs.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::size_t iteration, std::uint64_t seed) {
    Rng rng(derive_seed(seed, iteration));
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) {
        // 53-bit uniform in [0,1) scaled to n: portable across standard libraries.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
    }
    return idx;
}

/// Linear-interpolation percentile of sorted values, q in [0, 1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BootstrapResult {
    double point = std::numeric_limits<double>::quiet_NaN();
    double lo = std::numeric_limits<double>::quiet_NaN();
    double hi = std::numeric_limits<double>::quiet_NaN();
    std::size_t iterations = 0;
    std::size_t skipped = 0;  // resamples where the statistic was undefined
};

/// Statistic on retained pairs; nullopt marks an undefined value.
using PairStatistic = std::function<std::optional<double>(const std::vector<int>&, const std::vector<int>&)>;

inline std::optional<double> kappa_statistic(const std::vector<int>& a, const std::vector<int>& b) {
    const auto k = cohens_kappa_pairs(a, b);
    if (k.degenerate) return std::nullopt;
    return k.value;
}

inline std::optional<double> agreement_statistic(const std::vector<int>& a, const std::vector<int>& b) {
    return percent_agreement_pairs(a, b);
}

/// Percentile 95% interval over `iterations` paired resamples.
inline BootstrapResult bootstrap_ci(const std::vector<int>& a, const std::vector<int>& b, std::size_t num_classes,
                                    const PairStatistic& statistic, std::size_t iterations = 300,
                                    std::uint64_t seed = 0, UncertainMode mode = UncertainMode::Exclude) {
    const auto [x, y] = retained_pairs(a, b, num_classes, mode);
    if (x.size() < 2) throw std::invalid_argument("bootstrap_ci: at least 2 retained pairs required");
    BootstrapResult r;
    r.iterations = iterations;
    r.point = statistic(x, y).value_or(1.0);
    std::vector<double> values;
    values.reserve(iterations);
    std::vector<int> rx(x.size()), ry(y.size());
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto idx = bootstrap_indices(x.size(), it, seed);
        for (std::size_t k = 0; k < idx.size(); ++k) rx[k] = x[idx[k]], ry[k] = y[idx[k]];
        if (const auto v = statistic(rx, ry)) values.push_back(*v);
        else ++r.skipped;
    }
    if (r.skipped) spdlog::debug("bootstrap_ci: {} of {} resamples undefined", r.skipped, iterations);
    std::sort(values.begin(), values.end());
    r.lo = percentile_sorted(values, 0.025);
    r.hi = percentile_sorted(values, 0.975);
    return r;
}

struct DescriptiveMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> sensitivity;
    std::vector<double> specificity;
    std::vector<std::vector<std::size_t>> confusion;  // [reference][predicted]
    std::size_t used = 0;
    std::size_t dropped = 0;
};

/// Pairs with a missing or uncertain entry are dropped. Per-class rates with
/// an empty denominator are NaN; macro F1 averages the classes that occur.
inline DescriptiveMetrics descriptive_metrics(const std::vector<int>& predicted, const std::vector<int>& reference,
                                              std::size_t num_classes) {
    if (predicted.size() != reference.size()) throw std::invalid_argument("descriptive_metrics: length mismatch");
    DescriptiveMetrics d;
    d.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] < 0 || reference[i] < 0) {
            ++d.dropped;
            continue;
        }
        if (predicted[i] >= static_cast<int>(num_classes) || reference[i] >= static_cast<int>(num_classes))
            throw std::out_of_range("descriptive_metrics: class id out of range");
        ++d.confusion[static_cast<std::size_t>(reference[i])][static_cast<std::size_t>(predicted[i])];
        ++d.used;
    }
    if (d.used == 0) throw std::invalid_argument("descriptive_metrics: no usable pairs");
    const auto n = static_cast<double>(d.used);
    double correct = 0.0, f1_sum = 0.0;
    std::size_t f1_count = 0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t c = 0; c < num_classes; ++c) {
        double tp = static_cast<double>(d.confusion[c][c]), fn = 0.0, fp = 0.0;
        for (std::size_t k = 0; k < num_classes; ++k)
            if (k != c) fn += static_cast<double>(d.confusion[c][k]), fp += static_cast<double>(d.confusion[k][c]);
        const double tn = n - tp - fn - fp;
        correct += tp;
        d.sensitivity.push_back(tp + fn > 0 ? tp / (tp + fn) : nan);
        d.specificity.push_back(tn + fp > 0 ? tn / (tn + fp) : nan);
        if (2 * tp + fp + fn > 0) {
            f1_sum += 2 * tp / (2 * tp + fp + fn);
            ++f1_count;
        }
    }
    d.accuracy = correct / n;
    d.macro_f1 = f1_sum / static_cast<double>(f1_count);
    return d;
}

/// Share of each label (classes, then uncertain last) among non-missing entries.
inline std::vector<double> class_coverage(const std::vector<int>& labels, std::size_t num_classes) {
    std::vector<double> share(num_classes + 1, 0.0);
    double n = 0.0;
    for (int v : labels) {
        const int c = detail::category(v, num_classes, UncertainMode::Category);
        if (c < 0) continue;
        share[static_cast<std::size_t>(c)] += 1.0;
        n += 1.0;
    }
    if (n > 0)
        for (auto& s : share) s /= n;
    return share;
}

struct OverlapFraction {
    std::optional<double> left;   // |a=k and b=k| / |a=k|
    std::optional<double> right;  // |a=k and b=k| / |b=k|
};

/// Per class, over positions where both label vectors are present.
inline std::vector<OverlapFraction> overlap_fractions(const std::vector<int>& a, const std::vector<int>& b,
                                                      std::size_t num_classes) {
    if (a.size() != b.size()) throw std::invalid_argument("overlap_fractions: length mismatch");
    std::vector<double> na(num_classes, 0.0), nb(num_classes, 0.0), both(num_classes, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == kMissingLabel || b[i] == kMissingLabel) continue;
        if (a[i] >= 0) na[static_cast<std::size_t>(a[i])] += 1.0;
        if (b[i] >= 0) nb[static_cast<std::size_t>(b[i])] += 1.0;
        if (a[i] >= 0 && a[i] == b[i]) both[static_cast<std::size_t>(a[i])] += 1.0;
    }
    std::vector<OverlapFraction> out(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (na[c] > 0) out[c].left = both[c] / na[c];
        if (nb[c] > 0) out[c].right = both[c] / nb[c];
    }
    return out;
}

struct PairwiseAgreement {
    std::string rater_a, rater_b;
    AgreementValue kappa;
    BootstrapResult kappa_ci;
    double percent_agreement = 0.0;
    BootstrapResult agreement_ci;
    std::size_t pairs = 0;
};

struct AgreementReport {
    UncertainMode mode = UncertainMode::Exclude;
    std::optional<AgreementValue> fleiss;
    std::optional<AgreementValue> alpha;
    std::vector<PairwiseAgreement> pairwise;
    std::vector<std::string> warnings;
};

inline AgreementReport agreement_report(const AnnotationMatrix& m, UncertainMode mode, std::size_t iterations = 300,
                                        std::uint64_t seed = 0) {
    m.validate();
    AgreementReport r;
    r.mode = mode;
    try {
        r.fleiss = fleiss_kappa(m, mode);
    } catch (const std::invalid_argument& e) {
        r.warnings.emplace_back(std::string("fleiss: ") + e.what());
    }
    try {
        r.alpha = krippendorff_alpha(m, mode);
    } catch (const std::invalid_argument& e) {
        r.warnings.emplace_back(std::string("alpha: ") + e.what());
    }
    for (std::size_t a = 0; a < m.num_raters(); ++a)
        for (std::size_t b = a + 1; b < m.num_raters(); ++b) {
            PairwiseAgreement p{m.raters[a], m.raters[b], {}, {}, 0.0, {}, 0};
            const auto ca = m.column(a), cb = m.column(b);
            const auto [x, y] = retained_pairs(ca, cb, m.classes.size(), mode);
            p.pairs = x.size();
            if (x.size() < 2) {
                r.warnings.push_back("pair " + p.rater_a + "/" + p.rater_b + ": fewer than 2 retained pairs");
                r.pairwise.push_back(p);
                continue;
            }
            p.kappa = cohens_kappa(ca, cb, m.classes.size(), mode);
            p.percent_agreement = percent_agreement_pairs(x, y);
            p.kappa_ci = bootstrap_ci(ca, cb, m.classes.size(), kappa_statistic, iterations, seed, mode);
            p.agreement_ci = bootstrap_ci(ca, cb, m.classes.size(), agreement_statistic, iterations, seed, mode);
            r.pairwise.push_back(p);
        }
    return r;
}

namespace detail {

inline nlohmann::json num_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json value_json(const std::optional<AgreementValue>& v) {
    if (!v) return nullptr;
    return {{"value", num_json(v->value)}, {"degenerate", v->degenerate}, {"used", v->used}, {"dropped", v->dropped}};
}

inline nlohmann::json ci_json(const BootstrapResult& b) {
    return {{"point", num_json(b.point)},
            {"lo", num_json(b.lo)},
            {"hi", num_json(b.hi)},
            {"iterations", b.iterations},
            {"skipped", b.skipped}};
}

}  // namespace detail

inline nlohmann::json to_json(const AgreementReport& r) {
    nlohmann::json pw = nlohmann::json::array();
    for (const auto& p : r.pairwise)
        pw.push_back({{"rater_a", p.rater_a},
                      {"rater_b", p.rater_b},
                      {"pairs", p.pairs},
                      {"cohen_kappa", detail::value_json(p.pairs >= 2 ? std::optional(p.kappa) : std::nullopt)},
                      {"cohen_kappa_ci", detail::ci_json(p.kappa_ci)},
                      {"percent_agreement", detail::num_json(p.pairs >= 2 ? p.percent_agreement : NAN)},
                      {"percent_agreement_ci", detail::ci_json(p.agreement_ci)}});
    return {{"uncertain_mode", to_string(r.mode)},
            {"fleiss_kappa", detail::value_json(r.fleiss)},
            {"krippendorff_alpha", detail::value_json(r.alpha)},
            {"pairwise", pw},
            {"warnings", r.warnings}};
}

}  // namespace cvatlas
