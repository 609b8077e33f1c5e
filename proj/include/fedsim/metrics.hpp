#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/model.hpp"

namespace fedsim {

// Model-quality summary for one evaluation set. auc is NaN when undefined
// (fewer than two classes present). per_class_auc is populated only for
// multi-class problems; an absent entry marks a class that was missing from
// the labels (or had no complement).
struct EvalReport {
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::optional<std::vector<std::optional<double>>> per_class_auc;
    std::size_t n_samples = 0;
    double accuracy = 0.0;
};

// Mann-Whitney AUC with average ranks, so ties count one half. O(n log n).
inline double binary_auc(std::span<const double> scores, std::span<const std::size_t> labels) {
    if (scores.size() != labels.size())
        throw ShapeError("binary_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(scores[i]))
            throw NumericError("binary_auc: non-finite score at index " + std::to_string(i));
        if (labels[i] > 1)
            throw ValidationError("binary_auc: labels must be 0 or 1");
        n_pos += labels[i];
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("binary_auc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // 1-based average
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct MulticlassAuc {
    double macro = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::optional<double>> per_class;
};

// One-vs-rest AUC per class from that class's probability column; macro is
// the unweighted mean over classes that are actually present in the labels
// (and have a non-empty complement).
inline MulticlassAuc multiclass_auc(const Matrix& probabilities,
                                    std::span<const std::size_t> labels) {
    if (probabilities.rows() != labels.size())
        throw ShapeError("multiclass_auc: " + std::to_string(probabilities.rows()) +
                         " rows vs " + std::to_string(labels.size()) + " labels");
    const std::size_t n_classes = probabilities.cols();
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t c : labels) {
        if (c >= n_classes) throw ValidationError("multiclass_auc: label out of range");
        counts[c]++;
    }

    const auto present = static_cast<std::size_t>(
        std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
    if (present < 2)
        throw ValidationError("multiclass_auc: need at least 2 classes present");

    MulticlassAuc out;
    out.per_class.assign(n_classes, std::nullopt);
    double sum = 0.0;
    std::size_t defined = 0;
    std::vector<double> scores(labels.size());
    std::vector<std::size_t> ovr(labels.size());
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (counts[c] == 0) continue; // absent class: excluded, flagged undefined
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores[i] = probabilities(i, c);
            ovr[i] = labels[i] == c ? 1 : 0;
        }
        const double auc = binary_auc(scores, ovr);
        out.per_class[c] = auc;
        sum += auc;
        defined++;
    }
    out.macro = sum / static_cast<double>(defined);
    return out;
}

// Sample-count-weighted mean of each scalar metric. Reports whose AUC is
// undefined (NaN) are excluded from the AUC average only.
inline EvalReport aggregate_client_metrics(std::span<const EvalReport> reports,
                                           std::span<const std::size_t> weights) {
    if (reports.empty()) throw ValidationError("aggregate_client_metrics: empty report list");
    if (reports.size() != weights.size())
        throw ShapeError("aggregate_client_metrics: " + std::to_string(reports.size()) +
                         " reports vs " + std::to_string(weights.size()) + " weights");
    double total = 0.0;
    for (std::size_t w : weights) total += static_cast<double>(w);
    if (total <= 0.0) throw DomainError("aggregate_client_metrics: zero total weight");

    EvalReport out;
    out.n_samples = 0;
    double auc_sum = 0.0, auc_weight = 0.0, acc_sum = 0.0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const double w = static_cast<double>(weights[i]);
        out.n_samples += weights[i];
        acc_sum += w * reports[i].accuracy;
        if (std::isfinite(reports[i].auc)) {
            auc_sum += w * reports[i].auc;
            auc_weight += w;
        }
    }
    out.accuracy = acc_sum / total;
    if (auc_weight > 0.0) out.auc = auc_sum / auc_weight;
    return out;
}

// Absolute quality gap between a federated model and the centralized
// baseline evaluated on comparable data.
inline double delta_accuracy_loss(const EvalReport& fed, const EvalReport& central) {
    return std::abs(fed.auc - central.auc);
}

// Evaluate a model on a labeled set: accuracy by argmax, AUC binary or
// macro one-vs-rest depending on class count. Forward runs in eval mode in
// fixed-size chunks.
inline EvalReport evaluate(const ModelSpec& spec, const ParamVector& params, const Matrix& x,
                           const std::vector<std::size_t>& labels) {
    EvalReport report;
    report.n_samples = x.rows();
    if (x.rows() == 0) return report;

    Matrix probs(x.rows(), spec.n_classes);
    constexpr std::size_t kChunk = 1024;
    for (std::size_t start = 0; start < x.rows(); start += kChunk) {
        const std::size_t count = std::min(kChunk, x.rows() - start);
        Matrix part(count, x.cols());
        for (std::size_t r = 0; r < count; ++r) {
            auto src = x.row(start + r);
            std::copy(src.begin(), src.end(), part.row(r).begin());
        }
        Matrix out = predict_proba(spec, params, part);
        for (std::size_t r = 0; r < count; ++r) {
            auto src = out.row(r);
            std::copy(src.begin(), src.end(), probs.row(start + r).begin());
        }
    }

    std::size_t correct = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = probs.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        correct += best == labels[r] ? 1 : 0;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows());

    std::vector<std::size_t> counts(spec.n_classes, 0);
    for (std::size_t c : labels) counts[c]++;
    const std::size_t present =
        spec.n_classes - static_cast<std::size_t>(std::count(counts.begin(), counts.end(), 0u));
    if (present < 2) return report; // AUC undefined, left NaN

    if (spec.n_classes == 2) {
        std::vector<double> scores(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) scores[r] = probs(r, 1);
        report.auc = binary_auc(scores, labels);
    } else {
        auto mc = multiclass_auc(probs, labels);
        report.auc = mc.macro;
        report.per_class_auc = std::move(mc.per_class);
    }
    return report;
}

} // namespace fedsim
