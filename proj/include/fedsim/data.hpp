#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

// Feature matrix plus integer class labels. Ingestion entry points
// (load_csv, synthesize_blobs) guarantee every class is present; derived
// shards (folds, client partitions) may legitimately lack classes, e.g.
// single-class clients under extreme imbalance.
struct Dataset {
    Matrix features;                 // n_samples x n_features
    std::vector<std::size_t> labels; // values in [0, n_classes)
    std::size_t n_classes = 0;

    std::size_t size() const { return features.rows(); }
    std::size_t n_features() const { return features.cols(); }

    void validate_structure() const {
        if (labels.size() != features.rows())
            throw ShapeError("labels length " + std::to_string(labels.size()) +
                             " != sample count " + std::to_string(features.rows()));
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= n_classes)
                throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                                      std::to_string(i) + " out of range for " +
                                      std::to_string(n_classes) + " classes");
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(n_classes, 0);
        for (std::size_t c : labels) counts[c]++;
        return counts;
    }

    // Indices of each class, in row order.
    std::vector<std::vector<std::size_t>> indices_by_class() const {
        std::vector<std::vector<std::size_t>> by_class(n_classes);
        for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
        return by_class;
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.n_classes = n_classes;
        out.features = Matrix(idx.size(), features.cols());
        out.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto src = features.row(idx[r]);
            std::copy(src.begin(), src.end(), out.features.row(r).begin());
            out.labels[r] = labels[idx[r]];
        }
        return out;
    }
};

struct SplitSpec {
    double train_fraction = 0.8;
    bool stratified = true;
    std::uint64_t seed = 0;
};

// Per-feature affine transform fitted on training data. Zero-variance
// features get scale 0 so they standardize to exactly 0.
struct ScalerParams {
    std::vector<double> mean;
    std::vector<double> inv_std;

    // Variance below this is treated as zero (constant feature).
    static constexpr double kVarianceFloor = 1e-24;

    void apply(Matrix& m) const {
        if (m.cols() != mean.size())
            throw ShapeError("scaler fitted on " + std::to_string(mean.size()) +
                             " features, applied to " + std::to_string(m.cols()));
        for (std::size_t r = 0; r < m.rows(); ++r) {
            auto row = m.row(r);
            for (std::size_t c = 0; c < row.size(); ++c)
                row[c] = (row[c] - mean[c]) * inv_std[c];
        }
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ValidationError("cannot open scaler file for writing: " + path);
        out << "n_features = " << mean.size() << "\n";
        out.precision(17);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            out << "mean." << c << " = " << mean[c] << "\n";
            out << "inv_std." << c << " = " << inv_std[c] << "\n";
        }
    }

    static ScalerParams load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open scaler file: " + path);
        std::string line;
        std::size_t n = 0;
        ScalerParams p;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
            const double value = std::stod(line.substr(eq + 1));
            if (key == "n_features") {
                n = static_cast<std::size_t>(value);
                p.mean.assign(n, 0.0);
                p.inv_std.assign(n, 0.0);
            } else if (key.rfind("mean.", 0) == 0) {
                p.mean.at(std::stoul(key.substr(5))) = value;
            } else if (key.rfind("inv_std.", 0) == 0) {
                p.inv_std.at(std::stoul(key.substr(8))) = value;
            }
        }
        if (p.mean.size() != n) throw ParseError("scaler file truncated: " + path);
        return p;
    }
};

struct LoadedCsv {
    Dataset dataset;
    std::vector<std::string> class_names;   // index -> original label token
    std::vector<std::string> feature_names; // header names, empty if no header
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double value = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end) return std::nullopt;
    return value;
}

} // namespace detail

// Comma-separated, UTF-8, optional single header row, no quoting. Label
// column addressed by header name or 0-based index. Class tokens map to
// indices in first-appearance order; the mapping is returned alongside.
inline LoadedCsv load_csv(const std::string& path, const std::string& label_column,
                          bool has_header) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();

    LoadedCsv out;
    std::size_t first_data_line = 0;
    std::size_t n_cols = 0;
    std::optional<std::size_t> label_idx;

    if (has_header) {
        if (lines.empty()) throw ValidationError("no samples in " + path);
        const auto header = detail::split_fields(lines[0]);
        n_cols = header.size();
        for (std::size_t c = 0; c < header.size(); ++c) {
            out.feature_names.emplace_back(header[c]);
            if (header[c] == label_column) label_idx = c;
        }
        first_data_line = 1;
    }
    if (!label_idx) {
        // Fall back to a numeric column index.
        const auto parsed = detail::parse_double(label_column);
        if (!parsed || *parsed != std::floor(*parsed) || *parsed < 0)
            throw ValidationError("label column '" + label_column + "' not found in " + path);
        label_idx = static_cast<std::size_t>(*parsed);
    }

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;

    for (std::size_t li = first_data_line; li < lines.size(); ++li) {
        if (detail::trim(lines[li]).empty()) continue;
        const auto fields = detail::split_fields(lines[li]);
        const std::size_t line_no = li + 1;
        if (n_cols == 0) n_cols = fields.size();
        if (fields.size() != n_cols)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(n_cols) + " columns, got " +
                             std::to_string(fields.size()));
        if (*label_idx >= n_cols)
            throw ValidationError("label column index " + std::to_string(*label_idx) +
                                  " out of range for " + std::to_string(n_cols) + " columns");
        std::vector<double> row;
        row.reserve(n_cols - 1);
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (c == *label_idx) continue;
            const auto v = detail::parse_double(fields[c]);
            if (!v)
                throw ParseError("line " + std::to_string(line_no) + ", column " +
                                 std::to_string(c + 1) + ": cannot parse '" +
                                 std::string(fields[c]) + "' as a number");
            row.push_back(*v);
        }
        const std::string token(fields[*label_idx]);
        auto it = std::find(class_names.begin(), class_names.end(), token);
        if (it == class_names.end()) {
            class_names.push_back(token);
            labels.push_back(class_names.size() - 1);
        } else {
            labels.push_back(static_cast<std::size_t>(it - class_names.begin()));
        }
        rows.push_back(std::move(row));
    }

    if (rows.empty()) throw ValidationError("no samples in " + path);
    if (class_names.size() < 2)
        throw ValidationError("file " + path + " contains a single class '" + class_names[0] +
                              "'");

    const std::size_t d = rows[0].size();
    Matrix features(rows.size(), d);
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), features.row(r).begin());

    out.dataset = Dataset{std::move(features), std::move(labels), class_names.size()};
    out.dataset.validate_structure();
    out.class_names = std::move(class_names);
    return out;
}

// Class-balanced isotropic Gaussian blobs: class c is centered at
// separation * e_{c mod n_features}, unit within-class variance. Counts are
// n/C each with the remainder going to the lowest class indices; samples are
// emitted grouped by class.
inline Dataset synthesize_blobs(std::size_t n_samples, std::size_t n_features,
                                std::size_t n_classes, double separation, std::uint64_t seed) {
    if (n_features == 0) throw DomainError("synthesize_blobs: n_features must be positive");
    if (n_classes < 2) throw DomainError("synthesize_blobs: need at least 2 classes");
    if (n_samples < n_classes)
        throw DomainError("synthesize_blobs: n_samples must be >= n_classes");
    if (separation < 0) throw DomainError("synthesize_blobs: separation must be >= 0");

    Dataset ds;
    ds.n_classes = n_classes;
    ds.features = Matrix(n_samples, n_features);
    ds.labels.resize(n_samples);

    Rng rng = Rng(seed).split("blobs");
    std::size_t row = 0;
    const std::size_t base = n_samples / n_classes;
    const std::size_t rem = n_samples % n_classes;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t count = base + (c < rem ? 1 : 0);
        const std::size_t axis = c % n_features;
        for (std::size_t i = 0; i < count; ++i, ++row) {
            auto noise = rng.gaussian(n_features, 0.0, 1.0);
            auto dst = ds.features.row(row);
            std::copy(noise.begin(), noise.end(), dst.begin());
            dst[axis] += separation;
            ds.labels[row] = c;
        }
    }
    return ds;
}

struct StandardizeResult {
    Dataset train;
    std::vector<Dataset> others;
    ScalerParams params;
};

// Mean 0 / variance 1 per feature, fitted on `train` only (population
// variance) and applied to every dataset given.
inline StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others) {
    if (train.size() == 0) throw ValidationError("standardize: empty training set");
    const std::size_t n = train.size();
    const std::size_t d = train.n_features();

    ScalerParams params;
    params.mean.assign(d, 0.0);
    params.inv_std.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = train.features.row(r);
        for (std::size_t c = 0; c < d; ++c) params.mean[c] += row[c];
    }
    for (double& m : params.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = train.features.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const double delta = row[c] - params.mean[c];
            var[c] += delta * delta;
        }
    }
    for (std::size_t c = 0; c < d; ++c) {
        var[c] /= static_cast<double>(n);
        params.inv_std[c] = var[c] > ScalerParams::kVarianceFloor ? 1.0 / std::sqrt(var[c]) : 0.0;
    }

    StandardizeResult out;
    out.train = train;
    params.apply(out.train.features);
    out.others.reserve(others.size());
    for (const auto& o : others) {
        Dataset t = o;
        params.apply(t.features);
        out.others.push_back(std::move(t));
    }
    out.params = std::move(params);
    return out;
}

// 80:20-style split. Stratified mode draws round(train_fraction * count)
// per class (clamped so both sides keep at least one sample per class).
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
        throw DomainError("split: train_fraction must lie in (0,1)");
    std::vector<std::size_t> train_idx, test_idx;
    Rng root(spec.seed);
    if (spec.stratified) {
        const auto by_class = ds.indices_by_class();
        for (std::size_t c = 0; c < by_class.size(); ++c) {
            auto idx = by_class[c];
            if (idx.empty()) continue;
            if (idx.size() < 2)
                throw ValidationError("split: class " + std::to_string(c) +
                                      " has a single sample; stratification impossible");
            Rng rng = root.split("split_class", c);
            rng.shuffle(idx);
            auto want = static_cast<std::size_t>(
                std::llround(spec.train_fraction * static_cast<double>(idx.size())));
            want = std::clamp<std::size_t>(want, 1, idx.size() - 1);
            train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + want);
            test_idx.insert(test_idx.end(), idx.begin() + want, idx.end());
        }
    } else {
        if (ds.size() < 2) throw ValidationError("split: need at least 2 samples");
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng = root.split("split_all");
        rng.shuffle(idx);
        auto want = static_cast<std::size_t>(
            std::llround(spec.train_fraction * static_cast<double>(idx.size())));
        want = std::clamp<std::size_t>(want, 1, idx.size() - 1);
        train_idx.assign(idx.begin(), idx.begin() + want);
        test_idx.assign(idx.begin() + want, idx.end());
    }
    return {ds.subset(train_idx), ds.subset(test_idx)};
}

// k stratified folds; validation sets are pairwise disjoint and cover every
// sample exactly once. Per-class remainders rotate across folds so aggregate
// fold sizes differ by at most one, larger folds first.
inline std::vector<std::pair<Dataset, Dataset>> kfold(const Dataset& ds, std::size_t k,
                                                      std::uint64_t seed) {
    if (k < 2) throw DomainError("kfold: k must be >= 2");
    if (k > ds.size()) throw DomainError("kfold: k exceeds sample count");

    std::vector<std::vector<std::size_t>> folds(k);
    Rng root(seed);
    const auto by_class = ds.indices_by_class();
    std::size_t offset = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        if (idx.empty()) continue;
        Rng rng = root.split("fold_class", c);
        rng.shuffle(idx);
        const std::size_t base = idx.size() / k;
        const std::size_t rem = idx.size() % k;
        std::size_t pos = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const bool extra = ((f + k - offset % k) % k) < rem;
            const std::size_t take = base + (extra ? 1 : 0);
            for (std::size_t i = 0; i < take; ++i) folds[f].push_back(idx[pos++]);
        }
        offset += rem;
    }

    std::vector<std::pair<Dataset, Dataset>> out;
    out.reserve(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        for (std::size_t g = 0; g < k; ++g)
            if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        out.emplace_back(ds.subset(train_idx), ds.subset(folds[f]));
    }
    return out;
}

} // namespace fedsim
