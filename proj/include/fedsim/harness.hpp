#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

// One experiment cell, declaratively. Loadable from an INI-style config
// file; every field is echoed into the results CSV.
struct ExperimentConfig {
    enum class DataKind { synthetic, csv };

    // [dataset]
    DataKind data_kind = DataKind::synthetic;
    std::string dataset_path;
    std::string label_column = "label";
    bool has_header = true;
    std::size_t n_samples = 2000;
    std::size_t n_features = 50;
    std::size_t n_classes = 2;
    double separation = 6.0;

    // [model]
    ModelKind model_kind = ModelKind::logistic_regression;
    double l2 = 0.001;

    // [optimizer]
    OptKind opt_kind = OptKind::sgd;
    double learning_rate = 0.01;

    // [training]
    std::size_t total_epochs = 8;
    std::size_t batch_size = 512;
    double train_fraction = 0.8;

    // [federation]
    std::size_t n_clients = 3;
    std::size_t n_rounds = 1;
    double noise_sigma = 0.0;
    std::optional<double> imbalance_level;

    // [run]
    std::size_t repeats = 10;
    std::uint64_t seed = 1;
    enum class Transport { inproc, tcp };
    Transport transport = Transport::inproc;
    std::string tcp_host = "127.0.0.1";
    std::uint16_t tcp_port = 7710;
    bool with_baseline = true;
    std::string out_prefix = "results";

    void validate() const {
        if (data_kind == DataKind::csv && dataset_path.empty())
            throw ValidationError("config: csv dataset needs a path");
        if (n_clients == 0 || n_rounds == 0 || repeats == 0 || batch_size == 0 ||
            total_epochs == 0)
            throw ValidationError("config: counts must be positive");
        if (train_fraction <= 0 || train_fraction >= 1)
            throw ValidationError("config: train_fraction must lie in (0,1)");
        if (noise_sigma < 0) throw ValidationError("config: noise_sigma must be >= 0");
        if (imbalance_level && n_clients != n_classes)
            throw ValidationError("config: imbalance requires n_clients == n_classes");
    }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParseError("cannot parse '" + v + "' as a boolean");
}

inline double parse_num(const std::string& v) {
    const auto parsed = parse_double(v);
    if (!parsed) throw ParseError("cannot parse '" + v + "' as a number");
    return *parsed;
}

inline std::size_t parse_count(const std::string& v) {
    const double d = parse_num(v);
    if (d < 0 || d != std::floor(d)) throw ParseError("'" + v + "' is not a count");
    return static_cast<std::size_t>(d);
}

} // namespace detail

// Applies one "section.key = value" setting; both the file parser and CLI
// flag overrides funnel through here.
inline void apply_config_kv(ExperimentConfig& cfg, const std::string& section,
                            const std::string& key, const std::string& value) {
    const std::string k = section + "." + key;
    if (k == "dataset.kind") {
        if (value == "synthetic")
            cfg.data_kind = ExperimentConfig::DataKind::synthetic;
        else if (value == "csv")
            cfg.data_kind = ExperimentConfig::DataKind::csv;
        else
            throw ParseError("dataset.kind must be synthetic or csv, got '" + value + "'");
    } else if (k == "dataset.path") {
        cfg.dataset_path = value;
    } else if (k == "dataset.label_column") {
        cfg.label_column = value;
    } else if (k == "dataset.has_header") {
        cfg.has_header = detail::parse_bool(value);
    } else if (k == "dataset.n_samples") {
        cfg.n_samples = detail::parse_count(value);
    } else if (k == "dataset.n_features") {
        cfg.n_features = detail::parse_count(value);
    } else if (k == "dataset.n_classes") {
        cfg.n_classes = detail::parse_count(value);
    } else if (k == "dataset.separation") {
        cfg.separation = detail::parse_num(value);
    } else if (k == "model.kind") {
        if (value == "logistic_regression")
            cfg.model_kind = ModelKind::logistic_regression;
        else if (value == "sequential_dl")
            cfg.model_kind = ModelKind::sequential_dl;
        else
            throw ParseError("model.kind must be logistic_regression or sequential_dl");
    } else if (k == "model.l2") {
        cfg.l2 = detail::parse_num(value);
    } else if (k == "optimizer.kind") {
        if (value == "sgd")
            cfg.opt_kind = OptKind::sgd;
        else if (value == "adam")
            cfg.opt_kind = OptKind::adam;
        else
            throw ParseError("optimizer.kind must be sgd or adam");
    } else if (k == "optimizer.learning_rate") {
        cfg.learning_rate = detail::parse_num(value);
    } else if (k == "training.total_epochs") {
        cfg.total_epochs = detail::parse_count(value);
    } else if (k == "training.batch_size") {
        cfg.batch_size = detail::parse_count(value);
    } else if (k == "training.train_fraction") {
        cfg.train_fraction = detail::parse_num(value);
    } else if (k == "federation.n_clients") {
        cfg.n_clients = detail::parse_count(value);
    } else if (k == "federation.n_rounds") {
        cfg.n_rounds = detail::parse_count(value);
    } else if (k == "federation.noise_sigma") {
        cfg.noise_sigma = detail::parse_num(value);
    } else if (k == "federation.imbalance_level") {
        if (value.empty() || value == "iid")
            cfg.imbalance_level.reset();
        else
            cfg.imbalance_level = detail::parse_num(value);
    } else if (k == "run.repeats") {
        cfg.repeats = detail::parse_count(value);
    } else if (k == "run.seed") {
        cfg.seed = static_cast<std::uint64_t>(detail::parse_num(value));
    } else if (k == "run.transport") {
        if (value == "inproc")
            cfg.transport = ExperimentConfig::Transport::inproc;
        else if (value == "tcp")
            cfg.transport = ExperimentConfig::Transport::tcp;
        else
            throw ParseError("run.transport must be inproc or tcp");
    } else if (k == "run.tcp_host") {
        cfg.tcp_host = value;
    } else if (k == "run.tcp_port") {
        cfg.tcp_port = static_cast<std::uint16_t>(detail::parse_count(value));
    } else if (k == "run.baseline") {
        cfg.with_baseline = detail::parse_bool(value);
    } else if (k == "run.out") {
        cfg.out_prefix = value;
    } else {
        throw ParseError("unknown config key '" + k + "'");
    }
}

// INI-style: [section] headers, key = value lines, # or ; comments.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string t(detail::trim(line));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ParseError(path + " line " + std::to_string(line_no) +
                                 ": unterminated section header");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected key = value");
        const std::string key(detail::trim(t.substr(0, eq)));
        const std::string value(detail::trim(t.substr(eq + 1)));
        try {
            apply_config_kv(cfg, section, key, value);
        } catch (const ParseError& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

// Builds the dataset a config describes. For CSV data the sample, feature
// and class counts are written back so records echo the real shape.
inline Dataset make_dataset(ExperimentConfig& cfg) {
    if (cfg.data_kind == ExperimentConfig::DataKind::synthetic) {
        return synthesize_blobs(cfg.n_samples, cfg.n_features, cfg.n_classes, cfg.separation,
                                Rng(cfg.seed).split("dataset").seed());
    }
    auto loaded = load_csv(cfg.dataset_path, cfg.label_column, cfg.has_header);
    cfg.n_samples = loaded.dataset.size();
    cfg.n_features = loaded.dataset.n_features();
    cfg.n_classes = loaded.dataset.n_classes;
    return std::move(loaded.dataset);
}

// Assembles one federated run: partition the data, split each shard 80:20,
// standardize per client on its own training portion, pool the test shards
// in client order.
inline FederatedRun prepare_run(const ExperimentConfig& cfg, const Dataset& ds,
                                std::uint64_t run_seed) {
    cfg.validate();
    Rng root(run_seed);
    const auto plan = cfg.imbalance_level
                          ? partition_imbalanced(ds, *cfg.imbalance_level,
                                                 root.split("partition").seed())
                          : partition_iid(ds, cfg.n_clients, root.split("partition").seed());

    FederatedRun run;
    run.model = ModelSpec{cfg.model_kind, ds.n_features(), ds.n_classes, cfg.l2};
    run.optimizer = OptimizerSpec{cfg.opt_kind, cfg.learning_rate};
    run.batch_size = cfg.batch_size;
    run.schedule = make_schedule(cfg.total_epochs, cfg.n_rounds);
    run.noise = NoiseSpec{cfg.noise_sigma};
    run.seed = run_seed;

    std::size_t pooled_size = 0;
    for (std::size_t i = 0; i < plan.n_clients(); ++i) {
        auto shard = ds.subset(plan.assignments[i]);
        auto [train, test] =
            split(shard, {cfg.train_fraction, true, root.split("client_split", i).seed()});
        auto standardized = standardize(train, {test});
        pooled_size += standardized.others[0].size();
        run.clients.push_back(
            {std::move(standardized.train), std::move(standardized.others[0])});
    }

    run.pooled_test.n_classes = ds.n_classes;
    run.pooled_test.features = Matrix(pooled_size, ds.n_features());
    run.pooled_test.labels.resize(pooled_size);
    std::size_t row = 0;
    for (const auto& client : run.clients) {
        for (std::size_t r = 0; r < client.test.size(); ++r, ++row) {
            const auto src = client.test.features.row(r);
            std::copy(src.begin(), src.end(), run.pooled_test.features.row(row).begin());
            run.pooled_test.labels[row] = client.test.labels[r];
        }
    }
    return run;
}

// Centralized 5-fold cross-validated baseline; the fold scaler is fitted on
// the fold's training portion only. Returns the fold-mean report (acc_cent
// for delta comparisons).
inline EvalReport run_baseline_on(const ExperimentConfig& cfg, const Dataset& ds) {
    const auto folds = kfold(ds, 5, Rng(cfg.seed).split("cv").seed());
    ModelSpec model{cfg.model_kind, ds.n_features(), ds.n_classes, cfg.l2};
    double auc_sum = 0.0, acc_sum = 0.0;
    std::size_t n_total = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        auto standardized = standardize(folds[f].first, {folds[f].second});
        Rng init_rng = Rng(cfg.seed).split("cv_init", f);
        auto params = init_params(model, init_rng);
        Optimizer opt({cfg.opt_kind, cfg.learning_rate}, params.size());
        Rng train_rng = Rng(cfg.seed).split("cv_train", f);
        auto trained =
            train_epochs(model, std::move(params), opt, standardized.train.features,
                         standardized.train.labels, cfg.total_epochs, cfg.batch_size, train_rng);
        const auto report = evaluate(model, trained.params, standardized.others[0].features,
                                     standardized.others[0].labels);
        auc_sum += report.auc;
        acc_sum += report.accuracy;
        n_total += report.n_samples;
    }
    EvalReport out;
    out.auc = auc_sum / static_cast<double>(folds.size());
    out.accuracy = acc_sum / static_cast<double>(folds.size());
    out.n_samples = n_total;
    return out;
}

inline EvalReport run_baseline(const ExperimentConfig& config) {
    ExperimentConfig cfg = config;
    cfg.validate();
    const Dataset ds = make_dataset(cfg);
    return run_baseline_on(cfg, ds);
}

// One result row. `type` separates per-repeat data rows from the summary
// row appended after them; skipped sweep cells produce a single row with
// status "skipped".
struct MetricsRecord {
    enum class Type { data, summary };
    Type type = Type::data;
    ExperimentConfig config;
    std::size_t repeat_index = 0;
    std::uint64_t run_seed = 0;
    std::string status = "ok";
    std::string reason;

    std::uint64_t param_count = 0;
    double auc = std::numeric_limits<double>::quiet_NaN();
    double auc_std = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double client_local_auc = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> delta_accuracy_loss;
    std::vector<double> auc_trace;
    std::uint64_t traffic_bytes_total = 0;
    std::uint64_t traffic_bytes_per_client = 0;
    std::uint64_t memory_client_bytes = 0;
    std::uint64_t memory_aggregator_bytes = 0;

    // Wall-clock measurements; written to the separate timing CSV so the
    // main results file is byte-reproducible.
    double global_wall_seconds = 0.0;
    std::vector<double> client_train_seconds;
};

namespace detail {

inline std::unique_ptr<TransportFactory> make_transport(const ExperimentConfig& cfg,
                                                        std::size_t n_clients) {
    if (cfg.transport == ExperimentConfig::Transport::tcp)
        return std::make_unique<TcpTransport>(cfg.tcp_host, cfg.tcp_port);
    return std::make_unique<InProcTransport>(n_clients);
}

} // namespace detail

// `repeats` independently seeded runs of one cell plus a summary record.
// Run failures become rows with status "failed"; the sweep moves on.
inline std::vector<MetricsRecord> run_experiment_on(const ExperimentConfig& cfg,
                                                    const Dataset& ds,
                                                    const std::optional<EvalReport>& baseline) {
    cfg.validate();
    std::vector<MetricsRecord> records;
    std::vector<double> aucs;
    for (std::size_t k = 0; k < cfg.repeats; ++k) {
        MetricsRecord rec;
        rec.config = cfg;
        rec.repeat_index = k;
        rec.run_seed = Rng(cfg.seed).split("repeat", k).seed();
        try {
            const auto run = prepare_run(cfg, ds, rec.run_seed);
            auto transport = detail::make_transport(cfg, cfg.n_clients);
            const auto result = run_federated(run, *transport);

            rec.param_count = parameter_count(run.model);
            const auto& last = result.rounds.back();
            rec.auc = last.global_report.auc;
            rec.accuracy = last.global_report.accuracy;
            rec.client_local_auc = last.client_aggregate.auc;
            for (const auto& round : result.rounds)
                rec.auc_trace.push_back(round.global_report.auc);
            if (baseline)
                rec.delta_accuracy_loss = delta_accuracy_loss(last.global_report, *baseline);
            rec.traffic_bytes_total = result.resources.traffic_bytes_total;
            rec.traffic_bytes_per_client = result.resources.traffic_bytes_per_client;
            rec.memory_client_bytes = result.resources.memory_client_bytes;
            rec.memory_aggregator_bytes = result.resources.memory_aggregator_bytes;
            rec.global_wall_seconds = result.resources.global_wall_seconds;
            rec.client_train_seconds = result.resources.client_train_seconds;
            aucs.push_back(rec.auc);
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.reason = e.what();
        }
        records.push_back(std::move(rec));
    }

    MetricsRecord summary;
    summary.type = MetricsRecord::Type::summary;
    summary.config = cfg;
    summary.repeat_index = cfg.repeats;
    if (!aucs.empty()) {
        double mean = 0.0;
        for (double a : aucs) mean += a;
        mean /= static_cast<double>(aucs.size());
        double var = 0.0;
        for (double a : aucs) var += (a - mean) * (a - mean);
        summary.auc = mean;
        summary.auc_std =
            aucs.size() > 1 ? std::sqrt(var / static_cast<double>(aucs.size() - 1)) : 0.0;
        if (baseline) {
            EvalReport mean_report;
            mean_report.auc = mean;
            summary.delta_accuracy_loss = delta_accuracy_loss(mean_report, *baseline);
        }
    } else {
        summary.status = "failed";
        summary.reason = "all repeats failed";
    }
    records.push_back(std::move(summary));
    return records;
}

inline std::vector<MetricsRecord> run_experiment(const ExperimentConfig& config) {
    ExperimentConfig cfg = config;
    cfg.validate();
    const Dataset ds = make_dataset(cfg);
    std::optional<EvalReport> baseline;
    if (cfg.with_baseline) baseline = run_baseline_on(cfg, ds);
    return run_experiment_on(cfg, ds, baseline);
}

// Sweep axes; an empty vector keeps the base config's value fixed.
struct SweepAxes {
    std::vector<std::size_t> clients;
    std::vector<std::size_t> rounds;
    std::vector<double> sigma;
    std::vector<double> imbalance;

    bool empty() const {
        return clients.empty() && rounds.empty() && sigma.empty() && imbalance.empty();
    }
};

// Cartesian product of the supplied axes over one shared dataset and one
// shared baseline. Infeasible cells are recorded as skipped and do not stop
// the sweep.
inline std::vector<MetricsRecord> run_sweep(const ExperimentConfig& config,
                                            const SweepAxes& axes) {
    ExperimentConfig base = config;
    base.validate();
    const Dataset ds = make_dataset(base);
    std::optional<EvalReport> baseline;
    if (base.with_baseline) baseline = run_baseline_on(base, ds);

    const auto clients = axes.clients.empty() ? std::vector<std::size_t>{base.n_clients}
                                              : axes.clients;
    const auto rounds = axes.rounds.empty() ? std::vector<std::size_t>{base.n_rounds}
                                            : axes.rounds;
    const auto sigmas = axes.sigma.empty() ? std::vector<double>{base.noise_sigma} : axes.sigma;
    std::vector<std::optional<double>> levels;
    if (axes.imbalance.empty())
        levels.push_back(base.imbalance_level);
    else
        for (double v : axes.imbalance) levels.push_back(v);

    const auto class_counts = ds.class_counts();
    const std::size_t min_class =
        *std::min_element(class_counts.begin(), class_counts.end());

    std::vector<MetricsRecord> records;
    for (std::size_t n_clients : clients) {
        for (std::size_t n_rounds : rounds) {
            for (double sigma : sigmas) {
                for (const auto& level : levels) {
                    ExperimentConfig cell = base;
                    cell.n_clients = n_clients;
                    cell.n_rounds = n_rounds;
                    cell.noise_sigma = sigma;
                    cell.imbalance_level = level;

                    std::string skip_reason;
                    if (level && n_clients != ds.n_classes)
                        skip_reason = "imbalance requires n_clients == n_classes";
                    else if (!level && min_class < n_clients)
                        skip_reason = "smallest class has fewer samples than clients";
                    else if (cell.total_epochs < n_rounds)
                        skip_reason = "total epochs below round count";

                    if (!skip_reason.empty()) {
                        MetricsRecord rec;
                        rec.config = cell;
                        rec.status = "skipped";
                        rec.reason = skip_reason;
                        records.push_back(std::move(rec));
                        continue;
                    }
                    auto cell_records = run_experiment_on(cell, ds, baseline);
                    records.insert(records.end(),
                                   std::make_move_iterator(cell_records.begin()),
                                   std::make_move_iterator(cell_records.end()));
                }
            }
        }
    }
    return records;
}

namespace detail {

// 6 significant digits; non-finite values serialize as empty cells.
inline std::string fmt6(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string sanitize_cell(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline std::string join_fmt6(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt6(v[i]);
    }
    return out;
}

} // namespace detail

inline const std::vector<std::string>& results_csv_columns() {
    static const std::vector<std::string> columns{
        "record_type", "dataset", "dataset_path", "label_column", "has_header", "n_samples",
        "n_features", "n_classes", "separation", "model", "optimizer", "learning_rate", "l2",
        "total_epochs", "batch_size", "train_fraction", "n_clients", "n_rounds", "noise_sigma",
        "imbalance_level", "transport", "tcp_host", "tcp_port", "baseline", "repeats", "seed",
        "out", "repeat", "run_seed", "status", "reason", "param_count", "auc", "auc_std",
        "accuracy", "client_local_auc", "delta_accuracy_loss", "auc_trace",
        "traffic_bytes_total", "traffic_bytes_per_client", "memory_client_bytes",
        "memory_aggregator_bytes"};
    return columns;
}

inline std::vector<std::string> record_to_row(const MetricsRecord& rec) {
    const auto& cfg = rec.config;
    const bool synthetic = cfg.data_kind == ExperimentConfig::DataKind::synthetic;
    const bool has_results = rec.status == "ok";
    std::vector<std::string> row;
    row.push_back(rec.type == MetricsRecord::Type::summary ? "summary" : "data");
    row.push_back(synthetic ? "synthetic" : "csv");
    row.push_back(detail::sanitize_cell(cfg.dataset_path));
    row.push_back(synthetic ? "" : detail::sanitize_cell(cfg.label_column));
    row.push_back(synthetic ? "" : (cfg.has_header ? "true" : "false"));
    row.push_back(std::to_string(cfg.n_samples));
    row.push_back(std::to_string(cfg.n_features));
    row.push_back(std::to_string(cfg.n_classes));
    row.push_back(synthetic ? detail::fmt6(cfg.separation) : "");
    row.push_back(to_string(cfg.model_kind));
    row.push_back(to_string(cfg.opt_kind));
    row.push_back(detail::fmt6(cfg.learning_rate));
    row.push_back(detail::fmt6(cfg.l2));
    row.push_back(std::to_string(cfg.total_epochs));
    row.push_back(std::to_string(cfg.batch_size));
    row.push_back(detail::fmt6(cfg.train_fraction));
    row.push_back(std::to_string(cfg.n_clients));
    row.push_back(std::to_string(cfg.n_rounds));
    row.push_back(detail::fmt6(cfg.noise_sigma));
    row.push_back(cfg.imbalance_level ? detail::fmt6(*cfg.imbalance_level) : "iid");
    row.push_back(cfg.transport == ExperimentConfig::Transport::tcp ? "tcp" : "inproc");
    row.push_back(cfg.tcp_host);
    row.push_back(std::to_string(cfg.tcp_port));
    row.push_back(cfg.with_baseline ? "true" : "false");
    row.push_back(std::to_string(cfg.repeats));
    row.push_back(std::to_string(cfg.seed));
    row.push_back(detail::sanitize_cell(cfg.out_prefix));
    row.push_back(rec.status == "skipped" ? "" : std::to_string(rec.repeat_index));
    row.push_back(rec.run_seed ? std::to_string(rec.run_seed) : "");
    row.push_back(rec.status);
    row.push_back(detail::sanitize_cell(rec.reason));
    row.push_back(has_results && rec.param_count ? std::to_string(rec.param_count) : "");
    row.push_back(detail::fmt6(rec.auc));
    row.push_back(rec.type == MetricsRecord::Type::summary ? detail::fmt6(rec.auc_std) : "");
    row.push_back(detail::fmt6(rec.accuracy));
    row.push_back(detail::fmt6(rec.client_local_auc));
    row.push_back(rec.delta_accuracy_loss ? detail::fmt6(*rec.delta_accuracy_loss) : "");
    row.push_back(detail::join_fmt6(rec.auc_trace));
    row.push_back(has_results && rec.param_count ? std::to_string(rec.traffic_bytes_total) : "");
    row.push_back(has_results && rec.param_count ? std::to_string(rec.traffic_bytes_per_client)
                                                 : "");
    row.push_back(has_results && rec.param_count ? std::to_string(rec.memory_client_bytes) : "");
    row.push_back(has_results && rec.param_count ? std::to_string(rec.memory_aggregator_bytes)
                                                 : "");
    return row;
}

namespace detail {

struct AxisView {
    std::string name;
    std::string (*value_of)(const MetricsRecord&);
};

inline const std::vector<AxisView>& sweep_axes_views() {
    static const std::vector<AxisView> views{
        {"clients", [](const MetricsRecord& r) { return std::to_string(r.config.n_clients); }},
        {"rounds", [](const MetricsRecord& r) { return std::to_string(r.config.n_rounds); }},
        {"sigma", [](const MetricsRecord& r) { return fmt6(r.config.noise_sigma); }},
        {"imbalance",
         [](const MetricsRecord& r) {
             return r.config.imbalance_level ? fmt6(*r.config.imbalance_level)
                                             : std::string("iid");
         }},
    };
    return views;
}

} // namespace detail

// Per-axis marginal means over the data rows, matching the reporting rule of
// averaging over every other swept parameter.
inline std::vector<std::vector<std::string>> marginal_rows(
    const std::vector<MetricsRecord>& records) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& axis : detail::sweep_axes_views()) {
        std::map<std::string, std::vector<double>> groups;
        for (const auto& rec : records) {
            if (rec.type != MetricsRecord::Type::data || rec.status != "ok") continue;
            groups[axis.value_of(rec)].push_back(rec.auc);
        }
        if (groups.size() < 2) continue;
        for (const auto& [value, aucs] : groups) {
            double mean = 0.0;
            for (double a : aucs) mean += a;
            mean /= static_cast<double>(aucs.size());
            double var = 0.0;
            for (double a : aucs) var += (a - mean) * (a - mean);
            const double sd =
                aucs.size() > 1 ? std::sqrt(var / static_cast<double>(aucs.size() - 1)) : 0.0;
            rows.push_back({axis.name, value, detail::fmt6(mean), detail::fmt6(sd),
                            std::to_string(aucs.size())});
        }
    }
    return rows;
}

// Writes <prefix>.csv (deterministic results), <prefix>_timing.csv
// (wall-clock measurements, excluded from reproducibility guarantees) and
// <prefix>_marginals.csv when at least one axis varies. Returns the results
// path.
inline std::string emit_report(const std::vector<MetricsRecord>& records,
                               const std::string& out_prefix) {
    if (records.empty()) throw ValidationError("emit_report: no records");

    const std::string results_path = out_prefix + ".csv";
    {
        std::ofstream out(results_path);
        if (!out) throw ValidationError("cannot write " + results_path);
        const auto& columns = results_csv_columns();
        for (std::size_t i = 0; i < columns.size(); ++i)
            out << (i ? "," : "") << columns[i];
        out << "\n";
        for (const auto& rec : records) {
            const auto row = record_to_row(rec);
            for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << "\n";
        }
    }
    {
        std::ofstream out(out_prefix + "_timing.csv");
        out << "n_clients,n_rounds,noise_sigma,imbalance_level,repeat,run_seed,"
               "global_wall_seconds,client_train_seconds\n";
        for (const auto& rec : records) {
            if (rec.type != MetricsRecord::Type::data || rec.status != "ok") continue;
            out << rec.config.n_clients << "," << rec.config.n_rounds << ","
                << detail::fmt6(rec.config.noise_sigma) << ","
                << (rec.config.imbalance_level ? detail::fmt6(*rec.config.imbalance_level)
                                               : "iid")
                << "," << rec.repeat_index << "," << rec.run_seed << ","
                << detail::fmt6(rec.global_wall_seconds) << ","
                << detail::join_fmt6(rec.client_train_seconds) << "\n";
        }
    }
    const auto marginals = marginal_rows(records);
    if (!marginals.empty()) {
        std::ofstream out(out_prefix + "_marginals.csv");
        out << "axis,value,mean_auc,std_auc,n_runs\n";
        for (const auto& row : marginals) {
            for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << "\n";
        }
    }
    return results_path;
}

// Plain-text summary table grouped by cell.
inline std::string render_summary(const std::vector<MetricsRecord>& records) {
    std::ostringstream out;
    out << "cell (clients, rounds, sigma, imbalance)        auc        std      runs  status\n";
    for (const auto& rec : records) {
        if (rec.type == MetricsRecord::Type::data) continue;
        const auto& cfg = rec.config;
        char cell[64];
        std::snprintf(cell, sizeof(cell), "%3zu %3zu %8s %8s", cfg.n_clients, cfg.n_rounds,
                      detail::fmt6(cfg.noise_sigma).c_str(),
                      cfg.imbalance_level ? detail::fmt6(*cfg.imbalance_level).c_str() : "iid");
        char line[160];
        std::snprintf(line, sizeof(line), "%-44s %9s %9s %5zu  %s\n", cell,
                      detail::fmt6(rec.auc).c_str(), detail::fmt6(rec.auc_std).c_str(),
                      cfg.repeats, rec.status.c_str());
        out << line;
    }
    for (const auto& rec : records) {
        if (rec.status == "skipped")
            out << "skipped: clients=" << rec.config.n_clients
                << " rounds=" << rec.config.n_rounds << " (" << rec.reason << ")\n";
    }
    return out.str();
}

// Minimal reader for the files this module writes (comma-split, no quoting).
inline std::vector<std::vector<std::string>> read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) {
                row.push_back(line.substr(start));
                break;
            }
            row.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace fedsim
