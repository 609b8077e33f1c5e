// fedsim command line: centralized baselines, single federated experiments,
// grid sweeps, and standalone TCP aggregator/client processes.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "fedsim/harness.hpp"

namespace {

using namespace fedsim;

struct Overrides {
    std::vector<std::pair<std::string, std::string>> kv;

    void add_flag(CLI::App* cmd, const std::string& flag, const std::string& section,
                  const std::string& key, const std::string& help) {
        auto holder = std::make_shared<std::string>();
        cmd->add_option_function<std::string>(
            flag,
            [this, section, key](const std::string& v) { kv.emplace_back(section + "." + key, v); },
            help);
        (void)holder;
    }

    void apply(ExperimentConfig& cfg) const {
        for (const auto& [k, v] : kv) {
            const auto dot = k.find('.');
            apply_config_kv(cfg, k.substr(0, dot), k.substr(dot + 1), v);
        }
    }
};

// `with_cell_flags` controls the single-cell federation flags; the sweep
// subcommand reuses those names for its axes instead.
void add_common_overrides(CLI::App* cmd, Overrides& ov, bool with_cell_flags = true) {
    ov.add_flag(cmd, "--seed", "run", "seed", "override run.seed");
    ov.add_flag(cmd, "--out", "run", "out", "report path prefix");
    ov.add_flag(cmd, "--repeats", "run", "repeats", "override run.repeats");
    ov.add_flag(cmd, "--transport", "run", "transport", "inproc or tcp");
    ov.add_flag(cmd, "--host", "run", "tcp_host", "aggregator host");
    ov.add_flag(cmd, "--port", "run", "tcp_port", "aggregator port");
    ov.add_flag(cmd, "--baseline", "run", "baseline", "compute the centralized baseline");
    if (with_cell_flags) {
        ov.add_flag(cmd, "--clients", "federation", "n_clients", "override client count");
        ov.add_flag(cmd, "--rounds", "federation", "n_rounds", "override round count");
        ov.add_flag(cmd, "--sigma", "federation", "noise_sigma", "parameter noise sigma");
        ov.add_flag(cmd, "--imbalance", "federation", "imbalance_level",
                    "home-class fraction in [1/C,1], or 'iid'");
    }
    ov.add_flag(cmd, "--data", "dataset", "kind", "synthetic or csv");
    ov.add_flag(cmd, "--csv", "dataset", "path", "csv dataset path");
    ov.add_flag(cmd, "--label-column", "dataset", "label_column", "label column name or index");
    ov.add_flag(cmd, "--samples", "dataset", "n_samples", "synthetic sample count");
    ov.add_flag(cmd, "--features", "dataset", "n_features", "synthetic feature count");
    ov.add_flag(cmd, "--classes", "dataset", "n_classes", "synthetic class count");
    ov.add_flag(cmd, "--separation", "dataset", "separation", "synthetic blob separation");
    ov.add_flag(cmd, "--model", "model", "kind", "logistic_regression or sequential_dl");
    ov.add_flag(cmd, "--l2", "model", "l2", "l2 penalty");
    ov.add_flag(cmd, "--optimizer", "optimizer", "kind", "sgd or adam");
    ov.add_flag(cmd, "--lr", "optimizer", "learning_rate", "learning rate");
    ov.add_flag(cmd, "--epochs", "training", "total_epochs", "total epochs across rounds");
    ov.add_flag(cmd, "--batch-size", "training", "batch_size", "mini-batch size");
}

ExperimentConfig resolve_config(const std::string& config_path, const Overrides& ov) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    ov.apply(cfg);
    cfg.validate();
    return cfg;
}

template <typename T>
std::vector<T> parse_list(const std::string& csv) {
    std::vector<T> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        auto comma = csv.find(',', start);
        if (comma == std::string::npos) comma = csv.size();
        const std::string item = csv.substr(start, comma - start);
        if (!item.empty()) {
            if constexpr (std::is_same_v<T, std::size_t>)
                out.push_back(detail::parse_count(item));
            else
                out.push_back(detail::parse_num(item));
        }
        start = comma + 1;
    }
    return out;
}

int finish_run(const std::vector<MetricsRecord>& records, const ExperimentConfig& cfg) {
    const auto path = emit_report(records, cfg.out_prefix);
    std::cout << render_summary(records);
    std::cout << "results written to " << path << "\n";
    for (const auto& rec : records)
        if (rec.status != "ok") return 1;
    return 0;
}

int cmd_baseline(const std::string& config_path, const Overrides& ov) {
    auto cfg = resolve_config(config_path, ov);
    const auto report = run_baseline(cfg);
    std::printf("baseline (5-fold cv): auc %.6g  accuracy %.6g  samples %zu\n", report.auc,
                report.accuracy, report.n_samples);
    return 0;
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
    auto cfg = resolve_config(config_path, ov);
    return finish_run(run_experiment(cfg), cfg);
}

int cmd_sweep(const std::string& config_path, const Overrides& ov, const std::string& clients,
              const std::string& rounds, const std::string& sigma,
              const std::string& imbalance) {
    auto cfg = resolve_config(config_path, ov);
    SweepAxes axes;
    axes.clients = parse_list<std::size_t>(clients);
    axes.rounds = parse_list<std::size_t>(rounds);
    axes.sigma = parse_list<double>(sigma);
    if (imbalance == "default") {
        axes.imbalance = {1.0 / static_cast<double>(cfg.n_classes), 0.4, 0.6, 0.8, 0.9, 1.0};
    } else {
        axes.imbalance = parse_list<double>(imbalance);
    }
    if (axes.empty()) {
        std::cerr << "sweep: no axes given; pass --clients/--rounds/--sigma/--imbalance\n";
        return 2;
    }
    return finish_run(run_sweep(cfg, axes), cfg);
}

// Standalone aggregator: binds the configured port, waits for the expected
// clients, runs the schedule, prints the per-round pooled-test AUC.
int cmd_serve(const std::string& config_path, const Overrides& ov, std::size_t repeat) {
    auto cfg = resolve_config(config_path, ov);
    const std::uint64_t run_seed = Rng(cfg.seed).split("repeat", repeat).seed();
    auto cfg_ds = cfg;
    const Dataset ds = make_dataset(cfg_ds);
    const auto run = prepare_run(cfg_ds, ds, run_seed);

    TcpAggregatorEndpoint endpoint(cfg.tcp_host, cfg.tcp_port);
    std::printf("aggregator listening on %s:%u for %zu clients (repeat %zu, run seed %llu)\n",
                cfg.tcp_host.c_str(), endpoint.port(), cfg.n_clients, repeat,
                static_cast<unsigned long long>(run_seed));
    AggregatorRunSpec spec{run.model, run.schedule, run.seed, cfg.n_clients, run.pooled_test};
    const auto result = run_aggregator(spec, endpoint);
    for (std::size_t r = 0; r < result.round_reports.size(); ++r)
        std::printf("round %zu: pooled-test auc %.6g  accuracy %.6g\n", r,
                    result.round_reports[r].auc, result.round_reports[r].accuracy);
    std::printf("traffic: %llu bytes (%llu sent, %llu received)\n",
                static_cast<unsigned long long>(result.bytes_sent + result.bytes_received),
                static_cast<unsigned long long>(result.bytes_sent),
                static_cast<unsigned long long>(result.bytes_received));
    return 0;
}

// Standalone client: derives its shard from the shared config and seed, then
// joins the aggregator over TCP.
int cmd_client(const std::string& config_path, const Overrides& ov, std::size_t client_id,
               std::size_t repeat) {
    auto cfg = resolve_config(config_path, ov);
    if (client_id >= cfg.n_clients) {
        std::cerr << "client id " << client_id << " outside 0.." << cfg.n_clients - 1 << "\n";
        return 2;
    }
    const std::uint64_t run_seed = Rng(cfg.seed).split("repeat", repeat).seed();
    auto cfg_ds = cfg;
    const Dataset ds = make_dataset(cfg_ds);
    const auto run = prepare_run(cfg_ds, ds, run_seed);

    TcpClientEndpoint endpoint(cfg.tcp_host, cfg.tcp_port);
    std::vector<ClientUpdate> records;
    run_client(run.clients[client_id], run.model, run.optimizer, run.schedule, run.batch_size,
               run.noise, run.seed, static_cast<std::uint32_t>(client_id), endpoint, &records);
    for (const auto& u : records)
        std::printf("round %zu: local auc %.6g  train %.3fs  (%zu train samples)\n", u.round,
                    u.local_report.auc, u.train_seconds, u.n_samples);
    std::printf("traffic: %llu bytes sent, %llu received\n",
                static_cast<unsigned long long>(endpoint.bytes_sent()),
                static_cast<unsigned long long>(endpoint.bytes_received()));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated averaging simulation engine and benchmark harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string clients_axis, rounds_axis, sigma_axis, imbalance_axis;
    std::size_t client_id = 0, repeat = 0;

    Overrides baseline_ov, run_ov, sweep_ov, serve_ov, client_ov;

    auto* baseline = app.add_subcommand("baseline", "centralized 5-fold cross validation");
    baseline->add_option("--config", config_path, "config file");
    add_common_overrides(baseline, baseline_ov);

    auto* run = app.add_subcommand("run", "one federated experiment cell with repeats");
    run->add_option("--config", config_path, "config file");
    add_common_overrides(run, run_ov);

    auto* sweep = app.add_subcommand("sweep", "grid sweep over clients/rounds/sigma/imbalance");
    sweep->add_option("--config", config_path, "config file");
    sweep->add_option("--clients", clients_axis, "comma list, e.g. 3,5,10,50");
    sweep->add_option("--rounds", rounds_axis, "comma list, e.g. 1,2,5,10");
    sweep->add_option("--sigma", sigma_axis, "comma list, e.g. 0,0.01,0.03,0.05,0.07,0.085,0.1");
    sweep->add_option("--imbalance", imbalance_axis,
                      "comma list of levels in [1/C,1], or 'default'");
    add_common_overrides(sweep, sweep_ov, /*with_cell_flags=*/false);

    auto* serve = app.add_subcommand("serve", "run the aggregator endpoint over TCP");
    serve->add_option("--config", config_path, "config file");
    serve->add_option("--repeat", repeat, "repeat index selecting the run seed");
    add_common_overrides(serve, serve_ov);

    auto* client = app.add_subcommand("client", "join a TCP run as one client");
    client->add_option("--config", config_path, "config file");
    client->add_option("--id", client_id, "client id in [0, n_clients)")->required();
    client->add_option("--repeat", repeat, "repeat index selecting the run seed");
    add_common_overrides(client, client_ov);

    CLI11_PARSE(app, argc, argv);

    try {
        if (baseline->parsed()) return cmd_baseline(config_path, baseline_ov);
        if (run->parsed()) return cmd_run(config_path, run_ov);
        if (sweep->parsed())
            return cmd_sweep(config_path, sweep_ov, clients_axis, rounds_axis, sigma_axis,
                             imbalance_axis);
        if (serve->parsed()) return cmd_serve(config_path, serve_ov, repeat);
        if (client->parsed()) return cmd_client(config_path, client_ov, client_id, repeat);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
