#include <catch2/catch_amalgamated.hpp>

#include "fedsim/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace fedsim;

namespace {

struct TempDir {
    std::filesystem::path dir;
    TempDir() {
        static int counter = 0;
        dir = std::filesystem::temp_directory_path() /
              ("fedsim_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(dir);
    }
    ~TempDir() { std::filesystem::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

// Small, quickly trainable cell.
ExperimentConfig quick_config() {
    ExperimentConfig cfg;
    cfg.n_samples = 300;
    cfg.n_features = 10;
    cfg.n_classes = 2;
    cfg.separation = 5.0;
    cfg.learning_rate = 0.1;
    cfg.total_epochs = 4;
    cfg.batch_size = 32;
    cfg.n_clients = 3;
    cfg.n_rounds = 2;
    cfg.repeats = 2;
    cfg.seed = 11;
    cfg.with_baseline = true;
    return cfg;
}

std::string file_contents(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config files parse with sections, comments and overrides", "[harness]") {
    TempDir tmp;
    const auto path = tmp.path("run.ini");
    {
        std::ofstream out(path);
        out << "# demo configuration\n"
            << "[dataset]\n"
            << "kind = synthetic\n"
            << "n_samples = 500\n"
            << "n_features = 8\n"
            << "separation = 3.5  ; inline comment\n"
            << "[model]\n"
            << "kind = sequential_dl\n"
            << "l2 = 0.005\n"
            << "[optimizer]\n"
            << "kind = adam\n"
            << "learning_rate = 0.001\n"
            << "[federation]\n"
            << "n_clients = 5\n"
            << "n_rounds = 2\n"
            << "imbalance_level = iid\n"
            << "[run]\n"
            << "repeats = 3\n"
            << "seed = 99\n"
            << "transport = tcp\n"
            << "tcp_port = 7801\n";
    }
    auto cfg = load_config(path);
    CHECK(cfg.n_samples == 500);
    CHECK(cfg.n_features == 8);
    CHECK(cfg.separation == 3.5);
    CHECK(cfg.model_kind == ModelKind::sequential_dl);
    CHECK(cfg.l2 == 0.005);
    CHECK(cfg.opt_kind == OptKind::adam);
    CHECK(cfg.n_clients == 5);
    CHECK(!cfg.imbalance_level.has_value());
    CHECK(cfg.repeats == 3);
    CHECK(cfg.seed == 99);
    CHECK(cfg.transport == ExperimentConfig::Transport::tcp);
    CHECK(cfg.tcp_port == 7801);

    apply_config_kv(cfg, "federation", "n_clients", "7");
    CHECK(cfg.n_clients == 7);
    CHECK_THROWS_AS(apply_config_kv(cfg, "federation", "bogus", "1"), ParseError);
}

TEST_CASE("baseline on separable blobs reaches near-perfect AUC", "[harness]") {
    auto cfg = quick_config();
    cfg.n_samples = 400;
    cfg.n_features = 20;
    cfg.separation = 6.0;
    auto report = run_baseline(cfg);
    CHECK(report.auc >= 0.99);
    CHECK(report.n_samples == 400);
}

TEST_CASE("baseline on unseparated blobs is chance level", "[harness]") {
    auto cfg = quick_config();
    cfg.n_samples = 500;
    cfg.separation = 0.0;
    auto report = run_baseline(cfg);
    CHECK(report.auc >= 0.4);
    CHECK(report.auc <= 0.6);
}

TEST_CASE("baseline is deterministic for a fixed seed", "[harness]") {
    auto cfg = quick_config();
    auto a = run_baseline(cfg);
    auto b = run_baseline(cfg);
    CHECK(a.auc == b.auc);
    CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("one repeat yields one data record plus one summary", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 1;
    auto records = run_experiment(cfg);
    REQUIRE(records.size() == 2);
    CHECK(records[0].type == MetricsRecord::Type::data);
    CHECK(records[0].status == "ok");
    CHECK(records[1].type == MetricsRecord::Type::summary);
    CHECK(records[1].auc == records[0].auc);
    CHECK(records[1].auc_std == 0.0);
    CHECK(records[0].delta_accuracy_loss.has_value());
    CHECK(records[0].auc_trace.size() == cfg.n_rounds);
}

TEST_CASE("summary mean equals the arithmetic mean of repeats", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 4;
    auto records = run_experiment(cfg);
    REQUIRE(records.size() == 5);
    double mean = 0.0;
    for (std::size_t k = 0; k < 4; ++k) mean += records[k].auc;
    mean /= 4.0;
    CHECK(std::abs(records[4].auc - mean) <= 1e-12);
}

TEST_CASE("different base seeds reach different AUCs somewhere", "[harness]") {
    auto cfg = quick_config();
    cfg.separation = 1.0; // hard task so randomness shows
    cfg.repeats = 1;
    cfg.with_baseline = false;
    bool any_diff = false;
    for (std::uint64_t s = 0; s < 10 && !any_diff; ++s) {
        auto a = cfg;
        a.seed = 100 + s;
        auto b = cfg;
        b.seed = 200 + s;
        any_diff = run_experiment(a)[0].auc != run_experiment(b)[0].auc;
    }
    CHECK(any_diff);
}

TEST_CASE("sweeps cover the cartesian product of axes", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 1;
    cfg.with_baseline = false;
    SweepAxes axes;
    axes.clients = {2, 3};
    axes.rounds = {1, 2};
    auto records = run_sweep(cfg, axes);
    // 4 cells, each 1 data + 1 summary.
    REQUIRE(records.size() == 8);
    std::size_t data_rows = 0;
    for (const auto& r : records)
        if (r.type == MetricsRecord::Type::data) {
            CHECK(r.status == "ok");
            data_rows++;
        }
    CHECK(data_rows == 4);
}

TEST_CASE("a noise axis of 7 values with 10 repeats gives 70 data rows", "[harness]") {
    auto cfg = quick_config();
    cfg.n_samples = 150;
    cfg.total_epochs = 1;
    cfg.n_rounds = 1;
    cfg.repeats = 10;
    cfg.with_baseline = false;
    SweepAxes axes;
    axes.sigma = {0.0, 0.01, 0.03, 0.05, 0.07, 0.085, 0.1};
    auto records = run_sweep(cfg, axes);
    std::size_t data_rows = 0;
    for (const auto& r : records)
        if (r.type == MetricsRecord::Type::data && r.status == "ok") data_rows++;
    CHECK(data_rows == 70);
}

TEST_CASE("infeasible sweep cells are skipped with a reason", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 1;
    cfg.with_baseline = false;
    SweepAxes axes;
    axes.clients = {3, 500}; // no class has 500 samples
    auto records = run_sweep(cfg, axes);
    bool found_skip = false;
    for (const auto& r : records)
        if (r.status == "skipped") {
            found_skip = true;
            CHECK(!r.reason.empty());
        }
    CHECK(found_skip);
}

TEST_CASE("imbalance cells with mismatched client count are skipped", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 1;
    cfg.with_baseline = false;
    SweepAxes axes;
    axes.clients = {3}; // n_classes = 2
    axes.imbalance = {0.5, 1.0};
    auto records = run_sweep(cfg, axes);
    for (const auto& r : records) {
        CHECK(r.status == "skipped");
        CHECK(r.reason.find("n_clients == n_classes") != std::string::npos);
    }
}

TEST_CASE("marginals average over the other axes", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 2;
    cfg.with_baseline = false;
    SweepAxes axes;
    axes.clients = {2, 3};
    axes.rounds = {1, 2};
    auto records = run_sweep(cfg, axes);
    auto rows = marginal_rows(records);
    // Two axes with two values each -> 4 marginal rows.
    REQUIRE(rows.size() == 4);
    double expected = 0.0;
    std::size_t n = 0;
    for (const auto& r : records)
        if (r.type == MetricsRecord::Type::data && r.config.n_clients == 2) {
            expected += r.auc;
            n++;
        }
    expected /= static_cast<double>(n);
    REQUIRE(rows[0][0] == "clients");
    REQUIRE(rows[0][1] == "2");
    CHECK(std::abs(std::stod(rows[0][2]) - expected) < 1e-5);
    CHECK(rows[0][4] == std::to_string(n));
}

TEST_CASE("reports re-emit byte-identically and round-trip through the reader", "[harness]") {
    TempDir tmp;
    auto cfg = quick_config();
    cfg.repeats = 2;
    auto records = run_experiment(cfg);
    const auto path_a = emit_report(records, tmp.path("a"));
    const auto path_b = emit_report(records, tmp.path("b"));
    CHECK(file_contents(path_a) == file_contents(path_b));

    auto rows = read_csv_file(path_a);
    REQUIRE(rows.size() == records.size() + 1);
    REQUIRE(rows[0] == results_csv_columns());
    for (const auto& row : rows) REQUIRE(row.size() == results_csv_columns().size());

    // auc column round-trips at 6 significant digits.
    const auto& columns = results_csv_columns();
    const auto auc_col = static_cast<std::size_t>(
        std::find(columns.begin(), columns.end(), "auc") - columns.begin());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const double parsed = std::stod(rows[i + 1][auc_col]);
        CHECK(std::abs(parsed - records[i].auc) <=
              5e-6 * std::max(1.0, std::abs(records[i].auc)));
    }
}

TEST_CASE("optional columns are empty cells, never NaN text", "[harness]") {
    TempDir tmp;
    auto cfg = quick_config();
    cfg.repeats = 1;
    cfg.with_baseline = false; // no delta column values
    auto records = run_experiment(cfg);
    const auto path = emit_report(records, tmp.path("r"));
    const auto text = file_contents(path);
    CHECK(text.find("nan") == std::string::npos);
    CHECK(text.find("NaN") == std::string::npos);
    auto rows = read_csv_file(path);
    const auto& columns = results_csv_columns();
    const auto delta_col = static_cast<std::size_t>(
        std::find(columns.begin(), columns.end(), "delta_accuracy_loss") - columns.begin());
    CHECK(rows[1][delta_col].empty());
}

TEST_CASE("every record echoes its full configuration", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 1;
    cfg.noise_sigma = 0.03;
    auto records = run_experiment(cfg);
    const auto row = record_to_row(records[0]);
    const auto& columns = results_csv_columns();
    auto cell = [&](const std::string& name) {
        return row[static_cast<std::size_t>(
            std::find(columns.begin(), columns.end(), name) - columns.begin())];
    };
    CHECK(cell("dataset") == "synthetic");
    CHECK(cell("n_samples") == "300");
    CHECK(cell("model") == "logistic_regression");
    CHECK(cell("optimizer") == "sgd");
    CHECK(cell("learning_rate") == "0.1");
    CHECK(cell("total_epochs") == "4");
    CHECK(cell("batch_size") == "32");
    CHECK(cell("n_clients") == "3");
    CHECK(cell("n_rounds") == "2");
    CHECK(cell("noise_sigma") == "0.03");
    CHECK(cell("imbalance_level") == "iid");
    CHECK(cell("transport") == "inproc");
    CHECK(cell("seed") == "11");
    CHECK(cell("status") == "ok");
}

TEST_CASE("failed repeats are recorded and the experiment continues", "[harness]") {
    auto cfg = quick_config();
    cfg.repeats = 2;
    cfg.with_baseline = false;
    cfg.n_clients = 2;
    cfg.imbalance_level = 1.5; // invalid level, every repeat fails
    auto cfg_ds = cfg;
    const Dataset ds = make_dataset(cfg_ds);
    auto records = run_experiment_on(cfg_ds, ds, std::nullopt);
    REQUIRE(records.size() == 3);
    CHECK(records[0].status == "failed");
    CHECK(!records[0].reason.empty());
    CHECK(records[2].status == "failed");
}

TEST_CASE("csv datasets flow through the harness", "[harness]") {
    TempDir tmp;
    const auto csv = tmp.path("toy.csv");
    {
        std::ofstream out(csv);
        out << "f0,f1,label\n";
        Rng rng(3);
        for (int i = 0; i < 60; ++i) {
            const bool pos = i % 2 == 0;
            out << (pos ? 2.0 : -2.0) + rng.next_double() << ","
                << (pos ? -1.0 : 1.0) + rng.next_double() << "," << (pos ? "case" : "control")
                << "\n";
        }
    }
    ExperimentConfig cfg;
    cfg.data_kind = ExperimentConfig::DataKind::csv;
    cfg.dataset_path = csv;
    cfg.label_column = "label";
    cfg.total_epochs = 3;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.1;
    cfg.n_clients = 2;
    cfg.n_rounds = 1;
    cfg.repeats = 1;
    auto records = run_experiment(cfg);
    REQUIRE(records.size() == 2);
    CHECK(records[0].status == "ok");
    CHECK(records[0].config.n_samples == 60);
    CHECK(records[0].config.n_features == 2);
    CHECK(records[0].auc > 0.9);
}
