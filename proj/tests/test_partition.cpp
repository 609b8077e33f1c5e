#include <catch2/catch_amalgamated.hpp>

#include "fedsim/partition.hpp"

#include <set>

using namespace fedsim;

namespace {

void check_disjoint_assignments(const PartitionPlan& plan, std::size_t n_samples) {
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& a : plan.assignments) {
        CHECK(!a.empty());
        total += a.size();
        for (std::size_t idx : a) {
            CHECK(idx < n_samples);
            CHECK(seen.insert(idx).second);
        }
    }
    for (std::size_t idx : plan.dropped) CHECK(seen.insert(idx).second);
    CHECK(total + plan.dropped.size() <= n_samples);
}

} // namespace

TEST_CASE("iid partition of balanced 100 samples over 5 clients", "[partition]") {
    auto ds = synthesize_blobs(100, 2, 2, 1.0, 3);
    auto plan = partition_iid(ds, 5, 7);
    auto hist = plan.histograms(ds);
    for (const auto& h : hist) CHECK(h == std::vector<std::size_t>{10, 10});
    check_disjoint_assignments(plan, ds.size());
    CHECK(plan.dropped.empty());
}

TEST_CASE("iid partition with one client is the identity", "[partition]") {
    auto ds = synthesize_blobs(40, 2, 2, 1.0, 9);
    auto plan = partition_iid(ds, 1, 1);
    REQUIRE(plan.assignments.size() == 1);
    CHECK(plan.assignments[0].size() == ds.size());
}

TEST_CASE("iid partition of 12029 samples over 50 clients sizes in {240,241}", "[partition]") {
    auto ds = synthesize_blobs(12029, 2, 2, 0.0, 5);
    auto plan = partition_iid(ds, 50, 11);
    for (const auto& a : plan.assignments) {
        CHECK(a.size() >= 240);
        CHECK(a.size() <= 241);
    }
    check_disjoint_assignments(plan, ds.size());
}

TEST_CASE("iid per-class counts follow the floor/remainder rule", "[partition]") {
    auto ds = synthesize_blobs(103, 2, 3, 1.0, 13); // counts 35, 34, 34
    auto plan = partition_iid(ds, 4, 3);
    auto hist = plan.histograms(ds);
    auto counts = ds.class_counts();
    for (std::size_t c = 0; c < 3; ++c) {
        std::size_t extras = 0, total = 0;
        for (const auto& h : hist) {
            CHECK(h[c] >= counts[c] / 4);
            CHECK(h[c] <= counts[c] / 4 + 1);
            extras += h[c] - counts[c] / 4;
            total += h[c];
        }
        CHECK(extras == counts[c] % 4);
        CHECK(total == counts[c]);
    }
}

TEST_CASE("iid partition rejects a class smaller than the client count", "[partition]") {
    Dataset ds;
    ds.n_classes = 2;
    ds.features = Matrix(5, 1, {1, 2, 3, 4, 5});
    ds.labels = {0, 0, 0, 0, 1};
    CHECK_THROWS_MATCHES(partition_iid(ds, 2, 1), ValidationError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("class 1")));
}

TEST_CASE("imbalanced level 1/C reproduces the uniform distribution", "[partition]") {
    auto ds = synthesize_blobs(100, 2, 2, 1.0, 3);
    auto plan = partition_imbalanced(ds, 0.5, 21);
    auto hist = plan.histograms(ds);
    REQUIRE(hist.size() == 2);
    for (const auto& h : hist) CHECK(h == std::vector<std::size_t>{25, 25});
    check_disjoint_assignments(plan, ds.size());
}

TEST_CASE("imbalanced level 1 gives single-class clients", "[partition]") {
    auto ds = synthesize_blobs(100, 2, 2, 1.0, 3);
    auto plan = partition_imbalanced(ds, 1.0, 21);
    auto hist = plan.histograms(ds);
    CHECK(hist[0] == std::vector<std::size_t>{50, 0});
    CHECK(hist[1] == std::vector<std::size_t>{0, 50});
}

TEST_CASE("imbalanced counts at level 0.9 with 5 classes and size 100", "[partition]") {
    auto counts = imbalanced_counts(5, 100, 0.9);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(counts[i][i] == 90);
        std::size_t rest = 0;
        for (std::size_t c = 0; c < 5; ++c) {
            if (c == i) continue;
            CHECK((counts[i][c] == 2 || counts[i][c] == 3));
            rest += counts[i][c];
        }
        CHECK(rest == 10);
    }
}

TEST_CASE("imbalanced clients all have size floor(n/C)", "[partition]") {
    auto ds = synthesize_blobs(1003, 2, 5, 1.0, 17);
    auto plan = partition_imbalanced(ds, 0.6, 2);
    for (const auto& a : plan.assignments) CHECK(a.size() == 200);
    CHECK(plan.dropped.size() == 3);
    check_disjoint_assignments(plan, ds.size());
}

TEST_CASE("imbalanced histograms match the closed-form counts", "[partition]") {
    auto ds = synthesize_blobs(500, 2, 5, 1.0, 23);
    const double level = 0.8;
    auto plan = partition_imbalanced(ds, level, 4);
    auto expected = imbalanced_counts(5, 100, level);
    CHECK(plan.histograms(ds) == expected);
}

TEST_CASE("imbalanced level 1/C matches iid histograms", "[partition]") {
    auto ds = synthesize_blobs(400, 2, 2, 1.0, 29); // 200 per class, divisible by C^2
    auto imb = partition_imbalanced(ds, 0.5, 5);
    auto iid = partition_iid(ds, 2, 5);
    CHECK(imb.histograms(ds) == iid.histograms(ds));
}

TEST_CASE("home-class count is monotone in the level", "[partition]") {
    // 900 = 3 clients x size 300, divisible so every grid level is feasible.
    auto ds = synthesize_blobs(900, 2, 3, 1.0, 31);
    std::size_t prev = 0;
    for (double level : {1.0 / 3, 0.4, 0.6, 0.8, 0.9, 1.0}) {
        auto plan = partition_imbalanced(ds, level, 9);
        auto hist = plan.histograms(ds);
        CHECK(hist[0][0] >= prev);
        prev = hist[0][0];
    }
}

TEST_CASE("imbalanced reports infeasible demand with the shortfall", "[partition]") {
    Dataset ds;
    ds.n_classes = 2;
    ds.features = Matrix(10, 1, std::vector<double>(10, 0.0));
    ds.labels = {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}; // class 1 has one sample
    CHECK_THROWS_MATCHES(partition_imbalanced(ds, 1.0, 1), ValidationError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("short by")));
}

TEST_CASE("imbalanced rejects out-of-range levels", "[partition]") {
    auto ds = synthesize_blobs(100, 2, 2, 1.0, 3);
    CHECK_THROWS_AS(partition_imbalanced(ds, 0.3, 1), DomainError);
    CHECK_THROWS_AS(partition_imbalanced(ds, 1.2, 1), DomainError);
}

TEST_CASE("partition plan serializes to json with sorted indices", "[partition]") {
    auto ds = synthesize_blobs(20, 2, 2, 1.0, 37);
    auto plan = partition_iid(ds, 2, 3);
    auto j = plan.to_json();
    CHECK(j["imbalance_level"] == "iid");
    CHECK(j["seed"] == 3);
    REQUIRE(j["clients"].size() == 2);
    auto indices = j["clients"][0]["indices"].get<std::vector<std::size_t>>();
    CHECK(std::is_sorted(indices.begin(), indices.end()));
}
