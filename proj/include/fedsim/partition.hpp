#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

// Assignment of dataset rows to simulated clients. Assignments are pairwise
// disjoint; `dropped` records rows left unassigned by the equal-size rule of
// the imbalanced generator.
struct PartitionPlan {
    std::vector<std::vector<std::size_t>> assignments;
    std::optional<double> imbalance_level; // empty = IID
    std::uint64_t seed = 0;
    std::vector<std::size_t> dropped;

    std::size_t n_clients() const { return assignments.size(); }

    // Per-client class histogram against a dataset.
    std::vector<std::vector<std::size_t>> histograms(const Dataset& ds) const {
        std::vector<std::vector<std::size_t>> out(assignments.size(),
                                                  std::vector<std::size_t>(ds.n_classes, 0));
        for (std::size_t i = 0; i < assignments.size(); ++i)
            for (std::size_t idx : assignments[i]) out[i][ds.labels[idx]]++;
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        if (imbalance_level)
            j["imbalance_level"] = *imbalance_level;
        else
            j["imbalance_level"] = "iid";
        j["dropped"] = dropped;
        auto& clients = j["clients"];
        clients = nlohmann::json::array();
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            auto sorted = assignments[i];
            std::sort(sorted.begin(), sorted.end());
            clients.push_back({{"id", i}, {"indices", sorted}});
        }
        return j;
    }

    void save_json(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ValidationError("cannot open plan file for writing: " + path);
        out << to_json().dump(2) << "\n";
    }
};

// Every client receives floor(count/n) samples of each class, with each
// class's remainder assigned to a rotating window of clients so total client
// sizes stay within one of each other.
inline PartitionPlan partition_iid(const Dataset& ds, std::size_t n_clients,
                                   std::uint64_t seed) {
    if (n_clients == 0) throw DomainError("partition_iid: need at least one client");
    PartitionPlan plan;
    plan.seed = seed;
    plan.assignments.resize(n_clients);

    Rng root(seed);
    const auto by_class = ds.indices_by_class();
    std::size_t rotation = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        if (idx.size() < n_clients)
            throw ValidationError("partition_iid: class " + std::to_string(c) + " has " +
                                  std::to_string(idx.size()) + " samples for " +
                                  std::to_string(n_clients) + " clients");
        Rng rng = root.split("class", c);
        rng.shuffle(idx);
        const std::size_t base = idx.size() / n_clients;
        const std::size_t rem = idx.size() % n_clients;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n_clients; ++i) {
            const bool extra = ((i + n_clients - rotation % n_clients) % n_clients) < rem;
            const std::size_t take = base + (extra ? 1 : 0);
            auto& dst = plan.assignments[i];
            dst.insert(dst.end(), idx.begin() + pos, idx.begin() + pos + take);
            pos += take;
        }
        rotation += rem;
    }
    return plan;
}

// Closed-form per-client class counts for the imbalance generator: client i's
// home class is class i; it holds round(level * client_size) home samples and
// spreads the remainder evenly over the other classes, extras going to the
// lowest class indices.
inline std::vector<std::vector<std::size_t>> imbalanced_counts(std::size_t n_classes,
                                                               std::size_t client_size,
                                                               double level) {
    std::vector<std::vector<std::size_t>> counts(n_classes,
                                                 std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < n_classes; ++i) {
        auto home = static_cast<std::size_t>(
            std::llround(level * static_cast<double>(client_size)));
        home = std::min(home, client_size);
        const std::size_t rest = client_size - home;
        const std::size_t others = n_classes - 1;
        const std::size_t base = rest / others;
        const std::size_t rem = rest % others;
        counts[i][i] = home;
        std::size_t rank = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (c == i) continue;
            counts[i][c] = base + (rank < rem ? 1 : 0);
            rank++;
        }
    }
    return counts;
}

// One client per class, equal client sizes floor(n/C). level is the home
// class fraction: 1/C reproduces the uniform distribution, 1 gives
// single-class clients. Rows left over by the equal-size rule are dropped
// and recorded in the plan.
inline PartitionPlan partition_imbalanced(const Dataset& ds, double level,
                                          std::uint64_t seed) {
    const std::size_t c_count = ds.n_classes;
    if (c_count < 2) throw DomainError("partition_imbalanced: need at least 2 classes");
    const double lo = 1.0 / static_cast<double>(c_count);
    if (level < lo - 1e-12 || level > 1.0 + 1e-12)
        throw DomainError("partition_imbalanced: level must lie in [1/C, 1]");
    level = std::clamp(level, lo, 1.0);

    const std::size_t client_size = ds.size() / c_count;
    if (client_size == 0) throw ValidationError("partition_imbalanced: dataset too small");
    const auto counts = imbalanced_counts(c_count, client_size, level);

    const auto class_counts = ds.class_counts();
    for (std::size_t c = 0; c < c_count; ++c) {
        std::size_t demand = 0;
        for (std::size_t i = 0; i < c_count; ++i) demand += counts[i][c];
        if (demand > class_counts[c])
            throw ValidationError("partition_imbalanced: class " + std::to_string(c) +
                                  " short by " + std::to_string(demand - class_counts[c]) +
                                  " samples");
    }

    Rng root(seed);
    auto pools = ds.indices_by_class();
    for (std::size_t c = 0; c < c_count; ++c) {
        Rng rng = root.split("class", c);
        rng.shuffle(pools[c]);
    }

    PartitionPlan plan;
    plan.seed = seed;
    plan.imbalance_level = level;
    plan.assignments.resize(c_count);
    std::vector<std::size_t> cursor(c_count, 0);
    for (std::size_t i = 0; i < c_count; ++i) {
        for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t take = counts[i][c];
            auto& dst = plan.assignments[i];
            dst.insert(dst.end(), pools[c].begin() + cursor[c],
                       pools[c].begin() + cursor[c] + take);
            cursor[c] += take;
        }
    }
    for (std::size_t c = 0; c < c_count; ++c)
        plan.dropped.insert(plan.dropped.end(), pools[c].begin() + cursor[c], pools[c].end());
    return plan;
}

} // namespace fedsim
