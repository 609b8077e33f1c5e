#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

// Fixed wire frame: 30-byte header plus 8 bytes per parameter.
constexpr std::uint64_t kFrameHeaderBytes = 30;

inline std::uint64_t frame_bytes(std::uint64_t param_count) {
    return kFrameHeaderBytes + 8 * param_count;
}

// Exact frame accounting for one run: per round every client downloads the
// global model and uploads an update (header + 8B per parameter each way);
// registration and shutdown add one 30-byte header-only frame per client
// each.
inline std::uint64_t predict_traffic(std::uint64_t param_count, std::uint64_t n_clients,
                                     std::uint64_t n_rounds) {
    const std::uint64_t round_traffic = n_rounds * n_clients * 2 * frame_bytes(param_count);
    const std::uint64_t handshake = 2 * kFrameHeaderBytes * n_clients;
    return round_traffic + handshake;
}

struct MemoryEstimate {
    std::uint64_t client_bytes = 0;
    std::uint64_t aggregator_bytes = 0;
};

// Deterministic accounting estimates (not RSS): a client holds the
// parameters plus optimizer state (gradient for sgd; gradient and two
// moments for adam) plus two copies of the widest layer's activations per
// batch row; the aggregator holds the global model plus one in-flight
// update per client.
inline MemoryEstimate estimate_memory(const ModelSpec& spec, OptKind optimizer,
                                      std::size_t batch_size, std::size_t n_clients) {
    const std::uint64_t params = parameter_count(spec);
    const std::uint64_t multiplier = optimizer == OptKind::adam ? 3 : 1;
    std::uint64_t widest = 0;
    for (std::size_t w : spec.layer_widths()) widest = std::max<std::uint64_t>(widest, w);

    MemoryEstimate est;
    est.client_bytes =
        8 * (params * (1 + multiplier) + widest * static_cast<std::uint64_t>(batch_size) * 2);
    est.aggregator_bytes = 8 * params * (static_cast<std::uint64_t>(n_clients) + 1);
    return est;
}

// Monotonic wall-clock scope timer.
class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}

    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    void reset() { start_ = std::chrono::steady_clock::now(); }

private:
    std::chrono::steady_clock::time_point start_;
};

// Per-run resource ledger; the time fields are measured, everything else is
// exact accounting.
struct ResourceRecord {
    std::vector<double> client_train_seconds; // per client, summed over rounds
    double global_wall_seconds = 0.0;
    std::uint64_t traffic_bytes_total = 0;
    std::uint64_t traffic_bytes_per_client = 0;
    std::uint64_t memory_client_bytes = 0;
    std::uint64_t memory_aggregator_bytes = 0;
};

} // namespace fedsim
