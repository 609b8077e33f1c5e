#pragma once

#include <cstdint>
#include <exception>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/meter.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/numerics.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

// Epochs per round with the total held constant: base floor(E/R), the first
// E mod R rounds get one extra.
struct RoundSchedule {
    std::size_t total_epochs = 0;
    std::size_t n_rounds = 0;
    std::vector<std::size_t> epochs_per_round;
};

inline RoundSchedule make_schedule(std::size_t total_epochs, std::size_t n_rounds) {
    if (n_rounds == 0) throw ValidationError("schedule: need at least one round");
    if (total_epochs < n_rounds)
        throw ValidationError("schedule: total epochs " + std::to_string(total_epochs) +
                              " below round count " + std::to_string(n_rounds));
    RoundSchedule s{total_epochs, n_rounds, {}};
    const std::size_t base = total_epochs / n_rounds;
    const std::size_t rem = total_epochs % n_rounds;
    for (std::size_t r = 0; r < n_rounds; ++r) s.epochs_per_round.push_back(base + (r < rem));
    return s;
}

// Gaussian parameter perturbation applied client-side before upload.
struct NoiseSpec {
    double sigma = 0.0;
};

struct ClientUpdate {
    std::uint32_t client_id = 0;
    std::size_t round = 0;
    ParamVector params; // post-noise, exactly what goes on the wire
    std::size_t n_samples = 0;
    EvalReport local_report; // trained (pre-noise) model on the client's test split
    double train_seconds = 0.0;
    std::size_t epochs_run = 0;
    std::uint64_t bytes_would_send = 0;
};

struct AggregatorState {
    ParamVector global_params;
    std::size_t round = 0;
    std::size_t expected_clients = 0;
    std::set<std::uint32_t> received;
    double server_lr = 1.0;
};

// Sample-count-weighted parameter mean, no clipping, no zeroing. Summation
// runs in ascending client id order so the result is independent of arrival
// order. With server_lr = 1 the update is exactly the weighted mean.
inline ParamVector fedavg(const std::vector<ClientUpdate>& updates,
                          const AggregatorState& state) {
    if (updates.size() != state.expected_clients) {
        std::string missing;
        for (std::uint32_t id = 0; id < state.expected_clients; ++id) {
            bool found = false;
            for (const auto& u : updates) found = found || u.client_id == id;
            if (!found) missing += (missing.empty() ? "" : ", ") + std::to_string(id);
        }
        throw ProtocolError("synchronous round " + std::to_string(state.round) +
                            " incomplete; missing client ids: " + missing);
    }
    std::vector<const ClientUpdate*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const ClientUpdate* a, const ClientUpdate* b) {
                  return a->client_id < b->client_id;
              });

    double total = 0.0;
    for (const auto* u : ordered) {
        if (u->round != state.round)
            throw ProtocolError("update from client " + std::to_string(u->client_id) +
                                " is for round " + std::to_string(u->round) + ", expected " +
                                std::to_string(state.round));
        if (u->params.size() != state.global_params.size())
            throw ShapeError("update length " + std::to_string(u->params.size()) +
                             " != global length " + std::to_string(state.global_params.size()));
        total += static_cast<double>(u->n_samples);
    }
    if (total <= 0.0) throw DomainError("fedavg: zero total sample count");

    ParamVector mean(state.global_params.size(), 0.0);
    for (const auto* u : ordered) {
        const double w = static_cast<double>(u->n_samples) / total;
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += w * u->params[i];
    }
    if (state.server_lr == 1.0) return mean;
    ParamVector out = state.global_params;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += state.server_lr * (mean[i] - out[i]);
    return out;
}

struct ClientData {
    Dataset train;
    Dataset test;
};

// One client's round: copy the broadcast parameters, train locally with a
// fresh optimizer, evaluate on the local test split, then perturb every
// parameter with i.i.d. N(0, sigma^2) before packaging. The rng must be the
// per-(client, round) stream; training consumes its "train" child and the
// noise its "noise" child.
inline ClientUpdate client_round(const ClientData& data, const ParamVector& global_params,
                                 std::size_t epochs, const ModelSpec& model,
                                 const OptimizerSpec& optimizer, std::size_t batch_size,
                                 const NoiseSpec& noise, const Rng& rng,
                                 std::uint32_t client_id, std::size_t round) {
    if (noise.sigma < 0) throw DomainError("noise sigma must be >= 0");
    if (data.train.size() == 0)
        throw ValidationError("client " + std::to_string(client_id) + ": empty training set");

    ClientUpdate update;
    update.client_id = client_id;
    update.round = round;
    update.n_samples = data.train.size();
    update.epochs_run = epochs;

    Optimizer opt(optimizer, global_params.size());
    Rng train_rng = rng.split("train");
    Stopwatch timer;
    auto trained = train_epochs(model, global_params, opt, data.train.features,
                                data.train.labels, epochs, batch_size, train_rng);
    update.train_seconds = timer.seconds();
    update.local_report = evaluate(model, trained.params, data.test.features, data.test.labels);

    update.params = std::move(trained.params);
    if (noise.sigma > 0) {
        Rng noise_rng = rng.split("noise");
        const auto draws = noise_rng.gaussian(update.params.size(), 0.0, noise.sigma);
        for (std::size_t i = 0; i < update.params.size(); ++i) update.params[i] += draws[i];
    }
    update.bytes_would_send = frame_bytes(update.params.size());
    return update;
}

// Everything a run needs, data already sharded. Stream derivation from
// `seed`: split("init") seeds the global parameters; client i's round r uses
// Rng(seed).split("client", i).split("round", r).
struct FederatedRun {
    ModelSpec model;
    OptimizerSpec optimizer;
    std::size_t batch_size = 512;
    RoundSchedule schedule;
    NoiseSpec noise;
    std::uint64_t seed = 0;
    std::vector<ClientData> clients;
    Dataset pooled_test;
};

struct RoundMetrics {
    std::size_t round = 0;
    EvalReport global_report;            // global model on the pooled test set
    EvalReport client_aggregate;         // sample-weighted mean of local reports
    std::vector<double> client_seconds;  // this round, per client
};

struct RunResult {
    ParamVector final_params;
    std::vector<RoundMetrics> rounds;
    ResourceRecord resources;
    std::vector<std::size_t> client_epochs; // executed epochs per client, all rounds
};

// Client protocol loop, shared by in-process simulation and the standalone
// CLI client. Appends one ClientUpdate per round to `records` if given.
inline void run_client(const ClientData& data, const ModelSpec& model,
                       const OptimizerSpec& optimizer, const RoundSchedule& schedule,
                       std::size_t batch_size, const NoiseSpec& noise, std::uint64_t run_seed,
                       std::uint32_t client_id, ClientEndpoint& endpoint,
                       std::vector<ClientUpdate>* records = nullptr) {
    endpoint.send(WireMessage{MsgKind::register_client, 0, client_id, 0, {}});
    const Rng client_rng = Rng(run_seed).split("client", client_id);
    while (true) {
        const WireMessage msg = endpoint.receive();
        if (msg.kind == MsgKind::shutdown) break;
        if (msg.kind != MsgKind::global_model)
            throw ProtocolError("client " + std::to_string(client_id) +
                                ": unexpected message kind");
        const std::size_t round = msg.round;
        if (round >= schedule.n_rounds)
            throw ProtocolError("client " + std::to_string(client_id) + ": round " +
                                std::to_string(round) + " outside the schedule");
        auto update = client_round(data, msg.params, schedule.epochs_per_round[round], model,
                                   optimizer, batch_size, noise, client_rng.split("round", round),
                                   client_id, round);
        endpoint.send(WireMessage{MsgKind::client_update, msg.round, client_id,
                                  update.n_samples, update.params});
        if (records) records->push_back(std::move(update));
    }
}

struct AggregatorRunSpec {
    ModelSpec model;
    RoundSchedule schedule;
    std::uint64_t seed = 0;
    std::size_t n_clients = 0;
    Dataset pooled_test;
};

struct AggregatorResult {
    ParamVector final_params;
    std::vector<EvalReport> round_reports;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
};

// Aggregator protocol loop: registration barrier, then per round broadcast /
// collect-all / average / evaluate, then shutdown broadcast.
inline AggregatorResult run_aggregator(const AggregatorRunSpec& spec,
                                       AggregatorEndpoint& endpoint) {
    endpoint.start(spec.n_clients);

    AggregatorState state;
    state.expected_clients = spec.n_clients;
    for (std::size_t i = 0; i < spec.n_clients; ++i) {
        const WireMessage msg = endpoint.receive();
        if (msg.kind != MsgKind::register_client)
            throw ProtocolError("expected registration, got kind " +
                                std::to_string(static_cast<int>(msg.kind)));
        if (msg.client_id >= spec.n_clients)
            throw ProtocolError("client id " + std::to_string(msg.client_id) +
                                " outside expected range");
        if (!state.received.insert(msg.client_id).second)
            throw ProtocolError("duplicate registration from client " +
                                std::to_string(msg.client_id));
    }
    state.received.clear();

    Rng init_rng = Rng(spec.seed).split("init");
    state.global_params = init_params(spec.model, init_rng);

    AggregatorResult result;
    for (std::size_t round = 0; round < spec.schedule.n_rounds; ++round) {
        state.round = round;
        for (std::size_t i = 0; i < spec.n_clients; ++i)
            endpoint.send(static_cast<std::uint32_t>(i),
                          WireMessage{MsgKind::global_model, static_cast<std::uint32_t>(round),
                                      static_cast<std::uint32_t>(i), 0, state.global_params});

        std::vector<ClientUpdate> updates;
        updates.reserve(spec.n_clients);
        state.received.clear();
        for (std::size_t i = 0; i < spec.n_clients; ++i) {
            WireMessage msg;
            try {
                msg = endpoint.receive();
            } catch (const ProtocolError& e) {
                throw ProtocolError(std::string(e.what()) + " during round " +
                                    std::to_string(round));
            }
            if (msg.kind != MsgKind::client_update)
                throw ProtocolError("expected client_update in round " + std::to_string(round));
            if (!state.received.insert(msg.client_id).second)
                throw ProtocolError("duplicate update from client " +
                                    std::to_string(msg.client_id) + " in round " +
                                    std::to_string(round));
            ClientUpdate u;
            u.client_id = msg.client_id;
            u.round = msg.round;
            u.n_samples = msg.n_samples;
            u.params = std::move(msg.params);
            updates.push_back(std::move(u));
        }
        state.global_params = fedavg(updates, state);
        result.round_reports.push_back(evaluate(spec.model, state.global_params,
                                                spec.pooled_test.features,
                                                spec.pooled_test.labels));
    }

    for (std::size_t i = 0; i < spec.n_clients; ++i)
        endpoint.send(static_cast<std::uint32_t>(i), WireMessage{MsgKind::shutdown, 0, 0, 0, {}});

    result.final_params = std::move(state.global_params);
    result.bytes_sent = endpoint.bytes_sent();
    result.bytes_received = endpoint.bytes_received();
    return result;
}

// Full simulation: aggregator in the calling thread, one thread per client,
// all messages through the given transport. Deterministic for a fixed seed
// regardless of transport or scheduling; client errors resurface tagged with
// the client id.
inline RunResult run_federated(const FederatedRun& run, TransportFactory& transport) {
    const std::size_t n = run.clients.size();
    if (n == 0) throw ValidationError("run_federated: no clients");
    run.model.validate();

    Stopwatch wall;
    auto aggregator = transport.make_aggregator(n);

    std::vector<std::vector<ClientUpdate>> records(n);
    std::vector<std::exception_ptr> failures(n);
    std::vector<std::thread> threads;
    threads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        threads.emplace_back([&, i] {
            try {
                auto endpoint = transport.make_client(static_cast<std::uint32_t>(i));
                run_client(run.clients[i], run.model, run.optimizer, run.schedule,
                           run.batch_size, run.noise, run.seed,
                           static_cast<std::uint32_t>(i), *endpoint, &records[i]);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        });
    }

    AggregatorRunSpec agg_spec{run.model, run.schedule, run.seed, n, run.pooled_test};
    AggregatorResult agg_result;
    std::exception_ptr agg_failure;
    try {
        agg_result = run_aggregator(agg_spec, *aggregator);
    } catch (...) {
        agg_failure = std::current_exception();
    }
    aggregator.reset(); // unblocks clients if the run aborted
    for (auto& t : threads) t.join();

    for (std::size_t i = 0; i < n; ++i) {
        if (!failures[i]) continue;
        try {
            std::rethrow_exception(failures[i]);
        } catch (const ProtocolError&) {
            if (!agg_failure) agg_failure = failures[i];
        } catch (const std::exception& e) {
            throw ValidationError("client " + std::to_string(i) + ": " + e.what());
        }
    }
    if (agg_failure) std::rethrow_exception(agg_failure);

    RunResult result;
    result.final_params = std::move(agg_result.final_params);
    result.client_epochs.assign(n, 0);

    const std::size_t n_rounds = run.schedule.n_rounds;
    for (std::size_t r = 0; r < n_rounds; ++r) {
        RoundMetrics rm;
        rm.round = r;
        rm.global_report = agg_result.round_reports[r];
        rm.client_seconds.resize(n);
        std::vector<EvalReport> locals(n);
        std::vector<std::size_t> weights(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (records[i].size() != n_rounds)
                throw ProtocolError("client " + std::to_string(i) + " completed " +
                                    std::to_string(records[i].size()) + " of " +
                                    std::to_string(n_rounds) + " rounds");
            rm.client_seconds[i] = records[i][r].train_seconds;
            locals[i] = records[i][r].local_report;
            weights[i] = records[i][r].n_samples;
        }
        rm.client_aggregate = aggregate_client_metrics(locals, weights);
        result.rounds.push_back(std::move(rm));
    }

    auto& res = result.resources;
    res.global_wall_seconds = wall.seconds();
    res.client_train_seconds.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& u : records[i]) {
            res.client_train_seconds[i] += u.train_seconds;
            result.client_epochs[i] += u.epochs_run;
        }
    }
    res.traffic_bytes_total = agg_result.bytes_sent + agg_result.bytes_received;
    const std::uint64_t predicted =
        predict_traffic(parameter_count(run.model), n, n_rounds);
    if (res.traffic_bytes_total != predicted)
        throw NumericError("measured traffic " + std::to_string(res.traffic_bytes_total) +
                           " bytes != predicted " + std::to_string(predicted));
    res.traffic_bytes_per_client = res.traffic_bytes_total / n;
    const auto mem = estimate_memory(run.model, run.optimizer.kind, run.batch_size, n);
    res.memory_client_bytes = mem.client_bytes;
    res.memory_aggregator_bytes = mem.aggregator_bytes;
    return result;
}

} // namespace fedsim
