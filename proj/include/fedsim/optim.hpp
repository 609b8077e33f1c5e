#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/model.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class OptKind { sgd, adam };

inline std::string to_string(OptKind k) { return k == OptKind::sgd ? "sgd" : "adam"; }

struct OptimizerSpec {
    OptKind kind = OptKind::sgd;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Owns per-parameter state; one instance per client, never shared.
class Optimizer {
public:
    Optimizer(OptimizerSpec spec, std::size_t param_count) : spec_(spec) {
        if (spec_.learning_rate <= 0) throw DomainError("optimizer: learning rate must be > 0");
        if (spec_.kind == OptKind::adam) {
            m_.assign(param_count, 0.0);
            v_.assign(param_count, 0.0);
        }
        param_count_ = param_count;
    }

    const OptimizerSpec& spec() const { return spec_; }
    std::uint64_t step_count() const { return steps_; }
    std::span<const double> first_moment() const { return m_; }
    std::span<const double> second_moment() const { return v_; }

    void step(std::span<double> params, std::span<const double> grad) {
        if (params.size() != param_count_ || grad.size() != param_count_)
            throw ShapeError("optimizer step: params " + std::to_string(params.size()) +
                             ", grad " + std::to_string(grad.size()) + ", state " +
                             std::to_string(param_count_));
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!std::isfinite(grad[i]))
                throw NumericError("non-finite gradient at index " + std::to_string(i));

        steps_++;
        if (spec_.kind == OptKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= spec_.learning_rate * grad[i];
            return;
        }
        const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * grad[i];
            v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * grad[i] * grad[i];
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            params[i] -= spec_.learning_rate * m_hat / (std::sqrt(v_hat) + spec_.epsilon);
        }
    }

private:
    OptimizerSpec spec_;
    std::size_t param_count_ = 0;
    std::vector<double> m_, v_;
    std::uint64_t steps_ = 0;
};

struct TrainResult {
    ParamVector params;
    std::vector<double> epoch_losses; // batch-size-weighted mean objective per epoch
};

// Mini-batch training: per epoch a seeded shuffle, batches of `batch_size`
// (last one smaller), fresh dropout masks per batch. epochs = 0 returns the
// parameters unchanged.
inline TrainResult train_epochs(const ModelSpec& spec, ParamVector params, Optimizer& opt,
                                const Matrix& features, const std::vector<std::size_t>& labels,
                                std::size_t epochs, std::size_t batch_size, Rng& rng) {
    if (features.rows() == 0) throw ValidationError("train_epochs: empty dataset");
    if (labels.size() != features.rows())
        throw ShapeError("train_epochs: labels length " + std::to_string(labels.size()) +
                         " != rows " + std::to_string(features.rows()));
    if (batch_size == 0) throw DomainError("train_epochs: batch_size must be positive");

    TrainResult out;
    const std::size_t n = features.rows();
    std::vector<std::size_t> order(n);
    Batch batch;
    ParamVector grad;
    const bool uses_dropout =
        spec.kind == ModelKind::sequential_dl; // eval path never draws masks

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t count = std::min(batch_size, n - start);
            batch.features = Matrix(count, features.cols());
            batch.labels.resize(count);
            for (std::size_t r = 0; r < count; ++r) {
                const auto src = features.row(order[start + r]);
                std::copy(src.begin(), src.end(), batch.features.row(r).begin());
                batch.labels[r] = labels[order[start + r]];
            }
            const double loss =
                loss_and_grad(spec, params, batch, uses_dropout ? &rng : nullptr, grad);
            opt.step(params, grad);
            epoch_loss += loss * static_cast<double>(count);
        }
        out.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    out.params = std::move(params);
    return out;
}

} // namespace fedsim
