#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class ModelKind { logistic_regression, sequential_dl };

inline std::string to_string(ModelKind k) {
    return k == ModelKind::logistic_regression ? "logistic_regression" : "sequential_dl";
}

// The two model families: multinomial logistic regression (single affine
// layer + softmax) and the fixed sequential network with hidden widths
// 256/512/128/64/32, ReLU activations, and dropout 0.4 / 0.15 after the
// first two hidden layers. Output is always a C-way softmax.
struct ModelSpec {
    ModelKind kind = ModelKind::logistic_regression;
    std::size_t input_dim = 0;
    std::size_t n_classes = 0;
    double l2 = 0.0;

    static constexpr std::array<std::size_t, 5> kHiddenWidths{256, 512, 128, 64, 32};
    // (hidden layer index, drop probability); inverted dropout at train time.
    static constexpr std::array<std::pair<std::size_t, double>, 2> kDropout{
        {{0, 0.4}, {1, 0.15}}};

    void validate() const {
        if (input_dim == 0) throw DomainError("model spec: input_dim must be positive");
        if (n_classes < 2) throw DomainError("model spec: need at least 2 classes");
        if (l2 < 0) throw DomainError("model spec: l2 must be >= 0");
    }

    std::vector<std::size_t> layer_widths() const {
        std::vector<std::size_t> widths{input_dim};
        if (kind == ModelKind::sequential_dl)
            widths.insert(widths.end(), kHiddenWidths.begin(), kHiddenWidths.end());
        widths.push_back(n_classes);
        return widths;
    }

    double dropout_after_hidden(std::size_t hidden_idx) const {
        if (kind != ModelKind::sequential_dl) return 0.0;
        for (const auto& [idx, p] : kDropout)
            if (idx == hidden_idx) return p;
        return 0.0;
    }
};

// Flat parameter vector layout: layers in order, each as row-major weights
// (fan_in x fan_out) followed by biases (fan_out). This is also the wire
// payload order.
using ParamVector = std::vector<double>;

struct ParamLayout {
    struct Layer {
        std::size_t fan_in, fan_out;
        std::size_t weights_offset, biases_offset;
    };
    std::vector<Layer> layers;
    std::size_t total = 0;

    std::span<const double> weights(const ParamVector& p, std::size_t l) const {
        const auto& L = layers[l];
        return {p.data() + L.weights_offset, L.fan_in * L.fan_out};
    }
    std::span<double> weights(ParamVector& p, std::size_t l) const {
        const auto& L = layers[l];
        return {p.data() + L.weights_offset, L.fan_in * L.fan_out};
    }
    std::span<const double> biases(const ParamVector& p, std::size_t l) const {
        const auto& L = layers[l];
        return {p.data() + L.biases_offset, L.fan_out};
    }
    std::span<double> biases(ParamVector& p, std::size_t l) const {
        const auto& L = layers[l];
        return {p.data() + L.biases_offset, L.fan_out};
    }
};

inline ParamLayout layout_of(const ModelSpec& spec) {
    spec.validate();
    const auto widths = spec.layer_widths();
    ParamLayout layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        ParamLayout::Layer layer;
        layer.fan_in = widths[l];
        layer.fan_out = widths[l + 1];
        layer.weights_offset = offset;
        offset += layer.fan_in * layer.fan_out;
        layer.biases_offset = offset;
        offset += layer.fan_out;
        layout.layers.push_back(layer);
    }
    layout.total = offset;
    return layout;
}

inline std::size_t parameter_count(const ModelSpec& spec) { return layout_of(spec).total; }

// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const ModelSpec& spec, Rng& rng) {
    const auto layout = layout_of(spec);
    ParamVector params(layout.total, 0.0);
    for (std::size_t l = 0; l < layout.layers.size(); ++l) {
        const auto& L = layout.layers[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(L.fan_in + L.fan_out));
        auto w = layout.weights(params, l);
        for (double& x : w) x = limit * (2.0 * rng.next_double() - 1.0);
    }
    return params;
}

struct Batch {
    Matrix features;
    std::vector<std::size_t> labels;
};

struct ForwardCache {
    std::vector<Matrix> inputs;      // input to each affine layer
    std::vector<Matrix> hidden;      // post-ReLU, pre-dropout hidden activations
    std::vector<Matrix> drop_masks;  // scaled masks per hidden layer; 0x0 if none
    Matrix logits;
    Matrix probs;
};

namespace detail {

inline void check_param_length(const ParamLayout& layout, const ParamVector& params) {
    if (params.size() != layout.total)
        throw ShapeError("parameter vector length " + std::to_string(params.size()) +
                         " != expected " + std::to_string(layout.total));
}

inline Matrix affine(const Matrix& a, std::span<const double> w, std::span<const double> b,
                     std::size_t fan_in, std::size_t fan_out) {
    Matrix z(a.rows(), fan_out);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto in = a.row(r);
        auto out = z.row(r);
        std::copy(b.begin(), b.end(), out.begin());
        for (std::size_t i = 0; i < fan_in; ++i) {
            const double x = in[i];
            if (x == 0.0) continue;
            const double* wrow = w.data() + i * fan_out;
            for (std::size_t j = 0; j < fan_out; ++j) out[j] += x * wrow[j];
        }
    }
    return z;
}

inline void softmax_rows(Matrix& z) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
}

} // namespace detail

// Forward pass to class probabilities. dropout_rng == nullptr runs eval
// mode (no dropout, no scaling); otherwise fresh inverted-dropout masks are
// drawn from it. Pass a cache to keep what backprop needs.
inline Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& features,
                      Rng* dropout_rng, ForwardCache* cache = nullptr) {
    const auto layout = layout_of(spec);
    detail::check_param_length(layout, params);
    if (features.cols() != spec.input_dim)
        throw ShapeError("batch width " + std::to_string(features.cols()) +
                         " != input_dim " + std::to_string(spec.input_dim));

    const std::size_t n_layers = layout.layers.size();
    if (cache) {
        cache->inputs.assign(n_layers, Matrix());
        cache->hidden.assign(n_layers > 0 ? n_layers - 1 : 0, Matrix());
        cache->drop_masks.assign(n_layers > 0 ? n_layers - 1 : 0, Matrix());
    }

    Matrix a = features;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& L = layout.layers[l];
        if (cache) cache->inputs[l] = a;
        Matrix z = detail::affine(a, layout.weights(params, l), layout.biases(params, l),
                                  L.fan_in, L.fan_out);
        if (l + 1 == n_layers) {
            if (cache) cache->logits = z;
            detail::softmax_rows(z);
            if (cache) cache->probs = z;
            return z;
        }
        for (double& v : z.data()) v = v > 0.0 ? v : 0.0; // ReLU
        if (cache) cache->hidden[l] = z;
        const double p = spec.dropout_after_hidden(l);
        if (p > 0.0 && dropout_rng) {
            Matrix mask(z.rows(), z.cols());
            const double scale = 1.0 / (1.0 - p);
            for (double& m : mask.data()) m = dropout_rng->next_double() >= p ? scale : 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] *= mask.data()[i];
            if (cache) cache->drop_masks[l] = std::move(mask);
        }
        a = std::move(z);
    }
    throw DomainError("model has no layers"); // unreachable for valid specs
}

inline Matrix predict_proba(const ModelSpec& spec, const ParamVector& params,
                            const Matrix& features) {
    return forward(spec, params, features, nullptr);
}

// Mean cross-entropy over the batch plus (l2/2)*||weights||^2 (biases
// excluded), with the exact gradient of that objective written to `grad` —
// through the sampled dropout masks when dropout_rng is given.
inline double loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                            const Batch& batch, Rng* dropout_rng, ParamVector& grad) {
    const auto layout = layout_of(spec);
    detail::check_param_length(layout, params);
    if (batch.labels.size() != batch.features.rows())
        throw ShapeError("batch labels length " + std::to_string(batch.labels.size()) +
                         " != rows " + std::to_string(batch.features.rows()));
    for (std::size_t c : batch.labels)
        if (c >= spec.n_classes)
            throw ValidationError("label " + std::to_string(c) + " out of range");
    const std::size_t b_rows = batch.features.rows();
    if (b_rows == 0) throw ValidationError("empty batch");

    ForwardCache cache;
    forward(spec, params, batch.features, dropout_rng, &cache);

    // Mean negative log-likelihood via max-subtracted log-sum-exp.
    double loss = 0.0;
    for (std::size_t r = 0; r < b_rows; ++r) {
        auto row = cache.logits.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        loss += mx + std::log(sum) - row[batch.labels[r]];
    }
    loss /= static_cast<double>(b_rows);

    grad.assign(layout.total, 0.0);

    // dZ for the softmax/cross-entropy head.
    Matrix dz = cache.probs;
    for (std::size_t r = 0; r < b_rows; ++r) dz(r, batch.labels[r]) -= 1.0;
    const double inv_b = 1.0 / static_cast<double>(b_rows);
    for (double& v : dz.data()) v *= inv_b;

    for (std::size_t l = layout.layers.size(); l-- > 0;) {
        const auto& L = layout.layers[l];
        const Matrix& a = cache.inputs[l];
        auto dw = layout.weights(grad, l);
        auto db = layout.biases(grad, l);
        for (std::size_t r = 0; r < b_rows; ++r) {
            auto arow = a.row(r);
            auto dzrow = dz.row(r);
            for (std::size_t j = 0; j < L.fan_out; ++j) db[j] += dzrow[j];
            for (std::size_t i = 0; i < L.fan_in; ++i) {
                const double x = arow[i];
                if (x == 0.0) continue;
                double* dwrow = dw.data() + i * L.fan_out;
                for (std::size_t j = 0; j < L.fan_out; ++j) dwrow[j] += x * dzrow[j];
            }
        }
        if (l == 0) break;

        auto w = layout.weights(params, l);
        Matrix da(b_rows, L.fan_in);
        for (std::size_t r = 0; r < b_rows; ++r) {
            auto dzrow = dz.row(r);
            auto darow = da.row(r);
            for (std::size_t i = 0; i < L.fan_in; ++i) {
                const double* wrow = w.data() + i * L.fan_out;
                double acc = 0.0;
                for (std::size_t j = 0; j < L.fan_out; ++j) acc += dzrow[j] * wrow[j];
                darow[i] = acc;
            }
        }
        const Matrix& mask = cache.drop_masks[l - 1];
        if (mask.size() > 0)
            for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] *= mask.data()[i];
        const Matrix& h = cache.hidden[l - 1];
        for (std::size_t i = 0; i < da.size(); ++i)
            if (h.data()[i] <= 0.0) da.data()[i] = 0.0;
        dz = std::move(da);
    }

    if (spec.l2 > 0.0) {
        double penalty = 0.0;
        for (std::size_t l = 0; l < layout.layers.size(); ++l) {
            auto w = layout.weights(params, l);
            auto dw = layout.weights(grad, l);
            for (std::size_t i = 0; i < w.size(); ++i) {
                penalty += w[i] * w[i];
                dw[i] += spec.l2 * w[i];
            }
        }
        loss += 0.5 * spec.l2 * penalty;
    }
    return loss;
}

} // namespace fedsim
