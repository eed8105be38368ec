#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "random.hpp"
#include "targets.hpp"

namespace lmprobe {

/// Training settings for the one-hidden-layer probe. The optimizer is Adam.
struct MlpConfig {
    std::size_t hidden_units = 256;
    double dropout = 0.5;
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Z-score inputs and targets with training statistics; stored in the probe.
    bool standardize_inputs = true;
    bool standardize_targets = true;

    void validate() const {
        if (hidden_units == 0) throw Error(ErrorKind::InvalidConfig, "hidden_units must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout must lie in [0, 1)");
        if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be positive");
        if (epochs == 0) throw Error(ErrorKind::InvalidConfig, "epochs must be positive");
        if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
            throw Error(ErrorKind::InvalidConfig, "Adam moments must lie in [0, 1) with epsilon > 0");
        }
    }
};

/// input → hidden (GELU) → output.
struct MlpParams {
    Matrix w1;  // m × h
    Vector b1;  // h
    Matrix w2;  // h × k
    Vector b2;  // k

    static MlpParams zeros_like(const MlpParams& p) {
        return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Vector::Zero(p.b1.size()),
                Matrix::Zero(p.w2.rows(), p.w2.cols()), Vector::Zero(p.b2.size())};
    }
    bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }
    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        return a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
    }
};

struct MlpProbe {
    MlpParams params;
    MlpConfig config;
    std::uint64_t seed = 0;
    TargetKind target_kind = TargetKind::point;
    // Affine normalization applied around the network: x' = (x - x_mean) / x_scale,
    // y = y' * y_scale + y_mean. Identity when standardization is off.
    Vector x_mean, x_scale, y_mean, y_scale;
    double final_loss = 0.0;  // mean training loss over the last epoch, in normalized units

    Eigen::Index input_size() const noexcept { return params.w1.rows(); }
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

/// Inference pass on already-normalized inputs (no dropout).
inline Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
    const Matrix hidden = ((x * p.w1).rowwise() + p.b1.transpose()).unaryExpr([](double v) { return gelu(v); });
    return (hidden * p.w2).rowwise() + p.b2.transpose();
}

/// Mean squared error over all B×k entries and, when `grad` is non-null, its
/// gradient. `dropout_mask` (B×h, entries 0 or 1/(1-p)) multiplies the hidden
/// activations; pass nullptr to disable dropout.
inline double mlp_loss_and_gradients(const MlpParams& p, const Matrix& x, const Matrix& y, const Matrix* dropout_mask,
                                     MlpParams* grad) {
    const Matrix pre = (x * p.w1).rowwise() + p.b1.transpose();
    Matrix hidden = pre.unaryExpr([](double v) { return gelu(v); });
    if (dropout_mask) hidden.array() *= dropout_mask->array();
    const Matrix out = (hidden * p.w2).rowwise() + p.b2.transpose();
    const Matrix diff = out - y;
    const double count = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / count;

    if (grad) {
        const Matrix d_out = diff * (2.0 / count);
        grad->w2 = hidden.transpose() * d_out;
        grad->b2 = d_out.colwise().sum().transpose();
        Matrix d_hidden = d_out * p.w2.transpose();
        if (dropout_mask) d_hidden.array() *= dropout_mask->array();
        const Matrix d_pre = d_hidden.cwiseProduct(pre.unaryExpr([](double v) { return gelu_derivative(v); }));
        grad->w1 = x.transpose() * d_pre;
        grad->b1 = d_pre.colwise().sum().transpose();
    }
    return loss;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
inline MlpParams init_mlp_params(Eigen::Index inputs, Eigen::Index hidden, Eigen::Index outputs, Rng& rng) {
    const auto fill = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
        Matrix m(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
        return m;
    };
    const double b_in = 1.0 / std::sqrt(static_cast<double>(inputs));
    const double b_hid = 1.0 / std::sqrt(static_cast<double>(hidden));
    MlpParams p;
    p.w1 = fill(inputs, hidden, b_in);
    p.b1 = fill(hidden, 1, b_in);
    p.w2 = fill(hidden, outputs, b_hid);
    p.b2 = fill(outputs, 1, b_hid);
    return p;
}

namespace detail {

struct ColumnStats {
    Vector mean;
    Vector scale;
};

inline ColumnStats column_stats(const Matrix& m, bool enabled) {
    ColumnStats s{Vector::Zero(m.cols()), Vector::Ones(m.cols())};
    if (!enabled) return s;
    s.mean = m.colwise().mean().transpose();
    const Matrix centered = m.rowwise() - s.mean.transpose();
    s.scale = (centered.colwise().squaredNorm() / static_cast<double>(m.rows())).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
        if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
    }
    return s;
}

inline Matrix normalize(const Matrix& m, const Vector& mean, const Vector& scale) {
    return (m.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

template <typename M>
void adam_step(M& param, const M& g, M& m1, M& m2, const MlpConfig& c, double bias1, double bias2) {
    m1 = c.beta1 * m1 + (1.0 - c.beta1) * g;
    m2 = c.beta2 * m2 + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m1.array() / bias1) / ((m2.array() / bias2).sqrt() + c.epsilon);
}

}  // namespace detail

/// Minibatch Adam on MSE with inverted dropout on the hidden layer.
/// Everything random (init, batch order, dropout masks) comes from `seed`,
/// and execution order is fixed, so equal inputs give bit-identical probes.
inline MlpProbe fit_mlp(const Matrix& x, const Matrix& y, TargetKind kind, const MlpConfig& config,
                        std::uint64_t seed) {
    config.validate();
    detail::check_training_inputs(x, y, kind);

    MlpProbe probe;
    probe.config = config;
    probe.seed = seed;
    probe.target_kind = kind;
    const auto xs = detail::column_stats(x, config.standardize_inputs);
    const auto ys = detail::column_stats(y, config.standardize_targets);
    probe.x_mean = xs.mean;
    probe.x_scale = xs.scale;
    probe.y_mean = ys.mean;
    probe.y_scale = ys.scale;
    const Matrix xn = detail::normalize(x, xs.mean, xs.scale);
    const Matrix yn = detail::normalize(y, ys.mean, ys.scale);

    Rng rng(seed);
    const auto hidden = static_cast<Eigen::Index>(config.hidden_units);
    auto& p = probe.params;
    p = init_mlp_params(x.cols(), hidden, y.cols(), rng);
    MlpParams m1 = MlpParams::zeros_like(p), m2 = MlpParams::zeros_like(p), g = MlpParams::zeros_like(p);

    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double keep = 1.0 - config.dropout;
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const auto stop = std::min(n, start + config.batch_size);
            const std::span<const std::size_t> ids(order.data() + start, stop - start);
            const Matrix xb = select_rows(xn, ids);
            const Matrix yb = select_rows(yn, ids);

            std::optional<Matrix> mask;
            if (config.dropout > 0.0) {
                mask.emplace(xb.rows(), hidden);
                for (Eigen::Index r = 0; r < mask->rows(); ++r)
                    for (Eigen::Index c = 0; c < hidden; ++c) (*mask)(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
            }
            const double loss = mlp_loss_and_gradients(p, xb, yb, mask ? &*mask : nullptr, &g);
            if (!std::isfinite(loss)) {
                throw Error(ErrorKind::DivergedTraining, "loss became non-finite at epoch " + std::to_string(epoch));
            }
            ++step;
            const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            detail::adam_step(p.w1, g.w1, m1.w1, m2.w1, config, bias1, bias2);
            detail::adam_step(p.b1, g.b1, m1.b1, m2.b1, config, bias1, bias2);
            detail::adam_step(p.w2, g.w2, m1.w2, m2.w2, config, bias1, bias2);
            detail::adam_step(p.b2, g.b2, m1.b2, m2.b2, config, bias1, bias2);
            epoch_loss += loss;
            ++batches;
        }
        probe.final_loss = epoch_loss / static_cast<double>(batches);
    }
    if (!p.all_finite()) throw Error(ErrorKind::DivergedTraining, "parameters became non-finite");
    return probe;
}

/// Deterministic forward pass with dropout disabled.
inline Matrix predict_mlp(const MlpProbe& probe, const Matrix& x) {
    if (x.cols() != probe.input_size()) {
        throw Error(ErrorKind::DimensionMismatch, "probe expects " + std::to_string(probe.input_size()) +
                                                      " features, got " + std::to_string(x.cols()));
    }
    const Matrix out_n = mlp_forward(probe.params, detail::normalize(x, probe.x_mean, probe.x_scale));
    Matrix out = (out_n.array().rowwise() * probe.y_scale.transpose().array()).matrix().rowwise() +
                 probe.y_mean.transpose();
    if (probe.target_kind == TargetKind::box) canonicalize_boxes(out);
    return out;
}

/// A probe with the given parameters and identity normalization.
inline MlpProbe make_mlp_probe(MlpParams params, TargetKind kind, const MlpConfig& config = {}, std::uint64_t seed = 0) {
    MlpProbe probe;
    probe.config = config;
    probe.seed = seed;
    probe.target_kind = kind;
    probe.x_mean = Vector::Zero(params.w1.rows());
    probe.x_scale = Vector::Ones(params.w1.rows());
    probe.y_mean = Vector::Zero(params.w2.cols());
    probe.y_scale = Vector::Ones(params.w2.cols());
    probe.params = std::move(params);
    return probe;
}

}  // namespace lmprobe
