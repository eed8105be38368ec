#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "targets.hpp"

namespace lmprobe {

struct RidgeOptions {
    /// Scale centered features to unit (population) variance before solving.
    bool standardize = false;
};

/// y ≈ x·weights + intercept, with weights penalized by lambda·‖weights‖².
struct RidgeProbe {
    Matrix weights;    // m × k
    Vector intercept;  // k
    double lambda = 0.0;
    TargetKind target_kind = TargetKind::point;
    bool standardized = false;

    Eigen::Index input_size() const noexcept { return weights.rows(); }
    Eigen::Index output_size() const noexcept { return weights.cols(); }
};

namespace detail {

inline Vector column_scale(const Matrix& centered) {
    Vector scale = (centered.colwise().squaredNorm() / static_cast<double>(centered.rows())).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        if (!(scale(j) > 0.0)) scale(j) = 1.0;
    }
    return scale;
}

}  // namespace detail

/// Closed-form ridge on centered data; the intercept is not penalized.
/// lambda == 0 with rank-deficient centered X raises SingularSystem.
inline RidgeProbe fit_ridge(const Matrix& x, const Matrix& y, double lambda, TargetKind kind,
                            const RidgeOptions& options = {}) {
    detail::check_training_inputs(x, y, kind);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorKind::InvalidConfig, "lambda must be finite and >= 0");
    }

    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    Matrix xc = x.rowwise() - x_mean;
    const Matrix yc = y.rowwise() - y_mean;

    Vector scale = Vector::Ones(x.cols());
    if (options.standardize) {
        scale = detail::column_scale(xc);
        xc = xc.array().rowwise() / scale.transpose().array();
    }

    const auto n = xc.rows();
    const auto m = xc.cols();
    Matrix theta;
    if (lambda == 0.0) {
        Eigen::ColPivHouseholderQR<Matrix> qr(xc);
        if (qr.rank() < m) {
            throw Error(ErrorKind::SingularSystem, "centered X has rank " + std::to_string(qr.rank()) + " < " +
                                                       std::to_string(m) + " columns and lambda = 0");
        }
        theta = qr.solve(yc);
    } else if (m <= n) {
        Matrix gram = xc.transpose() * xc;
        gram.diagonal().array() += lambda;
        Eigen::LLT<Matrix> llt(gram);
        if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularSystem, "penalized Gram matrix not SPD");
        theta = llt.solve(xc.transpose() * yc);
    } else {
        // m > n: solve the n×n dual system, θ = Xcᵀ(XcXcᵀ + λI)⁻¹Yc.
        Matrix kernel = xc * xc.transpose();
        kernel.diagonal().array() += lambda;
        Eigen::LLT<Matrix> llt(kernel);
        if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularSystem, "penalized kernel not SPD");
        theta = xc.transpose() * llt.solve(yc);
    }

    RidgeProbe probe;
    probe.weights = theta.array().colwise() / scale.array();
    probe.intercept = (y_mean - x_mean * probe.weights).transpose();
    probe.lambda = lambda;
    probe.target_kind = kind;
    probe.standardized = options.standardize;
    if (!probe.weights.allFinite() || !probe.intercept.allFinite()) {
        throw Error(ErrorKind::SingularSystem, "solve produced non-finite weights");
    }
    return probe;
}

/// x·weights + intercept; box predictions are re-canonicalized to min <= max.
inline Matrix predict_ridge(const RidgeProbe& probe, const Matrix& x) {
    if (x.cols() != probe.input_size()) {
        throw Error(ErrorKind::DimensionMismatch, "probe expects " + std::to_string(probe.input_size()) +
                                                      " features, got " + std::to_string(x.cols()));
    }
    Matrix out = (x * probe.weights).rowwise() + probe.intercept.transpose();
    if (probe.target_kind == TargetKind::box) canonicalize_boxes(out);
    return out;
}

struct LambdaSelection {
    double lambda = 0.0;
    std::vector<double> cv_error;  // per grid entry; +inf where the fit failed
};

/// K-fold cross-validation over the grid. Row i goes to fold i mod K.
/// Error is the mean squared residual over all held-out entries; ties go to the larger lambda.
inline LambdaSelection select_lambda_detailed(const Matrix& x, const Matrix& y, std::span<const double> grid,
                                              std::size_t folds, TargetKind kind,
                                              const RidgeOptions& options = {}) {
    if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "lambda grid is empty");
    for (double l : grid) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorKind::InvalidConfig, "lambda grid entries must be >= 0");
    }
    const auto n = static_cast<std::size_t>(x.rows());
    if (folds < 2 || folds > n) {
        throw Error(ErrorKind::TooFewSamples, std::to_string(folds) + "-fold CV needs 2 <= folds <= " +
                                                  std::to_string(n) + " training rows");
    }
    detail::check_training_inputs(x, y, kind);

    std::vector<std::vector<std::size_t>> fit_ids(folds), held_ids(folds);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < folds; ++f) (i % folds == f ? held_ids[f] : fit_ids[f]).push_back(i);
    }

    LambdaSelection out;
    out.cv_error.assign(grid.size(), std::numeric_limits<double>::infinity());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double sse = 0.0;
        bool ok = true;
        for (std::size_t f = 0; f < folds && ok; ++f) {
            try {
                const auto probe = fit_ridge(select_rows(x, fit_ids[f]), select_rows(y, fit_ids[f]), grid[g], kind, options);
                const Matrix resid = (select_rows(x, held_ids[f]) * probe.weights).rowwise() +
                                     probe.intercept.transpose() - select_rows(y, held_ids[f]);
                sse += resid.squaredNorm();
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::SingularSystem && e.kind() != ErrorKind::TooFewSamples) throw;
                ok = false;
            }
        }
        if (ok) out.cv_error[g] = sse / static_cast<double>(n * static_cast<std::size_t>(y.cols()));
    }

    std::size_t best = grid.size();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!std::isfinite(out.cv_error[g])) continue;
        if (best == grid.size() || out.cv_error[g] < out.cv_error[best] ||
            (out.cv_error[g] == out.cv_error[best] && grid[g] > grid[best])) {
            best = g;
        }
    }
    if (best == grid.size()) throw Error(ErrorKind::SingularSystem, "every lambda in the grid failed to fit");
    out.lambda = grid[best];
    return out;
}

inline double select_lambda(const Matrix& x, const Matrix& y, std::span<const double> grid, std::size_t folds,
                            TargetKind kind, const RidgeOptions& options = {}) {
    return select_lambda_detailed(x, y, grid, folds, kind, options).lambda;
}

inline const std::vector<double>& default_lambda_grid() {
    static const std::vector<double> grid{1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4};
    return grid;
}

}  // namespace lmprobe
