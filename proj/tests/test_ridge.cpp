#include <gtest/gtest.h>

#include "lmprobe/probe_io.hpp"
#include "lmprobe/ridge.hpp"
#include "oracles.hpp"

using namespace lmprobe;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

Matrix col(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

// 1-D problems embedded in the 3-wide point-target shape: extra target
// columns are zero.
Matrix pad3(const Matrix& y) {
    Matrix out = Matrix::Zero(y.rows(), 3);
    out.col(0) = y.col(0);
    return out;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no lmprobe::Error thrown";
    return ErrorKind::EmptyInput;
}

}  // namespace

TEST(Ridge, ExactLineWithoutPenalty) {
    const auto p = fit_ridge(col({1, 2}), pad3(col({1, 2})), 0.0, TargetKind::point);
    EXPECT_NEAR(p.weights(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(p.intercept(0), 0.0, 1e-12);
}

TEST(Ridge, HandComputedShrinkage) {
    // Centered normal equation: 2θ + 2θ = 2 => θ = 0.5.
    const auto p = fit_ridge(col({1, -1}), pad3(col({1, -1})), 2.0, TargetKind::point);
    EXPECT_NEAR(p.weights(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(p.intercept(0), 0.0, 1e-12);
}

TEST(Ridge, MatchesGradientDescentMinimizer) {
    Rng rng(21);
    const Matrix x = gaussian(50, 10, rng);
    const Matrix y = gaussian(50, 3, rng);
    const auto p = fit_ridge(x, y, 1.0, TargetKind::point);
    const auto gd = oracle::ridge_gradient_descent(x, y, 1.0);
    EXPECT_LE((p.weights - gd.theta).norm() / gd.theta.norm(), 1e-6);
    EXPECT_LE((p.intercept - gd.intercept).norm() / gd.intercept.norm(), 1e-6);
}

TEST(Ridge, DualBranchMatchesPrimal) {
    // m > n takes the kernel route; compare against the oracle as well.
    Rng rng(4);
    const Matrix x = gaussian(12, 40, rng);
    const Matrix y = gaussian(12, 6, rng);
    const auto p = fit_ridge(x, y, 3.0, TargetKind::box);
    const auto gd = oracle::ridge_gradient_descent(x, y, 3.0);
    EXPECT_LE((p.weights - gd.theta).norm() / gd.theta.norm(), 1e-6);
    EXPECT_LE((p.intercept - gd.intercept).norm() / gd.intercept.norm(), 1e-6);
}

TEST(Ridge, StandardizationMapsBackToOriginalUnits) {
    Rng rng(8);
    Matrix x = gaussian(40, 5, rng);
    x.col(2) *= 100.0;
    const Matrix y = gaussian(40, 3, rng);
    const auto p = fit_ridge(x, y, 0.0, TargetKind::point, RidgeOptions{.standardize = true});
    const auto q = fit_ridge(x, y, 0.0, TargetKind::point);
    // Without a penalty, scaling is a reparametrization: same fit.
    EXPECT_LE((p.weights - q.weights).norm(), 1e-9 * q.weights.norm());
    EXPECT_TRUE(p.standardized);
}

TEST(Ridge, FirstOrderOptimality) {
    Rng rng(5);
    const Matrix x = gaussian(30, 6, rng);
    const Matrix y = gaussian(30, 3, rng);
    const double lambda = 0.7;
    const auto p = fit_ridge(x, y, lambda, TargetKind::point);
    const double best = oracle::ridge_objective(x, y, p.weights, p.intercept, lambda);
    for (int t = 0; t < 100; ++t) {
        Matrix delta = gaussian(p.weights.rows(), p.weights.cols(), rng);
        delta *= 1e-3 / delta.norm();
        EXPECT_LE(best, oracle::ridge_objective(x, y, p.weights + delta, p.intercept, lambda));
    }
}

TEST(Ridge, ShrinkageIsMonotoneInLambda) {
    Rng rng(6);
    const Matrix x = gaussian(25, 8, rng);
    const Matrix y = gaussian(25, 3, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 1e-3, 0.1, 1.0, 10.0, 1e3, 1e5}) {
        const double norm = fit_ridge(x, y, lambda, TargetKind::point).weights.norm();
        EXPECT_LE(norm, previous * (1 + 1e-12)) << "lambda=" << lambda;
        previous = norm;
    }
}

TEST(Ridge, ConstantTargetsGiveZeroWeightsAndExactIntercept) {
    Rng rng(7);
    const Matrix x = gaussian(20, 4, rng);
    Matrix y(20, 3);
    y.rowwise() = Eigen::RowVector3d(1.5, -2.0, 0.25);
    for (double lambda : {1e-3, 1.0, 100.0}) {
        const auto p = fit_ridge(x, y, lambda, TargetKind::point);
        EXPECT_LE(p.weights.cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(p.intercept(0), 1.5, 1e-9);
        EXPECT_NEAR(p.intercept(1), -2.0, 1e-9);
        EXPECT_NEAR(p.intercept(2), 0.25, 1e-9);
    }
}

TEST(Ridge, Errors) {
    Rng rng(1);
    const Matrix wide = gaussian(5, 10, rng);
    EXPECT_EQ(kind_of([&] { fit_ridge(wide, gaussian(5, 3, rng), 0.0, TargetKind::point); }),
              ErrorKind::SingularSystem);
    // Duplicate column: rank deficient even though n > m.
    Matrix dup = gaussian(10, 3, rng);
    dup.col(2) = dup.col(1);
    EXPECT_EQ(kind_of([&] { fit_ridge(dup, gaussian(10, 3, rng), 0.0, TargetKind::point); }),
              ErrorKind::SingularSystem);
    EXPECT_NO_THROW(fit_ridge(dup, gaussian(10, 3, rng), 0.1, TargetKind::point));

    Matrix nan = gaussian(4, 2, rng);
    nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(kind_of([&] { fit_ridge(nan, gaussian(4, 3, rng), 1.0, TargetKind::point); }),
              ErrorKind::NonFiniteInput);
    EXPECT_EQ(kind_of([&] { fit_ridge(gaussian(1, 2, rng), gaussian(1, 3, rng), 1.0, TargetKind::point); }),
              ErrorKind::TooFewSamples);
    EXPECT_EQ(kind_of([&] { fit_ridge(gaussian(4, 2, rng), gaussian(4, 3, rng), 1.0, TargetKind::box); }),
              ErrorKind::DimensionMismatch);
    EXPECT_EQ(kind_of([&] { fit_ridge(gaussian(4, 2, rng), gaussian(4, 3, rng), -1.0, TargetKind::point); }),
              ErrorKind::InvalidConfig);
}

TEST(PredictRidge, ZeroWeightsPredictIntercept) {
    RidgeProbe p;
    p.weights = Matrix::Zero(4, 3);
    p.intercept = Eigen::Vector3d(1, 2, 3);
    Rng rng(2);
    const auto y = predict_ridge(p, gaussian(9, 4, rng));
    for (Eigen::Index i = 0; i < 9; ++i) EXPECT_EQ(y.row(i), Eigen::RowVector3d(1, 2, 3));
}

TEST(PredictRidge, InterpolatesSquareFullRankSystem) {
    Rng rng(3);
    // n = m + 1 rows: after centering the system is square and full rank.
    const Matrix x = gaussian(6, 5, rng);
    const Matrix y = gaussian(6, 3, rng);
    const auto p = fit_ridge(x, y, 0.0, TargetKind::point);
    EXPECT_LE((predict_ridge(p, x) - y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PredictRidge, MatchesNaiveMatmul) {
    Rng rng(12);
    RidgeProbe p;
    p.weights = gaussian(7, 3, rng);
    p.intercept = gaussian(3, 1, rng);
    const Matrix x = gaussian(11, 7, rng);
    EXPECT_LE((predict_ridge(p, x) - oracle::naive_affine(x, p.weights, p.intercept)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PredictRidge, BoxPredictionsAreCanonical) {
    RidgeProbe p;
    p.target_kind = TargetKind::box;
    p.weights = Matrix::Zero(1, 6);
    p.intercept.resize(6);
    p.intercept << 1, 0, 0, 0, 1, 1;  // x axis inverted
    const auto y = predict_ridge(p, Matrix::Zero(2, 1));
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(0, 3), 1.0);
}

TEST(PredictRidge, DimensionMismatch) {
    RidgeProbe p;
    p.weights = Matrix::Zero(4, 3);
    p.intercept = Vector::Zero(3);
    EXPECT_EQ(kind_of([&] { predict_ridge(p, Matrix::Zero(2, 5)); }), ErrorKind::DimensionMismatch);
}

TEST(SelectLambda, SingletonGrid) {
    Rng rng(13);
    const std::vector<double> grid{3.5};
    EXPECT_EQ(select_lambda(gaussian(20, 4, rng), gaussian(20, 3, rng), grid, 5, TargetKind::point), 3.5);
}

TEST(SelectLambda, NoiselessLinearDataPrefersSmallPenalty) {
    Rng rng(14);
    const Matrix x = gaussian(40, 5, rng);
    const Matrix y = x * gaussian(5, 3, rng);
    const std::vector<double> grid{0.001, 1000.0};
    const auto sel = select_lambda_detailed(x, y, grid, 5, TargetKind::point);
    EXPECT_EQ(sel.lambda, 0.001);
    EXPECT_LT(sel.cv_error[0], sel.cv_error[1]);
    // CV error grows monotonically with lambda on noiseless data.
    const std::vector<double> fine{1e-4, 1e-2, 1.0, 1e2, 1e4};
    const auto sweep = select_lambda_detailed(x, y, fine, 5, TargetKind::point);
    for (std::size_t i = 1; i < fine.size(); ++i) EXPECT_LT(sweep.cv_error[i - 1], sweep.cv_error[i]);
}

TEST(SelectLambda, TiesGoToLargerLambda) {
    // Constant targets: every lambda gives zero weights and identical CV error.
    Rng rng(15);
    const Matrix x = gaussian(20, 3, rng);
    const Matrix y = Matrix::Constant(20, 3, 2.0);
    const std::vector<double> grid{0.1, 10.0, 10.0, 1.0};
    EXPECT_EQ(select_lambda(x, y, grid, 4, TargetKind::point), 10.0);
}

TEST(SelectLambda, SkipsSingularGridEntries) {
    Rng rng(16);
    const Matrix x = gaussian(10, 20, rng);
    const std::vector<double> grid{0.0, 1.0};
    EXPECT_EQ(select_lambda(x, gaussian(10, 3, rng), grid, 2, TargetKind::point), 1.0);
    const std::vector<double> only_zero{0.0};
    EXPECT_EQ(kind_of([&] { select_lambda(x, gaussian(10, 3, rng), only_zero, 2, TargetKind::point); }),
              ErrorKind::SingularSystem);
}

TEST(SelectLambda, Errors) {
    Rng rng(17);
    const Matrix x = gaussian(6, 2, rng), y = gaussian(6, 3, rng);
    const std::vector<double> grid{1.0};
    EXPECT_EQ(kind_of([&] { select_lambda(x, y, grid, 7, TargetKind::point); }), ErrorKind::TooFewSamples);
    EXPECT_EQ(kind_of([&] { select_lambda(x, y, grid, 1, TargetKind::point); }), ErrorKind::TooFewSamples);
    EXPECT_EQ(kind_of([&] { select_lambda(x, y, std::vector<double>{}, 2, TargetKind::point); }),
              ErrorKind::InvalidConfig);
}

TEST(RidgeProbeIo, SaveLoadPreservesProbe) {
    const auto dir = oracle::temp_dir("ridge_io");
    Rng rng(18);
    const auto p = fit_ridge(gaussian(30, 4, rng), gaussian(30, 6, rng), 0.5, TargetKind::box);
    save_probe(dir / "probe.json", p);
    const auto back = std::get<RidgeProbe>(load_probe(dir / "probe.json"));
    EXPECT_EQ(back.weights, p.weights);
    EXPECT_EQ(back.intercept, p.intercept);
    EXPECT_EQ(back.lambda, 0.5);
    EXPECT_EQ(back.target_kind, TargetKind::box);
    const auto header = nlohmann::json::parse(read_file(dir / "probe.json"));
    EXPECT_EQ(header["m"], 4);
    EXPECT_EQ(header["k"], 6);
}
