#include "support.hpp"

#include "deepchoice/dml.hpp"
#include "deepchoice/simulate.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace deepchoice;
using namespace testing_support;

namespace {

ConjointDataset plusMinusOne() {
    RowMatrix dx(4, 1);
    dx << 1, -1, 1, -1;
    return fromDifferences(binarySchema(1), dx, (Vector(4) << 1, 0, 1, 0).finished(), {2, 2});
}

PreferenceMatrix constantBeta(const ConjointDataset& ds, const Vector& b) {
    Matrix beta(static_cast<Eigen::Index>(ds.respondents()), b.size());
    beta.rowwise() = b.transpose();
    return preferenceMatrixFrom(ds, beta);
}

InfluenceTable tableOf(const RowMatrix& psi) {
    InfluenceTable it;
    it.psi = psi;
    it.ghat = Vector::Zero(psi.rows());
    return it;
}

}  // namespace

TEST(Lambda, LogisticDensityAtZero) {
    const auto ds = plusMinusOne();
    const auto lam = estimateLambda(constantBeta(ds, Vector::Zero(1)), ds, 0.0);
    for (const auto& L : lam.perRespondent) EXPECT_DOUBLE_EQ(L(0, 0), 0.25);
    const auto ridged = estimateLambda(constantBeta(ds, Vector::Zero(1)), ds, 0.01);
    EXPECT_DOUBLE_EQ(ridged.perRespondent[0](0, 0), 0.26);
}

TEST(Lambda, DefaultRidgeIsRelativeToTrace) {
    const auto ds = plusMinusOne();
    const auto lam = estimateLambda(constantBeta(ds, Vector::Zero(1)), ds);
    EXPECT_DOUBLE_EQ(lam.ridge[0], 0.25e-6);
}

TEST(Lambda, SaturatedIndexLeavesRidge) {
    const auto ds = plusMinusOne();
    const auto lam = estimateLambda(constantBeta(ds, Vector::Constant(1, 1e3)), ds, 1e-3);
    EXPECT_NEAR(lam.perRespondent[1](0, 0), 1e-3, 1e-12);
}

TEST(Lambda, BalancedOrthogonalContrasts) {
    RowMatrix dx(4, 2);
    dx << 1, 0, -1, 0, 0, 1, 0, -1;
    const auto ds = fromDifferences(binarySchema(2), dx, (Vector(4) << 1, 0, 0, 1).finished(), {2, 2});
    const auto lam = estimateLambda(constantBeta(ds, Vector::Zero(2)), ds, 0.0);
    // Each contrast contributes 0.25 dx dx' / 4; two of the four hit each axis.
    EXPECT_TRUE(lam.perRespondent[0].isApprox(0.125 * Matrix::Identity(2, 2), 1e-15));
    const auto own = estimateLambda(constantBeta(ds, Vector::Zero(2)), ds, 0.0, LambdaMode::OwnRows);
    EXPECT_TRUE(own.perRespondent[0].isApprox((Matrix(2, 2) << 0.25, 0, 0, 0).finished(), 1e-15));
}

TEST(Influence, HandArithmetic) {
    const auto ds = plusMinusOne();
    const auto pm = constantBeta(ds, Vector::Zero(1));
    const auto it = influence(pm, ds, estimateLambda(pm, ds, 0.0));
    for (Eigen::Index r = 0; r < 4; ++r) {
        EXPECT_DOUBLE_EQ(it.ghat[r], 0.5);
        EXPECT_DOUBLE_EQ(it.psi(r, 0), 2.0);
    }
}

TEST(Influence, CorrectionVanishesAtFittedProbability) {
    auto ds = plusMinusOne();
    const auto pm = constantBeta(ds, Vector::Constant(1, 0.3));
    ds.y = Vector::Zero(4);
    for (Eigen::Index r = 0; r < 4; ++r) ds.y[r] = logistic(ds.deltaX(r, 0) * 0.3);
    const auto it = influence(pm, ds, estimateLambda(pm, ds));
    for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(it.psi(r, 0), 0.3, 1e-15);
}

TEST(Influence, ZeroContrastHasNoCorrection) {
    RowMatrix dx(3, 2);
    dx << 1, 1, 0, 0, -1, 1;
    const auto ds = fromDifferences(binarySchema(2), dx, (Vector(3) << 1, 1, 0).finished(), {1, 2});
    const auto pm = constantBeta(ds, (Vector(2) << 0.2, -0.4).finished());
    const auto it = influence(pm, ds, estimateLambda(pm, ds));
    EXPECT_DOUBLE_EQ(it.psi(1, 0), 0.2);
    EXPECT_DOUBLE_EQ(it.psi(1, 1), -0.4);
}

TEST(Influence, NonPositiveDefiniteLambdaThrows) {
    const auto ds = plusMinusOne();
    const auto pm = constantBeta(ds, Vector::Zero(1));
    auto lam = estimateLambda(pm, ds, 0.0);
    lam.perRespondent[1](0, 0) = -1.0;
    EXPECT_THROW(influence(pm, ds, lam), InferenceError);
}

TEST(Estimate, ClusteredVarianceArithmetic) {
    const auto ds = plusMinusOne();
    const auto est = estimate(tableOf((RowMatrix(4, 1) << 1, 1, -1, -1).finished()), ds);
    EXPECT_DOUBLE_EQ(est.theta[0], 0.0);
    EXPECT_DOUBLE_EQ(est.seClustered[0], 1.0);
    EXPECT_DOUBLE_EQ(est.ciLow[0], -kNormal975);
    EXPECT_DOUBLE_EQ(est.ciHigh[0], kNormal975);
}

TEST(Estimate, ConstantPsiUncenteredAndCentered) {
    const auto ds = plusMinusOne();
    const auto it = tableOf(RowMatrix::Constant(4, 1, 3.0));
    const auto est = estimate(it, ds);
    EXPECT_DOUBLE_EQ(est.theta[0], 3.0);
    EXPECT_DOUBLE_EQ(est.seClustered[0] * est.seClustered[0], 2.0 / 16.0 * 2.0 * 36.0);
    EXPECT_DOUBLE_EQ(est.seIid[0], 0.0);
    const auto centered = estimate(it, ds, true);
    EXPECT_DOUBLE_EQ(centered.seClustered[0], 0.0);
}

TEST(Estimate, IidVarianceAndRatio) {
    const auto ds = plusMinusOne();
    const auto est = estimate(tableOf((RowMatrix(4, 1) << 1, 1, -1, -1).finished()), ds);
    // sample variance 4/3 over N = 4
    EXPECT_DOUBLE_EQ(est.seIid[0], std::sqrt(1.0 / 3.0));
    EXPECT_DOUBLE_EQ(est.seRatio[0], 1.0 / std::sqrt(1.0 / 3.0));
    EXPECT_TRUE(est.covers(0, 0.5));
    EXPECT_FALSE(est.covers(0, 2.5));
}

TEST(Estimate, JsonRoundTrip) {
    const auto ds = plusMinusOne();
    const auto est = estimate(tableOf((RowMatrix(4, 1) << 1, 2, -1, 0.5).finished()), ds);
    const auto back = estimateFromJson(toJson(est));
    EXPECT_EQ(back.theta, est.theta);
    EXPECT_EQ(back.seClustered, est.seClustered);
    EXPECT_EQ(back.columnNames, est.columnNames);
}

TEST(Estimate, PlugInIsColumnMean) {
    SimSpec spec;
    spec.M = 50;
    spec.T = 3;
    spec.pZ = 2;
    spec.levels = {2, 2};
    spec.map = BetaMap::smoothFromSeed(2, 2, 3);
    const auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    DmlOptions opt;
    opt.plugIn = true;
    const auto est = debiasedEstimate(pm, sim.data, opt);
    // Equal task counts make the row mean equal to the respondent mean.
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_NEAR(est.theta[k], sim.trueBeta.col(k).mean(), 1e-12);
    EXPECT_TRUE(est.plugIn);
}

TEST(Probe, ZeroDirectionIsFlat) {
    SimSpec spec;
    spec.M = 200;
    spec.T = 4;
    spec.pZ = 2;
    spec.levels = {2, 2};
    spec.map = BetaMap::smoothFromSeed(2, 2, 3);
    const auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    const auto probe = orthogonalityProbe(pm, sim.data, Matrix::Zero(200, 2));
    EXPECT_EQ(probe.steps.size(), 7u);
    for (Eigen::Index s = 1; s < probe.theta.rows(); ++s) EXPECT_TRUE(probe.theta.row(s).isApprox(probe.theta.row(0), 1e-13));
}

TEST(Probe, PlugInDriftsWithMeanDirection) {
    SimSpec spec;
    spec.M = 200;
    spec.T = 4;
    spec.pZ = 2;
    spec.levels = {2, 2};
    spec.map = BetaMap::smoothFromSeed(2, 2, 3);
    const auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.5, 1.0);
    Matrix h(200, 2);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = n(rng);
    const auto probe = orthogonalityProbe(pm, sim.data, h);
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_NEAR(probe.plugInSlope[k], h.col(k).mean(), 1e-10);
}

// At the true preference map the debiased moment is first-order flat in any
// direction, while the plug-in drifts at rate mean(h). theta(r) is linear in y,
// so replacing y by its expectation gives the probe averaged over outcome draws;
// the realized-outcome probe keeps an O(N^-1/2) slope from re-estimating Lambda.
TEST(Probe, DebiasedMomentIsOrthogonal) {
    SimSpec spec;
    spec.M = 4000;
    spec.T = 10;
    spec.pZ = 3;
    spec.levels = {2, 2, 2};
    spec.map = BetaMap::smoothFromSeed(3, 3, 9);
    auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    Matrix h(static_cast<Eigen::Index>(spec.M), 3);
    const Matrix& z = sim.data.zRaw;
    for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index k = 0; k < 3; ++k) h(i, k) = 1.0 + 0.5 * std::tanh(z(i, k % z.cols()));
    DmlOptions opt;
    opt.mode = LambdaMode::OwnRows;

    const auto realized = orthogonalityProbe(pm, sim.data, h, {}, opt);
    for (Eigen::Index k = 0; k < 3; ++k) {
        EXPECT_GT(std::abs(realized.plugInSlope[k]), 0.5);
        EXPECT_LT(std::abs(realized.linear[k]), 0.05 * std::abs(realized.plugInSlope[k])) << "column " << k;
    }

    for (Eigen::Index r = 0; r < sim.data.y.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(sim.data.respondentOf[static_cast<std::size_t>(r)]);
        const double v = sim.data.deltaX.row(r).dot(sim.trueBeta.row(i));
        sim.data.y[r] = 1.0 / (1.0 + std::exp(-v));
    }
    const auto expected = orthogonalityProbe(pm, sim.data, h, {}, opt);
    for (Eigen::Index k = 0; k < 3; ++k)
        EXPECT_LT(std::abs(expected.linear[k]), 0.05 * std::abs(expected.quadratic[k] * 0.05) + 1e-3) << "column " << k;
}
