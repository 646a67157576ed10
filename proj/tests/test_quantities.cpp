#include "support.hpp"

#include "deepchoice/quantities.hpp"
#include "deepchoice/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace deepchoice;
using namespace testing_support;

namespace {

PreferenceMatrix pmOf(const Matrix& beta) {
    PreferenceMatrix pm;
    pm.beta = beta;
    for (Eigen::Index i = 0; i < beta.rows(); ++i) pm.respondentIds.push_back("r" + std::to_string(i + 1));
    for (Eigen::Index k = 0; k < beta.cols(); ++k) pm.columnNames.push_back("c" + std::to_string(k + 1));
    return pm;
}

PreferenceMatrix column(std::initializer_list<double> values) {
    Matrix b(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) b(i++, 0) = v;
    return pmOf(b);
}

// Uniform binary profiles, two respondents' worth of rows each.
ConjointDataset binaryProfiles(std::size_t p, std::size_t m, std::size_t t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    ChoiceData d;
    const auto n = static_cast<Eigen::Index>(m * t);
    d.profileA.resize(n, static_cast<Eigen::Index>(p));
    d.profileB.resize(n, static_cast<Eigen::Index>(p));
    d.y.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(p); ++k) {
            d.profileA(r, k) = coin(rng);
            d.profileB(r, k) = coin(rng);
        }
        d.y[r] = coin(rng);
    }
    for (std::size_t i = 0; i < m; ++i) d.respondentIds.push_back("r" + std::to_string(i));
    d.taskCounts.assign(m, t);
    d.covariates = Matrix::Zero(static_cast<Eigen::Index>(m), 1);
    for (Eigen::Index i = 0; i < d.covariates.rows(); ++i) d.covariates(i, 0) = static_cast<double>(i % 3);
    return buildDataset(binarySchema(p), std::move(d));
}

double normalCdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

// ---- AME -------------------------------------------------------------------------

TEST(Ame, ZeroPreferencesGiveZero) {
    const auto ds = binaryProfiles(3, 10, 4, 1);
    const auto pm = pmOf(Matrix::Zero(10, 3));
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(averageMarginalEffect(pm, ds, k).ame, 0.0);
        AmeOptions single;
        single.mode = AmeMode::SingleProfile;
        EXPECT_EQ(averageMarginalEffect(pm, ds, k, single).ame, 0.0);
    }
}

TEST(Ame, SingleAttributeLogisticArithmetic) {
    const auto ds = binaryProfiles(1, 2, 20, 2);
    auto pm = pmOf(Matrix::Ones(2, 1));
    const double expect = logistic(1.0) - 0.5;
    EXPECT_NEAR(expect, 0.2311, 1e-4);
    AmeOptions single;
    single.mode = AmeMode::SingleProfile;
    EXPECT_NEAR(averageMarginalEffect(pm, ds, 0, single).ame, expect, 1e-15);
    // Against either opponent level the contrast is G(1) - G(0) or G(0) - G(-1).
    EXPECT_NEAR(averageMarginalEffect(pm, ds, 0).ame, expect, 1e-15);
    EXPECT_TRUE(averageMarginalEffect(pm, ds, 0).exact);
}

TEST(Ame, MonteCarloAgreesWithEnumeration) {
    SimSpec spec;
    spec.M = 300;
    spec.T = 5;
    spec.pZ = 3;
    spec.levels = {2, 3, 2};
    spec.map = BetaMap::smoothFromSeed(4, 3, 5);
    const auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    AmeOptions mc;
    mc.forceMonteCarlo = true;
    mc.draws = 20000;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto exact = averageMarginalEffect(pm, sim.data, k);
        const auto approx = averageMarginalEffect(pm, sim.data, k, mc);
        EXPECT_TRUE(exact.exact);
        EXPECT_FALSE(approx.exact);
        EXPECT_GT(approx.mcSE, 0.0);
        EXPECT_LT(std::abs(exact.ame - approx.ame), 4 * approx.mcSE + 1e-9);
    }
    mc.draws = 10;
    EXPECT_THROW(averageMarginalEffect(pm, sim.data, 0, mc), InferenceError);
}

TEST(Ame, RejectsPreDifferencedData) {
    RowMatrix dx(4, 1);
    dx << 1, -1, 1, -1;
    const auto ds = fromDifferences(binarySchema(1), dx, (Vector(4) << 1, 0, 1, 1).finished(), {2, 2});
    EXPECT_THROW(averageMarginalEffect(pmOf(Matrix::Ones(2, 1)), ds, 0), InferenceError);
    EXPECT_NEAR(lpmAmce(ds, 0), 0.5 * (1.0 - 0.5), 1e-15);
}

TEST(Ame, MatchesLinearProbabilityAmce) {
    SimSpec spec;
    spec.M = 5000;
    spec.T = 10;
    spec.pZ = 2;
    spec.levels = {2, 3, 2};
    spec.map = BetaMap::homogeneous((Vector(4) << 0.6, -0.4, 0.8, -0.3).finished());
    const auto sim = generate(spec, 0);
    const auto pm = preferenceMatrixFrom(sim.data, sim.trueBeta);
    for (std::size_t k = 0; k < 4; ++k)
        EXPECT_LT(std::abs(averageMarginalEffect(pm, sim.data, k).ame - lpmAmce(sim.data, k)), 0.01) << "level " << k;
}

// ---- polarization ------------------------------------------------------------------

TEST(Polarization, SignFractions) {
    const auto r = polarization(column({1, 2, -3}), 0);
    EXPECT_DOUBLE_EQ(r.fracPositive, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.fracNegative, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.fracZero, 0.0);
    const auto all = polarization(column({0.1, 5, 2}), 0);
    EXPECT_EQ(all.fracPositive, 1.0);
    EXPECT_EQ(all.fracNegative, 0.0);
    EXPECT_EQ(all.fracZero, 0.0);
}

TEST(Polarization, ToleranceAndRescaling) {
    const auto tol = polarization(column({0.05, -0.05, 1, -1}), 0, 0.1);
    EXPECT_DOUBLE_EQ(tol.fracZero, 0.5);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Matrix b(50, 2);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n01(rng);
    const auto base = polarization(pmOf(b), 1);
    const auto scaled = polarization(pmOf(b * 7.5), 1);
    EXPECT_EQ(base.fracPositive, scaled.fracPositive);
    EXPECT_DOUBLE_EQ(base.fracPositive + base.fracNegative + base.fracZero, 1.0);
}

TEST(Polarization, TwoTypeRecovery) {
    // 60% of the covariate space sits above the split.
    SimSpec spec;
    spec.M = 2000;
    spec.T = 5;
    spec.pZ = 2;
    spec.levels = {2, 2};
    const double cut = -0.2533471031357997;
    spec.map = BetaMap::twoType(0, cut, (Vector(2) << 1.0, 0.5).finished(), (Vector(2) << -1.0, 0.5).finished());
    const auto sim = generate(spec, 0);
    NetworkConfig cfg;
    cfg.hiddenSizes = {16, 8};
    cfg.epochs = 300;
    cfg.learningRate = 1e-2;
    const auto pm = fullDataFit(sim.data, cfg);
    EXPECT_NEAR(polarization(pm, 0).fracPositive, 0.6, 0.05);
}

// ---- importance ------------------------------------------------------------------------

TEST(Importance, SymmetricAndFourToOne) {
    const auto ds = binaryProfiles(2, 2, 2000, 4);
    ASSERT_NEAR(ds.designVar[0], ds.designVar[1], 0.02);
    auto dsEqual = ds;
    dsEqual.designVar = Vector::Constant(2, 0.25);
    const auto equal = importanceShares(pmOf((Matrix(2, 2) << 1, 1, -2, 2).finished()), dsEqual);
    EXPECT_DOUBLE_EQ(equal.shares(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(equal.shares(1, 1), 0.5);
    const auto ratio = importanceShares(pmOf((Matrix(2, 2) << 2, 1, 2, -1).finished()), dsEqual);
    EXPECT_DOUBLE_EQ(ratio.shares(0, 0), 0.8);
    EXPECT_DOUBLE_EQ(ratio.shares(0, 1), 0.2);
}

TEST(Importance, RowsSumToOneAndDegenerateIsUniform) {
    SimSpec spec;
    spec.M = 100;
    spec.T = 3;
    spec.pZ = 2;
    spec.levels = {3, 2, 4};
    spec.map = BetaMap::smoothFromSeed(6, 2, 8);
    const auto sim = generate(spec, 0);
    Matrix beta = sim.trueBeta;
    beta.row(5).setZero();
    const auto s = importanceShares(preferenceMatrixFrom(sim.data, beta), sim.data);
    ASSERT_EQ(s.shares.cols(), 3);
    for (Eigen::Index i = 0; i < s.shares.rows(); ++i) EXPECT_NEAR(s.shares.row(i).sum(), 1.0, 1e-8);
    EXPECT_TRUE(s.degenerate[5]);
    EXPECT_NEAR(s.shares(5, 0), 1.0 / 3.0, 1e-15);
}

TEST(Importance, RecoversPlantedSplit) {
    SimSpec spec;
    spec.M = 2000;
    spec.T = 5;
    spec.pZ = 2;
    spec.levels = {2, 2};
    // Equal design variances, so beta_1^2 : beta_2^2 = 70 : 30.
    spec.map = BetaMap::homogeneous((Vector(2) << std::sqrt(0.7) * 1.5, std::sqrt(0.3) * 1.5).finished());
    const auto sim = generate(spec, 0);
    NetworkConfig cfg;
    cfg.hiddenSizes = {16, 8};
    cfg.epochs = 300;
    cfg.learningRate = 1e-2;
    const auto s = importanceShares(fullDataFit(sim.data, cfg), sim.data);
    EXPECT_NEAR(s.shares.col(0).mean(), 0.7, 0.05);
}

// ---- ratios and compensation -------------------------------------------------------------

TEST(Mrs, RatioArithmetic) {
    const auto r = mrs(pmOf((Matrix(1, 2) << 0.8, 0.4).finished()), 0, 1);
    EXPECT_DOUBLE_EQ(r.ratio[0], 2.0);
    const auto zero = mrs(pmOf((Matrix(1, 2) << 0.0, 0.4).finished()), 0, 1);
    EXPECT_EQ(zero.ratio[0], 0.0);
}

TEST(Mrs, MeanOfRatiosIsNotRatioOfMeans) {
    const auto r = mrs(pmOf((Matrix(2, 2) << 1, 1, 1, 4).finished()), 0, 1);
    EXPECT_DOUBLE_EQ(r.meanRatio, 0.625);
    EXPECT_DOUBLE_EQ(r.ratioOfMeans, 0.4);
}

TEST(Mrs, SmallDenominatorIsUndefined) {
    const auto r = mrs(pmOf((Matrix(3, 2) << 1, 1e-9, 1, 2, 3, -1).finished()), 0, 1);
    EXPECT_TRUE(std::isnan(r.ratio[0]));
    EXPECT_EQ(r.undefinedCount, 1u);
    EXPECT_DOUBLE_EQ(r.meanRatio, (0.5 - 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(r.medianRatio, (0.5 - 3.0) / 2.0);
}

TEST(Compensation, SingleBenefitHolds) {
    const auto r = compensatingDifferential(pmOf((Matrix(1, 2) << -0.5, 0.7).finished()), 0, Benefit::single(1));
    EXPECT_EQ(r.holds[0], 1.0);
    EXPECT_EQ(r.fraction, 1.0);
}

TEST(Compensation, NoBenefitOnNegativeColumn) {
    const auto r = compensatingDifferential(column({-0.1, -2, -0.3}), 0, Benefit::none());
    EXPECT_EQ(r.fraction, 0.0);
}

TEST(Compensation, WeightedAndMaxOver) {
    const auto pm = pmOf((Matrix(2, 3) << -1, 0.4, -0.8, -1, 2, 0.1).finished());
    const auto w = compensatingDifferential(pm, 0, Benefit::weighted({1, 2}, {1.0, 1.0}, true));
    EXPECT_DOUBLE_EQ(w.benefit[0], 1.2);
    EXPECT_EQ(w.holds[0], 1.0);
    const auto m = compensatingDifferential(pm, 0, Benefit::maxOver({1, 2}));
    EXPECT_DOUBLE_EQ(m.benefit[0], 0.4);
    EXPECT_EQ(m.holds[0], 0.0);
    EXPECT_EQ(m.holds[1], 1.0);
    EXPECT_DOUBLE_EQ(m.fraction, 0.5);
}

// beta_j + beta_b is normal under a linear map of normal covariates.
TEST(Compensation, MatchesAnalyticFraction) {
    SimSpec spec;
    spec.M = 10000;
    spec.T = 1;
    spec.pZ = 2;
    spec.levels = {2, 2};
    Matrix B(2, 2);
    B << 0.6, 0.2, -0.3, 0.5;
    spec.map = BetaMap::linear(B, (Vector(2) << -0.4, 0.1).finished());
    const auto sim = generate(spec, 0);
    const auto r = compensatingDifferential(preferenceMatrixFrom(sim.data, sim.trueBeta), 0, Benefit::single(1));
    const Vector w = B.row(0) + B.row(1);
    const double mean = -0.4 + 0.1;
    EXPECT_NEAR(r.fraction, 1.0 - normalCdf(-mean / w.norm()), 0.05);
}

// ---- profile comparisons -------------------------------------------------------------

TEST(ChoiceProbability, IdenticalProfilesAreCoinFlips) {
    const auto schema = binarySchema(2);
    const ProfileSelection a{AttributeValue::categorical(1), AttributeValue::categorical(0)};
    const auto r = choiceProbability(pmOf((Matrix(3, 2) << 1, 2, -3, 4, 0, 9).finished()), schema, a, a);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(r.probability[i], 0.5);
    const auto maj = majorityPreference(pmOf((Matrix(3, 2) << 1, 2, -3, 4, 0, 9).finished()), schema, a, a);
    EXPECT_EQ(maj.fracPositive, 0.0);
    EXPECT_EQ(maj.fracTie, 1.0);
}

TEST(ChoiceProbability, IndexQuarter) {
    const auto schema = binarySchema(2);
    const ProfileSelection a{AttributeValue::categorical(1), AttributeValue::categorical(1)};
    const ProfileSelection b{AttributeValue::categorical(0), AttributeValue::categorical(0)};
    const auto r = choiceProbability(pmOf((Matrix(1, 2) << 0.5, -0.25).finished()), schema, a, b);
    EXPECT_NEAR(r.probability[0], 0.5622, 1e-4);
    EXPECT_DOUBLE_EQ(r.probability[0] + choiceProbability(pmOf((Matrix(1, 2) << 0.5, -0.25).finished()), schema, b, a).probability[0], 1.0);
}

TEST(ChoiceProbability, WinnerShareMatchesSimulatedChoices) {
    SimSpec spec;
    spec.M = 10000;
    spec.T = 1;
    spec.pZ = 3;
    spec.levels = {2, 3, 2};
    spec.map = BetaMap::smoothFromSeed(4, 3, 21);
    const auto sim = generate(spec, 0);
    const auto schema = spec.schema();
    const ProfileSelection a{AttributeValue::categorical(1), AttributeValue::categorical(2), AttributeValue::categorical(0)};
    const ProfileSelection b{AttributeValue::categorical(0), AttributeValue::categorical(1), AttributeValue::categorical(1)};
    const auto r = choiceProbability(preferenceMatrixFrom(sim.data, sim.trueBeta), schema, a, b);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u;
    const Vector dx = schema.encode(a) - schema.encode(b);
    double wins = 0.0;
    for (Eigen::Index i = 0; i < sim.trueBeta.rows(); ++i) wins += u(rng) < logistic(sim.trueBeta.row(i).dot(dx));
    EXPECT_NEAR(r.mean, wins / static_cast<double>(spec.M), 0.02);
}

TEST(Majority, UnanimousAndRescalingInvariant) {
    const auto schema = binarySchema(2);
    const ProfileSelection a{AttributeValue::categorical(1), AttributeValue::categorical(0)};
    const ProfileSelection b{AttributeValue::categorical(0), AttributeValue::categorical(0)};
    EXPECT_EQ(majorityPreference(pmOf((Matrix(3, 2) << 1, 0, 2, 5, 0.1, -1).finished()), schema, a, b).fracPositive, 1.0);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> scale(0.1, 10);
    Matrix beta(200, 2);
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta.data()[i] = n01(rng);
    Matrix scaled = beta;
    for (Eigen::Index i = 0; i < beta.rows(); ++i) scaled.row(i) *= scale(rng);
    const auto x = majorityPreference(pmOf(beta), schema, a, b), y = majorityPreference(pmOf(scaled), schema, a, b);
    EXPECT_EQ(x.fracPositive, y.fracPositive);
    EXPECT_EQ(x.fracNegative, y.fracNegative);
}

TEST(Majority, PlantedSignSplit) {
    // Contrast index is beta_1, positive exactly when z_1 > Phi^{-1}(0.45).
    SimSpec spec;
    spec.M = 10000;
    spec.T = 1;
    spec.pZ = 2;
    spec.levels = {2, 2};
    spec.map = BetaMap::twoType(0, -0.12566134685507402, (Vector(2) << 0.8, 0).finished(), (Vector(2) << -0.8, 0).finished());
    const auto sim = generate(spec, 0);
    const auto schema = spec.schema();
    const ProfileSelection a{AttributeValue::categorical(1), AttributeValue::categorical(0)};
    const ProfileSelection b{AttributeValue::categorical(0), AttributeValue::categorical(0)};
    EXPECT_NEAR(majorityPreference(preferenceMatrixFrom(sim.data, sim.trueBeta), schema, a, b).fracPositive, 0.55, 0.03);
}

// ---- indices -------------------------------------------------------------------------

TEST(Slope, ExactLinearFit) {
    const std::vector<double> mids{1.0, std::exp(1.0), std::exp(2.0)};
    const auto r = progressivitySlope(pmOf((Matrix(2, 3) << 0, 0.1, 0.2, 3, 3, 3).finished()), {0, 1, 2}, mids);
    EXPECT_NEAR(r.slope[0], 0.1, 1e-14);
    EXPECT_NEAR(r.slope[1], 0.0, 1e-14);
    EXPECT_DOUBLE_EQ(r.fracPositive, 0.5);
}

TEST(Slope, PlantedSlopeRecovery) {
    const std::vector<double> mids{5, 15, 30, 60, 120, 300};
    const std::size_t m = 16000 / 6;
    std::mt19937_64 rng(13);
    std::normal_distribution<double> noise(0.0, 0.01), level(0.0, 0.5);
    Matrix beta(static_cast<Eigen::Index>(m), 6);
    for (Eigen::Index i = 0; i < beta.rows(); ++i) {
        const double c = level(rng);
        for (Eigen::Index b = 0; b < 6; ++b) beta(i, b) = c + 0.013 * std::log(mids[static_cast<std::size_t>(b)]) + noise(rng);
    }
    const auto r = progressivitySlope(pmOf(beta), {0, 1, 2, 3, 4, 5}, mids);
    EXPECT_NEAR(r.slope.mean(), 0.013, 0.15 * 0.013);
}

TEST(Sensitivity, MeanAbsoluteCoefficient) {
    const auto s = sensitivityIndex(pmOf((Matrix(2, 2) << -0.5, 0.5, 0, 0).finished()), {0, 1});
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_EQ(s[1], 0.0);
}

TEST(Subgroups, UShapeByTercile) {
    SimSpec spec;
    spec.M = 10000;
    spec.T = 1;
    spec.pZ = 2;
    spec.levels = {2};
    spec.map = BetaMap::homogeneous(Vector::Zero(1));
    const auto sim = generate(spec, 0);
    Vector values(sim.data.zRaw.rows());
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = sim.data.zRaw(i, 0) * sim.data.zRaw(i, 0) - 1.0;
    const auto labels = binCovariate(sim.data, sim.data.scaling.names[0]);
    const auto means = groupMeans(values, labels);
    ASSERT_EQ(means.size(), 3u);
    // E[z^2 - 1 | tercile] for a standard normal: outer bins share one value,
    // the middle bin follows from the total mean being zero.
    const double q = 0.4307272992954576;
    const double phi = std::exp(-q * q / 2) / std::sqrt(2 * M_PI);
    const double outer = 3.0 * q * phi;  // E[z^2 | z > q] - 1 with P = 1/3
    for (const auto& g : means) {
        const double expect = g.group.ends_with("T2") ? -2.0 * outer : outer;
        EXPECT_NEAR(g.mean, expect, 0.05) << g.group;
    }
}

TEST(Subgroups, DiscreteCovariateLabels) {
    const auto ds = binaryProfiles(1, 6, 2, 1);
    const auto labels = binCovariate(ds, ds.scaling.names[0]);
    EXPECT_EQ(labels[0], "z1=0");
    EXPECT_EQ(labels[4], "z1=1");
    EXPECT_THROW(binCovariate(ds, "nope"), ConfigError);
}
